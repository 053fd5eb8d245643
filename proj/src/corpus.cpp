#include "qcmp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace qcmp {

namespace {

struct RawRecord {
  int user;
  int item;
  double timestamp;
  long long order;  // input position, breaks timestamp ties
};

int dense_id(std::unordered_map<std::string, int>& map, std::vector<std::string>& raw,
             const std::string& key) {
  auto it = map.find(key);
  if (it != map.end()) return it->second;
  int id = static_cast<int>(raw.size()) + 1;
  map.emplace(key, id);
  raw.push_back(key);
  return id;
}

}  // namespace

uint64_t InteractionCorpus::content_hash() const {
  // FNV-1a over the dense sequences.
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  mix(static_cast<uint64_t>(num_items));
  mix(static_cast<uint64_t>(sequences.size()));
  for (const auto& seq : sequences) {
    mix(seq.size());
    for (int it : seq) mix(static_cast<uint64_t>(it));
  }
  return h;
}

void NoiseRatio::validate() const {
  if (keep < 0 || del < 0 || insert < 0) throw std::runtime_error("noise ratio must be nonnegative");
  if (std::abs(keep + del + insert - 1.0) > 1e-9) {
    throw std::runtime_error("noise ratio must sum to 1");
  }
}

InteractionCorpus load_interactions(const std::string& path, InputFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interaction file: " + path);

  InteractionCorpus corpus;
  std::unordered_map<std::string, int> user_map, item_map;
  std::vector<RawRecord> records;

  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty()) continue;  // blank lines permitted

    if (format == InputFormat::Triples) {
      if (tokens.size() != 3) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": expected 'user item timestamp'");
      }
      double ts;
      try {
        size_t pos = 0;
        ts = std::stod(tokens[2], &pos);
        if (pos != tokens[2].size()) throw std::invalid_argument(tokens[2]);
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad timestamp '" +
                                 tokens[2] + "'");
      }
      int u = dense_id(user_map, corpus.user_raw, tokens[0]);
      int i = dense_id(item_map, corpus.item_raw, tokens[1]);
      records.push_back({u, i, ts, lineno});
    } else {
      if (tokens.size() < 2) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": expected 'user item1 item2 ...'");
      }
      int u = dense_id(user_map, corpus.user_raw, tokens[0]);
      if (u != static_cast<int>(corpus.user_raw.size())) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": duplicate user '" +
                                 tokens[0] + "' in sequence-lines input");
      }
      corpus.sequences.emplace_back();
      auto& seq = corpus.sequences.back();
      for (size_t t = 1; t < tokens.size(); ++t) {
        seq.push_back(dense_id(item_map, corpus.item_raw, tokens[t]));
      }
      corpus.num_records += static_cast<long long>(seq.size());
    }
  }

  if (format == InputFormat::Triples) {
    if (records.empty()) throw std::runtime_error("empty interaction file: " + path);
    std::stable_sort(records.begin(), records.end(), [](const RawRecord& a, const RawRecord& b) {
      if (a.user != b.user) return a.user < b.user;
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      return a.order < b.order;
    });
    corpus.sequences.resize(corpus.user_raw.size());
    for (const auto& r : records) corpus.sequences[r.user - 1].push_back(r.item);
    corpus.num_records = static_cast<long long>(records.size());
  } else if (corpus.sequences.empty()) {
    throw std::runtime_error("empty interaction file: " + path);
  }

  corpus.num_items = static_cast<int>(corpus.item_raw.size());
  return corpus;
}

InteractionCorpus five_core_filter(const InteractionCorpus& corpus) {
  int u_count = corpus.num_users();
  int i_count = corpus.num_items;
  std::vector<std::vector<int>> seqs = corpus.sequences;
  std::vector<bool> user_alive(u_count, true), item_alive(i_count + 1, true);

  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<long long> item_freq(i_count + 1, 0);
    for (int u = 0; u < u_count; ++u) {
      if (!user_alive[u]) continue;
      if (static_cast<int>(seqs[u].size()) < 5) {
        user_alive[u] = false;
        changed = true;
        continue;
      }
      for (int it : seqs[u]) ++item_freq[it];
    }
    std::vector<bool> item_drop(i_count + 1, false);
    for (int i = 1; i <= i_count; ++i) {
      if (item_alive[i] && item_freq[i] > 0 && item_freq[i] < 5) {
        item_alive[i] = false;
        item_drop[i] = true;
        changed = true;
      }
    }
    if (changed) {
      for (int u = 0; u < u_count; ++u) {
        if (!user_alive[u]) continue;
        auto& s = seqs[u];
        s.erase(std::remove_if(s.begin(), s.end(), [&](int it) { return item_drop[it]; }), s.end());
      }
    }
  }

  // Re-densify surviving ids, preserving order.
  InteractionCorpus out;
  std::vector<int> item_new(i_count + 1, 0);
  for (int u = 0; u < u_count; ++u) {
    if (!user_alive[u] || seqs[u].empty()) continue;
    out.sequences.push_back({});
    out.user_raw.push_back(corpus.user_raw.empty() ? std::to_string(u + 1) : corpus.user_raw[u]);
    auto& dst = out.sequences.back();
    dst.reserve(seqs[u].size());
    for (int it : seqs[u]) {
      if (item_new[it] == 0) {
        item_new[it] = static_cast<int>(out.item_raw.size()) + 1;
        out.item_raw.push_back(corpus.item_raw.empty() ? std::to_string(it)
                                                       : corpus.item_raw[it - 1]);
      }
      dst.push_back(item_new[it]);
    }
    out.num_records += static_cast<long long>(dst.size());
  }
  out.num_items = static_cast<int>(out.item_raw.size());
  if (out.sequences.empty()) throw std::runtime_error("5-core filtering removed the whole corpus");
  return out;
}

std::vector<SplitSequence> leave_one_out_split(const InteractionCorpus& corpus, int max_len) {
  std::vector<SplitSequence> splits;
  splits.reserve(corpus.sequences.size());
  for (int u = 1; u <= corpus.num_users(); ++u) {
    const auto& seq = corpus.sequences[u - 1];
    if (seq.size() < 3) {
      throw std::runtime_error("sequence of user " + std::to_string(u) +
                               " is shorter than 3; run 5-core filtering first");
    }
    SplitSequence s;
    s.user = u;
    size_t n_train = seq.size() - 2;
    size_t start = n_train > static_cast<size_t>(max_len) ? n_train - max_len : 0;
    s.train_items.assign(seq.begin() + start, seq.begin() + n_train);
    s.valid_target = seq[seq.size() - 2];
    s.test_target = seq[seq.size() - 1];
    splits.push_back(std::move(s));
  }
  return splits;
}

namespace {

std::vector<int> sample_uninteracted(const std::unordered_set<int>& interacted, int num_items,
                                     int n, Rng& rng) {
  long long candidates = static_cast<long long>(num_items) - static_cast<long long>(interacted.size());
  if (candidates < n) {
    throw std::runtime_error("fewer than " + std::to_string(n) + " uninteracted items available");
  }
  std::vector<int> out;
  out.reserve(n);
  std::unordered_set<int> chosen;
  while (static_cast<int>(out.size()) < n) {
    int item = rng.uniform_int(1, num_items + 1);
    if (interacted.count(item) || chosen.count(item)) continue;
    chosen.insert(item);
    out.push_back(item);
  }
  return out;
}

}  // namespace

void sample_eval_negatives(SplitSequence& split, const InteractionCorpus& corpus, int n,
                           uint64_t seed) {
  const auto& full = corpus.sequences[split.user - 1];
  std::unordered_set<int> interacted(full.begin(), full.end());
  Rng rng_valid = derive_rng(seed, {static_cast<uint64_t>(split.user), 1});
  Rng rng_test = derive_rng(seed, {static_cast<uint64_t>(split.user), 2});
  split.neg_valid = sample_uninteracted(interacted, corpus.num_items, n, rng_valid);
  split.neg_test = sample_uninteracted(interacted, corpus.num_items, n, rng_test);
}

SplitSequence simulate_noise(const SplitSequence& split, const NoiseRatio& ratio, int num_items,
                             uint64_t seed, int max_len) {
  ratio.validate();
  Rng rng = derive_rng(seed, {static_cast<uint64_t>(split.user), 0x6e6f697365ULL});
  SplitSequence out = split;
  out.train_items.clear();
  for (int item : split.train_items) {
    double r = rng.uniform_real();
    if (r < ratio.keep) {
      out.train_items.push_back(item);
    } else if (r < ratio.keep + ratio.del) {
      // dropped
    } else {
      out.train_items.push_back(rng.uniform_int(1, num_items + 1));
      out.train_items.push_back(item);
    }
  }
  if (static_cast<int>(out.train_items.size()) > max_len) {
    out.train_items.erase(out.train_items.begin(),
                          out.train_items.end() - max_len);
  }
  return out;
}

CorpusStats corpus_stats(const InteractionCorpus& corpus) {
  CorpusStats s;
  s.users = corpus.num_users();
  s.items = corpus.num_items;
  s.records = corpus.num_records;
  s.avg_len = corpus.avg_length();
  s.density = corpus.density();
  return s;
}

void save_corpus_dir(const InteractionCorpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::ofstream seq_out(dir + "/sequences.txt");
  for (int u = 1; u <= corpus.num_users(); ++u) {
    seq_out << u;
    for (int it : corpus.sequences[u - 1]) seq_out << ' ' << it;
    seq_out << '\n';
  }

  auto write_map = [&](const std::string& name, const std::vector<std::string>& raw) {
    std::ofstream out(dir + "/" + name);
    for (size_t i = 0; i < raw.size(); ++i) out << raw[i] << ' ' << (i + 1) << '\n';
  };
  write_map("user_map.txt", corpus.user_raw);
  write_map("item_map.txt", corpus.item_raw);

  CorpusStats s = corpus_stats(corpus);
  std::ofstream st(dir + "/stats.txt");
  st << "users\titems\trecords\tavg_len\tdensity\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d\t%d\t%lld\t%.4f\t%.4f%%\n", s.users, s.items, s.records,
                s.avg_len, s.density * 100.0);
  st << buf;
}

InteractionCorpus load_corpus_dir(const std::string& dir) {
  // sequences.txt already carries dense ids; parse them literally so the
  // persisted id maps stay aligned.
  std::string path = dir + "/sequences.txt";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus directory: " + dir);
  InteractionCorpus corpus;
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    long long user;
    if (!(ss >> user)) continue;
    if (user != static_cast<long long>(corpus.sequences.size()) + 1) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": users must be dense and in order");
    }
    corpus.sequences.emplace_back();
    auto& seq = corpus.sequences.back();
    int item;
    while (ss >> item) {
      if (item < 1) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad item id");
      }
      seq.push_back(item);
      corpus.num_items = std::max(corpus.num_items, item);
    }
    if (seq.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty sequence");
    }
    corpus.num_records += static_cast<long long>(seq.size());
  }
  if (corpus.sequences.empty()) throw std::runtime_error("empty corpus directory: " + dir);

  // Restore raw-id tables so analyses can refer back to original ids.
  auto read_map = [&](const std::string& name, std::vector<std::string>& raw, int count) {
    std::ifstream map_in(dir + "/" + name);
    std::vector<std::string> table(count);
    if (map_in) {
      std::string raw_id;
      int dense;
      while (map_in >> raw_id >> dense) {
        if (dense >= 1 && dense <= count) table[dense - 1] = raw_id;
        if (dense > count) {
          table.resize(dense);
          table[dense - 1] = raw_id;
        }
      }
    }
    raw = std::move(table);
  };
  read_map("user_map.txt", corpus.user_raw, corpus.num_users());
  read_map("item_map.txt", corpus.item_raw, corpus.num_items);
  corpus.num_items = std::max<int>(corpus.num_items, static_cast<int>(corpus.item_raw.size()));
  return corpus;
}

}  // namespace qcmp
