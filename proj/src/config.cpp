#include "qcmp/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qcmp {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace

const std::vector<Config::KeyDef>& Config::known_keys() {
  using T = Config::Type;
  static const std::vector<KeyDef> keys = {
      // data
      {"data_dir", T::Str, ""},
      {"eval_negatives", T::Int, "99"},
      // model
      {"embed_dim", T::Int, "64"},
      {"num_heads", T::Int, "2"},
      {"num_layers", T::Int, "2"},
      {"dropout", T::Real, "0.5"},
      {"max_raw_len", T::Int, "50"},
      {"max_aug_len", T::Int, "60"},
      {"max_insert", T::Int, "5"},
      // collaborative sampling
      {"sim_threshold", T::Real, "0.2"},
      {"stage1_K", T::Int, "30"},
      {"stage2_K", T::Int, "10"},
      // stage-one corruption
      {"corrupt_keep", T::Real, "0.4"},
      {"corrupt_delete", T::Real, "0.5"},
      {"corrupt_insert", T::Real, "0.1"},
      // contrastive objectives
      {"alpha", T::Real, "0.2"},
      {"beta", T::Real, "0.05"},
      {"q_temp", T::Real, "0.5"},
      {"sim_temp", T::Real, "1.0"},
      {"symmetric_cl", T::Bool, "false"},
      {"heuristic_ratio", T::Real, "0.5"},
      // training
      {"learning_rate", T::Real, "0.001"},
      {"batch_size", T::Int, "256"},
      {"stage1_epochs", T::Int, "30"},
      {"stage2_epochs", T::Int, "100"},
      {"patience", T::Int, "10"},
      {"grad_clip", T::Real, "5.0"},
      {"seed", T::Int, "42"},
      {"variant", T::Str, "full"},
      {"stage1_valid_frac", T::Real, "0.05"},
      {"init_encoder_from_stage1", T::Bool, "true"},
      {"cache_frozen_encodings", T::Bool, "true"},
      // simulated test noise
      {"noise_keep", T::Real, "0.4"},
      {"noise_delete", T::Real, "0.3"},
      {"noise_insert", T::Real, "0.3"},
  };
  return keys;
}

Config Config::defaults() {
  Config c;
  for (const auto& k : known_keys()) c.values_[k.name] = k.default_value;
  return c;
}

const Config::KeyDef& Config::def_for(const std::string& key) const {
  for (const auto& k : known_keys()) {
    if (k.name == key) return k;
  }
  throw std::runtime_error("unknown config key: '" + key + "'");
}

void Config::set(const std::string& key, const std::string& value) {
  const KeyDef& def = def_for(key);
  std::string v = trim(value);
  switch (def.type) {
    case Type::Int: {
      try {
        size_t pos = 0;
        (void)std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "' expects an integer, got '" + v + "'");
      }
      break;
    }
    case Type::Real: {
      try {
        size_t pos = 0;
        (void)std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw std::runtime_error("config key '" + key + "' expects a real number, got '" + v + "'");
      }
      break;
    }
    case Type::Bool: {
      bool b;
      if (!parse_bool(v, b)) {
        throw std::runtime_error("config key '" + key + "' expects a boolean, got '" + v + "'");
      }
      break;
    }
    case Type::Str:
      break;
  }
  values_[key] = v;
}

void Config::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path);
}

void Config::apply_override(const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::runtime_error("override must be key=value: '" + assignment + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

int Config::get_int(const std::string& key) const {
  def_for(key);
  return static_cast<int>(std::stoll(values_.at(key)));
}

double Config::get_real(const std::string& key) const {
  def_for(key);
  return std::stod(values_.at(key));
}

bool Config::get_bool(const std::string& key) const {
  def_for(key);
  bool b = false;
  parse_bool(values_.at(key), b);
  return b;
}

const std::string& Config::get_str(const std::string& key) const {
  def_for(key);
  return values_.at(key);
}

std::string Config::snapshot() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

}  // namespace qcmp
