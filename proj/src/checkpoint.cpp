#include "qcmp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace qcmp {

namespace {

constexpr char kMagic[8] = {'Q', 'C', 'M', 'P', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_i64(std::ostream& out, int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_mat(std::ostream& out, const ag::Mat& m) {
  write_i64(out, m.rows());
  write_i64(out, m.cols());
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::istream& in) {
  uint64_t v;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
int64_t read_i64(std::istream& in) {
  int64_t v;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
double read_f64(std::istream& in) {
  double v;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

std::string read_string(std::istream& in) {
  uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

ag::Mat read_mat(std::istream& in) {
  int64_t rows = read_i64(in), cols = read_i64(in);
  ag::Mat m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  return m;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_string(out, stage);
  write_string(out, config_text);
  write_i64(out, epoch);
  write_u64(out, rng_state);
  write_i64(out, adam_t);
  write_f64(out, best_metric);
  write_u64(out, tensors.size());
  for (const Tensor& t : tensors) {
    write_string(out, t.name);
    write_mat(out, t.value);
    write_mat(out, t.m);
    write_mat(out, t.v);
  }
  if (!out) throw std::runtime_error("short write while saving checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("corrupt checkpoint (bad magic): " + path);
  }
  uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint version mismatch: got " + std::to_string(version) +
                             ", expected " + std::to_string(kVersion));
  }
  Checkpoint ck;
  ck.stage = read_string(in);
  ck.config_text = read_string(in);
  ck.epoch = read_i64(in);
  ck.rng_state = read_u64(in);
  ck.adam_t = read_i64(in);
  ck.best_metric = read_f64(in);
  uint64_t n = read_u64(in);
  ck.tensors.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    ck.tensors[i].name = read_string(in);
    ck.tensors[i].value = read_mat(in);
    ck.tensors[i].m = read_mat(in);
    ck.tensors[i].v = read_mat(in);
  }
  if (!in) throw std::runtime_error("corrupt checkpoint (truncated): " + path);
  return ck;
}

void Checkpoint::capture(const std::vector<ag::Param*>& params) {
  tensors.clear();
  tensors.reserve(params.size());
  for (const ag::Param* p : params) {
    tensors.push_back({p->name, p->value, p->m, p->v});
  }
}

void Checkpoint::restore(const std::vector<ag::Param*>& params) const {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const Tensor& t : tensors) by_name[t.name] = &t;
  for (ag::Param* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint is missing tensor '" + p->name + "'");
    }
    const Tensor& t = *it->second;
    if (t.value.rows() != p->value.rows() || t.value.cols() != p->value.cols()) {
      throw std::runtime_error("checkpoint tensor '" + p->name + "' has mismatched shape");
    }
    p->value = t.value;
    p->m = t.m;
    p->v = t.v;
    p->grad.setZero();
  }
}

}  // namespace qcmp
