#pragma once

// Self-describing textual container for checkpoints: a magic string, a
// format version, ordered key/value entries and named tensors. Real values
// are written as C hexfloats ("%a"), which round-trip bit-exactly.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "btn/tensor.hpp"

namespace btn {

inline std::string format_real(real v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", static_cast<double>(v));
  return buf;
}

inline real parse_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw std::runtime_error("parse_real: cannot parse '" + s + "'");
  return static_cast<real>(v);
}

class Archive {
 public:
  static constexpr const char* kMagic = "btn-checkpoint";
  static constexpr int kVersion = 1;

  void put(const std::string& key, const std::string& value) {
    if (value.find_first_of(" \n") != std::string::npos) {
      throw std::invalid_argument("Archive: value must not contain spaces: " + value);
    }
    entries_.emplace_back(key, value);
  }
  void put_int(const std::string& key, long long v) { put(key, std::to_string(v)); }
  void put_u64(const std::string& key, std::uint64_t v) { put(key, std::to_string(v)); }
  void put_real(const std::string& key, real v) { put(key, format_real(v)); }
  void put_bool(const std::string& key, bool v) { put(key, v ? "1" : "0"); }

  void put_tensor(const std::string& name, const Tensor& t) { tensors_.emplace_back(name, t); }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return true;
    return false;
  }
  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    throw std::runtime_error("Archive: missing key '" + key + "'");
  }
  long long get_int(const std::string& key) const { return std::stoll(get(key)); }
  std::uint64_t get_u64(const std::string& key) const { return std::stoull(get(key)); }
  real get_real(const std::string& key) const { return parse_real(get(key)); }
  bool get_bool(const std::string& key) const { return get(key) == "1"; }

  bool has_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors_)
      if (n == name) return true;
    return false;
  }
  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors_)
      if (n == name) return t;
    throw std::runtime_error("Archive: missing tensor '" + name + "'");
  }
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("Archive: cannot write " + path);
    out << kMagic << " " << kVersion << "\n";
    for (const auto& [k, v] : entries_) out << "kv " << k << " " << v << "\n";
    for (const auto& [name, t] : tensors_) {
      out << "tensor " << name << " " << t.rank();
      for (int i = 0; i < t.rank(); ++i) out << " " << t.dim(i);
      out << "\n";
      const auto& vals = t.values();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        if (i) out << " ";
        out << format_real(vals[i]);
      }
      out << "\n";
    }
    out << "end\n";
    if (!out) throw std::runtime_error("Archive: write failed for " + path);
  }

  static Archive load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("Archive: cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != kMagic) throw std::runtime_error("Archive: bad magic in " + path);
    if (version != kVersion) {
      throw std::runtime_error("Archive: unsupported format version " + std::to_string(version));
    }
    Archive a;
    std::string tok;
    while (in >> tok) {
      if (tok == "end") return a;
      if (tok == "kv") {
        std::string k, v;
        in >> k >> v;
        a.entries_.emplace_back(k, v);
      } else if (tok == "tensor") {
        std::string name;
        int rank = 0;
        in >> name >> rank;
        std::vector<int> shape(static_cast<std::size_t>(rank));
        long long n = 1;
        for (auto& d : shape) {
          in >> d;
          n *= d;
        }
        std::vector<real> vals(static_cast<std::size_t>(n));
        std::string s;
        for (auto& v : vals) {
          in >> s;
          v = parse_real(s);
        }
        a.tensors_.emplace_back(name, Tensor(std::move(shape), std::move(vals)));
      } else {
        throw std::runtime_error("Archive: unexpected token '" + tok + "' in " + path);
      }
      if (!in) throw std::runtime_error("Archive: truncated file " + path);
    }
    throw std::runtime_error("Archive: missing end marker in " + path);
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

}  // namespace btn
