#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dfml/errors.hpp"
#include "dfml/mat.hpp"

namespace dfml {

// Minimal little-endian binary archive for checkpoints and episode files.
class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }

  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    raw(s.data(), s.size());
  }
  void vec_f64(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void vec_i32(const std::vector<int>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(int));
  }
  void mat(const MatD& m) {
    i32(m.rows);
    i32(m.cols);
    raw(m.a.data(), m.a.size() * sizeof(double));
  }

 private:
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open '" + path + "' for reading");
  }

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    std::string s(u32(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::vector<double> vec_f64() {
    std::vector<double> v(u64());
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  std::vector<int> vec_i32() {
    std::vector<int> v(u64());
    raw(v.data(), v.size() * sizeof(int));
    return v;
  }
  MatD mat() {
    MatD m;
    m.rows = i32();
    m.cols = i32();
    m.a.resize(std::size_t(m.rows) * m.cols);
    raw(m.a.data(), m.a.size() * sizeof(double));
    return m;
  }

 private:
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), n);
    if (!in_) throw IoError("unexpected end of archive");
  }
  std::ifstream in_;
};

}  // namespace dfml
