#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace dfml {

// Dense row-major matrix. Rows are samples, columns are the flattened
// feature layout (channel-major for images: c*h*w).
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(std::size_t(r) * std::size_t(c), T{}) {}

  T* row(int i) { return a.data() + std::size_t(i) * cols; }
  const T* row(int i) const { return a.data() + std::size_t(i) * cols; }
  T& at(int i, int j) { return a[std::size_t(i) * cols + j]; }
  const T& at(int i, int j) const { return a[std::size_t(i) * cols + j]; }
  std::size_t size() const { return a.size(); }
  T* data() { return a.data(); }
  const T* data() const { return a.data(); }

  void fill(T v) { std::fill(a.begin(), a.end(), v); }
};

using MatD = Mat<double>;

inline int shape_numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

}  // namespace dfml
