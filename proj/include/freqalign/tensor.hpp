#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "freqalign/error.hpp"

namespace freqalign {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Shape4 {
  int batch = 0;
  int channels = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(batch) * channels * rows * cols;
  }
  std::size_t plane() const { return static_cast<std::size_t>(rows) * cols; }
  bool operator==(const Shape4&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const Shape4& s) {
  return os << '(' << s.batch << ", " << s.channels << ", " << s.rows << ", " << s.cols << ')';
}

// Dense NCHW tensor. Used for images, feature maps and DCT coefficient grids.
class Tensor4 {
public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {
    require(shape.batch >= 0 && shape.channels >= 0 && shape.rows >= 0 && shape.cols >= 0,
            "negative tensor dimension in ", shape);
  }

  const Shape4& shape() const { return shape_; }
  int batch() const { return shape_.batch; }
  int channels() const { return shape_.channels; }
  int rows() const { return shape_.rows; }
  int cols() const { return shape_.cols; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.channels + c) * shape_.rows + h) * shape_.cols + w;
  }
  double& operator()(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  double operator()(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  // Contiguous H*W plane of sample n, channel c.
  double* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const double* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  // Contiguous C*H*W block of sample n.
  double* sample(int n) { return data_.data() + offset(n, 0, 0, 0); }
  const double* sample(int n) const { return data_.data() + offset(n, 0, 0, 0); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor4&) const = default;

private:
  Shape4 shape_{};
  std::vector<double> data_;
};

// Rows [first, first + count) of a batch.
inline Tensor4 slice_batch(const Tensor4& t, int first, int count) {
  require(first >= 0 && count >= 0 && first + count <= t.batch(), "batch slice out of range");
  Shape4 s = t.shape();
  s.batch = count;
  Tensor4 out(s);
  const std::size_t per = t.shape().channels * t.shape().plane();
  std::copy(t.sample(first), t.sample(first) + per * count, out.data());
  return out;
}

inline Tensor4 concat_batch(const Tensor4& a, const Tensor4& b) {
  Shape4 sa = a.shape(), sb = b.shape();
  require(sa.channels == sb.channels && sa.rows == sb.rows && sa.cols == sb.cols,
          "cannot concatenate batches of shape ", sa, " and ", sb);
  Shape4 s = sa;
  s.batch = sa.batch + sb.batch;
  Tensor4 out(s);
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

// FNV-1a over the raw bytes; used to prove that read-only passes leave state untouched.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace freqalign
