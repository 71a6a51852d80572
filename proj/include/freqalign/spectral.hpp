#pragma once

// Frequency decomposition of feature maps: per-channel 2D DCT, scan
// trajectories over the coefficient grid, and sliding-window band extraction.

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "freqalign/tensor.hpp"

namespace freqalign {

enum class Normalization {
  // coeffs[i,j] = sum_h sum_w x[h,w] cos(pi i (h+1/2)/H) cos(pi j (w+1/2)/W)
  paper_unnormalized,
  // Orthonormal DCT-II; invertible by its transpose.
  orthonormal,
};

struct FrequencyTensor {
  Tensor4 coeffs;
  Normalization normalization = Normalization::paper_unnormalized;

  const Shape4& shape() const { return coeffs.shape(); }
};

namespace detail {

// Row i holds basis function i sampled at positions 0..n-1.
inline Matrix dct_basis(int n, Normalization norm) {
  Matrix b(n, n);
  for (int i = 0; i < n; ++i) {
    double scale = 1.0;
    if (norm == Normalization::orthonormal) scale = std::sqrt((i == 0 ? 1.0 : 2.0) / n);
    for (int h = 0; h < n; ++h)
      b(i, h) = scale * std::cos(std::numbers::pi * i / n * (h + 0.5));
  }
  return b;
}

inline void check_finite(const Tensor4& t, std::string_view what) {
  const Shape4& s = t.shape();
  for (int n = 0; n < s.batch; ++n)
    for (int c = 0; c < s.channels; ++c)
      for (int h = 0; h < s.rows; ++h)
        for (int w = 0; w < s.cols; ++w)
          if (!std::isfinite(t(n, c, h, w)))
            fail<NumericError>("non-finite ", what, " value ", t(n, c, h, w), " at index [", n, ", ", c,
                               ", ", h, ", ", w, "]");
}

// out_plane = left * in_plane * right^T for every (n, c) plane.
inline Tensor4 separable_apply(const Tensor4& in, const Matrix& left, const Matrix& right) {
  const Shape4& s = in.shape();
  Tensor4 out(s);
  using Plane = Eigen::Map<const Matrix>;
  using PlaneOut = Eigen::Map<Matrix>;
  for (int n = 0; n < s.batch; ++n)
    for (int c = 0; c < s.channels; ++c) {
      Plane x(in.plane(n, c), s.rows, s.cols);
      PlaneOut y(out.plane(n, c), s.rows, s.cols);
      y.noalias() = left * x * right.transpose();
    }
  return out;
}

}  // namespace detail

/// Per-channel 2D DCT over the spatial axes, computed as two separable 1-D
/// transforms. Throws NumericError naming the first non-finite element.
inline FrequencyTensor dct2(const Tensor4& map, Normalization norm = Normalization::paper_unnormalized) {
  require(map.rows() >= 1 && map.cols() >= 1, "dct2 needs a non-empty spatial grid, got ", map.shape());
  detail::check_finite(map, "feature");
  const Matrix bh = detail::dct_basis(map.rows(), norm);
  const Matrix bw = detail::dct_basis(map.cols(), norm);
  return {detail::separable_apply(map, bh, bw), norm};
}

/// Adjoint of dct2: maps a gradient on the coefficients back onto the feature map.
inline Tensor4 dct2_backward(const Tensor4& grad_coeffs, Normalization norm = Normalization::paper_unnormalized) {
  const Matrix bh = detail::dct_basis(grad_coeffs.rows(), norm);
  const Matrix bw = detail::dct_basis(grad_coeffs.cols(), norm);
  return detail::separable_apply(grad_coeffs, bh.transpose(), bw.transpose());
}

/// Inverse transform. Only defined for orthonormal coefficients.
inline Tensor4 idct2(const FrequencyTensor& freq) {
  if (freq.normalization != Normalization::orthonormal)
    fail("idct2 requires orthonormal coefficients; paper-unnormalized mode is unsupported");
  return dct2_backward(freq.coeffs, Normalization::orthonormal);
}

// ---------------------------------------------------------------------------
// Trajectories

enum class TrajectoryKind { left_to_right, up_to_down, zigzag };

inline std::string_view to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::left_to_right: return "left-to-right";
    case TrajectoryKind::up_to_down: return "up-to-down";
    case TrajectoryKind::zigzag: return "zigzag";
  }
  return "?";
}

inline TrajectoryKind parse_trajectory(std::string_view s) {
  if (s == "left-to-right") return TrajectoryKind::left_to_right;
  if (s == "up-to-down") return TrajectoryKind::up_to_down;
  if (s == "zigzag") return TrajectoryKind::zigzag;
  fail("unknown trajectory kind '", s, "' (expected left-to-right, up-to-down or zigzag)");
}

struct GridIndex {
  int row = 0;
  int col = 0;
  auto operator<=>(const GridIndex&) const = default;
};

struct Trajectory {
  TrajectoryKind kind = TrajectoryKind::zigzag;
  int rows = 0;
  int cols = 0;
  std::vector<GridIndex> order;

  int size() const { return static_cast<int>(order.size()); }
  const GridIndex& operator[](int p) const { return order[p]; }
};

/// Scan order over an rows x cols grid. The zig-zag follows the JPEG
/// convention: the first anti-diagonal step goes right, (0,0) -> (0,1) -> (1,0).
inline Trajectory make_trajectory(TrajectoryKind kind, int rows, int cols) {
  require(rows >= 1 && cols >= 1, "trajectory grid must be at least 1x1, got ", rows, "x", cols);
  Trajectory t{kind, rows, cols, {}};
  t.order.reserve(static_cast<std::size_t>(rows) * cols);
  switch (kind) {
    case TrajectoryKind::left_to_right:
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t.order.push_back({i, j});
      break;
    case TrajectoryKind::up_to_down:
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) t.order.push_back({i, j});
      break;
    case TrajectoryKind::zigzag:
      for (int s = 0; s <= rows + cols - 2; ++s) {
        const int lo = std::max(0, s - (cols - 1));
        const int hi = std::min(s, rows - 1);
        if (s % 2 == 0) {
          for (int i = hi; i >= lo; --i) t.order.push_back({i, s - i});
        } else {
          for (int i = lo; i <= hi; ++i) t.order.push_back({i, s - i});
        }
      }
      break;
    default:
      fail("unknown trajectory kind ", static_cast<int>(kind));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Sliding-window bands

struct BandWindow {
  Trajectory trajectory;
  int size = 1;   // frequencies per window (m)
  int start = 0;  // first trajectory position covered (j)

  int cells() const { return trajectory.size(); }
  int end() const { return start + size; }
};

/// Number of distinct windows of the given size on a grid of `cells` frequencies.
inline int band_count(int cells, int window) { return cells - window + 1; }

inline void validate_window(const BandWindow& w, const Shape4& grid) {
  require(w.trajectory.rows == grid.rows && w.trajectory.cols == grid.cols, "band trajectory is for a ",
          w.trajectory.rows, "x", w.trajectory.cols, " grid but coefficients are ", grid.rows, "x", grid.cols);
  require(w.size >= 1, "band window size must be positive, got ", w.size);
  require(w.start >= 0 && w.end() <= w.cells(), "band window [", w.start, ", ", w.end(),
          ") is out of range for ", w.cells(), " trajectory positions");
}

/// Flattens the window into one row per sample. Layout is channel-major:
/// column c*m + q holds channel c at trajectory position start + q.
inline Matrix extract_band(const FrequencyTensor& freq, const BandWindow& window) {
  const Shape4& s = freq.shape();
  validate_window(window, s);
  const int m = window.size;
  Matrix out(s.batch, static_cast<Eigen::Index>(s.channels) * m);
  for (int n = 0; n < s.batch; ++n)
    for (int c = 0; c < s.channels; ++c)
      for (int q = 0; q < m; ++q) {
        const GridIndex g = window.trajectory[window.start + q];
        out(n, c * m + q) = freq.coeffs(n, c, g.row, g.col);
      }
  return out;
}

/// Scatters a band gradient back onto a zero coefficient grid of the given shape.
inline Tensor4 extract_band_backward(const Matrix& grad_band, const BandWindow& window, const Shape4& grid) {
  validate_window(window, grid);
  const int m = window.size;
  require(grad_band.rows() == grid.batch && grad_band.cols() == static_cast<Eigen::Index>(grid.channels) * m,
          "band gradient has shape ", grad_band.rows(), "x", grad_band.cols(), ", expected ", grid.batch, "x",
          grid.channels * m);
  Tensor4 out(grid);
  for (int n = 0; n < grid.batch; ++n)
    for (int c = 0; c < grid.channels; ++c)
      for (int q = 0; q < m; ++q) {
        const GridIndex g = window.trajectory[window.start + q];
        out(n, c, g.row, g.col) += grad_band(n, c * m + q);
      }
  return out;
}

}  // namespace freqalign
