#pragma once

// Distances between source and target band features used to score how
// transferable a frequency band is.

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "freqalign/tensor.hpp"

namespace freqalign {

enum class MetricKind { mmd, coral, adversarial };

inline std::string_view to_string(MetricKind k) {
  switch (k) {
    case MetricKind::mmd: return "mmd";
    case MetricKind::coral: return "coral";
    case MetricKind::adversarial: return "adversarial";
  }
  return "?";
}

inline MetricKind parse_metric(std::string_view s) {
  if (s == "mmd") return MetricKind::mmd;
  if (s == "coral") return MetricKind::coral;
  if (s == "adversarial" || s == "adv") return MetricKind::adversarial;
  fail("unknown metric '", s, "' (expected mmd, coral or adversarial)");
}

struct Bandwidth {
  enum class Policy { median, fixed };
  Policy policy = Policy::median;
  double sigma = 1.0;

  static Bandwidth median() { return {}; }
  static Bandwidth fixed(double s) { return {Policy::fixed, s}; }
};

namespace detail {

inline void check_sets(const Matrix& x, const Matrix& y, int min_rows, std::string_view what) {
  require(x.rows() >= min_rows && y.rows() >= min_rows, what, " needs at least ", min_rows,
          " sample(s) per set, got ", x.rows(), " and ", y.rows());
  require(x.cols() == y.cols(), what, " dimension mismatch: ", x.cols(), " vs ", y.cols());
}

// Exactly symmetric in its arguments: (a - b)^2 == (b - a)^2 in IEEE arithmetic.
inline double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return s;
}

// Sums in ascending order so the result depends only on the multiset of terms.
inline double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace detail

/// Median of all pairwise Euclidean distances over the pooled set, or 1 when
/// that median is zero.
inline double median_bandwidth(const Matrix& x, const Matrix& y) {
  Matrix pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j)
      d.push_back(std::sqrt(detail::squared_distance(pooled, i, pooled, j)));
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t h = d.size() / 2;
  const double med = d.size() % 2 == 1 ? d[h] : 0.5 * (d[h - 1] + d[h]);
  return med > 0.0 ? med : 1.0;
}

/// Mean Gaussian kernel value over all (row of a, row of b) pairs.
inline double mean_gaussian_kernel(const Matrix& a, const Matrix& b, double sigma) {
  const double g = -1.0 / (2.0 * sigma * sigma);
  std::vector<double> k;
  k.reserve(static_cast<std::size_t>(a.rows() * b.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) k.push_back(std::exp(g * detail::squared_distance(a, i, b, j)));
  return detail::sorted_sum(k) / static_cast<double>(k.size());
}

/// Biased squared MMD with a Gaussian kernel exp(-|a-b|^2 / (2 sigma^2)),
/// clamped at zero. Symmetric and permutation invariant bit-for-bit.
inline double mmd(const Matrix& x, const Matrix& y, Bandwidth bw = Bandwidth::median()) {
  detail::check_sets(x, y, 1, "mmd");
  const double sigma = bw.policy == Bandwidth::Policy::fixed ? bw.sigma : median_bandwidth(x, y);
  require(sigma > 0.0 && std::isfinite(sigma), "mmd bandwidth must be positive, got ", sigma);
  const double kxx = mean_gaussian_kernel(x, x, sigma);
  const double kyy = mean_gaussian_kernel(y, y, sigma);
  const double kxy = mean_gaussian_kernel(x, y, sigma);
  return std::max(0.0, (kxx + kyy) - 2.0 * kxy);
}

/// Sample covariance (n - 1 normalisation), d x d.
inline Matrix covariance(const Matrix& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

/// Squared Frobenius distance between the two sample covariances, / (4 d^2).
inline double coral(const Matrix& x, const Matrix& y) {
  detail::check_sets(x, y, 2, "coral");
  const double d = static_cast<double>(x.cols());
  return (covariance(x) - covariance(y)).squaredNorm() / (4.0 * d * d);
}

inline constexpr double kProbabilityFloor = 1e-7;

/// Clamps probabilities into [1e-7, 1 - 1e-7]; returns how many were moved.
inline int clamp_probabilities(std::span<double> p) {
  int clamped = 0;
  for (double& v : p) {
    const double c = std::clamp(v, kProbabilityFloor, 1.0 - kProbabilityFloor);
    if (c != v) ++clamped;
    v = c;
  }
  return clamped;
}

/// Domain-classification loss -mean log(1 - D(source)) - mean log D(target),
/// with the discriminator predicting 1 for target.
inline double adv_metric(std::span<const double> d_source, std::span<const double> d_target) {
  require(!d_source.empty() && !d_target.empty(), "adv_metric needs non-empty discriminator outputs");
  std::vector<double> s(d_source.begin(), d_source.end()), t(d_target.begin(), d_target.end());
  const int clamped = clamp_probabilities(s) + clamp_probabilities(t);
  if (clamped > 0) log::warn("adv_metric clamped ", clamped, " discriminator output(s) into [1e-7, 1-1e-7]");
  double ls = 0.0, lt = 0.0;
  for (double v : s) ls += std::log(1.0 - v);
  for (double v : t) lt += std::log(v);
  return -ls / static_cast<double>(s.size()) - lt / static_cast<double>(t.size());
}

// ---------------------------------------------------------------------------
// Interval averaging

/// Per-band record of measured metric values over one movement interval.
struct TransferabilityRecord {
  int band = 0;
  int interval_length = 0;
  std::vector<double> values;
  double sum = 0.0;

  void add(double v) {
    values.push_back(v);
    sum += v;
  }
  bool complete() const { return static_cast<int>(values.size()) == interval_length; }
  double mean() const {
    require<StateError>(!values.empty(), "interval for band ", band, " has no recorded values");
    return sum / static_cast<double>(values.size());
  }
};

inline double interval_average(std::span<const double> values) {
  require(!values.empty(), "interval_average over an empty interval");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

inline double interval_average(const TransferabilityRecord& r) { return r.mean(); }

}  // namespace freqalign
