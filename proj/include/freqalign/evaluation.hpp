#pragma once

// Correlation metrics for quality prediction, five-parameter logistic
// remapping, and the per-frequency transferability sweep.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "freqalign/training.hpp"

namespace freqalign {

/// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "correlation inputs differ in length: ", x.size(), " vs ", y.size());
  require(x.size() >= 2, "correlation needs at least two samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) fail<NumericError>("correlation undefined: an input has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rank-order correlation with average ranks for ties.
inline double srocc(std::span<const double> pred, std::span<const double> truth) {
  require(pred.size() == truth.size(), "srocc inputs differ in length: ", pred.size(), " vs ", truth.size());
  require(pred.size() >= 2, "srocc needs at least two samples");
  const auto rp = average_ranks(pred), rt = average_ranks(truth);
  return pearson(rp, rt);
}

// ---------------------------------------------------------------------------
// Logistic remapping

using LogisticParams = std::array<double, 5>;

/// beta1 (1/2 - 1 / (1 + exp(beta2 (x - beta3)))) + beta4 x + beta5
inline double logistic_map(const LogisticParams& b, double x) {
  return b[0] * (0.5 - sigmoid(-b[1] * (x - b[2]))) + b[3] * x + b[4];
}

inline std::vector<double> logistic_map(const LogisticParams& b, std::span<const double> x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = logistic_map(b, x[i]);
  return out;
}

struct LogisticFit {
  LogisticParams beta{};
  double mse = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct LogisticOptions {
  int max_iterations = 2000;
  double tolerance = 1e-8;  // relative change of the mean squared error
};

/// Damped Gauss-Newton (Levenberg-Marquardt) least-squares fit of the
/// logistic map from pred to truth. Returns the best iterate with
/// converged = false when the iteration budget runs out.
inline LogisticFit logistic_fit(std::span<const double> pred, std::span<const double> truth,
                                LogisticOptions opt = {}) {
  require(pred.size() == truth.size(), "logistic_fit inputs differ in length");
  require(pred.size() >= 5, "logistic_fit needs at least 5 samples, got ", pred.size());
  const std::size_t n = pred.size();
  const double mean_p = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  const double mean_t = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double var_p = 0.0;
  for (double p : pred) var_p += (p - mean_p) * (p - mean_p);
  const double std_p = std::sqrt(var_p / n);
  if (!(std_p > 0.0)) fail<NumericError>("logistic_fit: predictions are constant, the fit is degenerate");
  const auto [tmin, tmax] = std::minmax_element(truth.begin(), truth.end());

  auto loss = [&](const LogisticParams& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = logistic_map(b, pred[i]) - truth[i];
      s += r * r;
    }
    return s / n;
  };

  LogisticFit fit;
  fit.beta = {*tmax - *tmin, 1.0 / std_p, mean_p, 0.0, mean_t};
  fit.mse = loss(fit.beta);
  double mu = 1e-3;
  Eigen::Matrix<double, Eigen::Dynamic, 5> jac(n, 5);
  Eigen::VectorXd res(n);
  for (fit.iterations = 0; fit.iterations < opt.max_iterations; ++fit.iterations) {
    const auto& b = fit.beta;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = pred[i];
      const double s = sigmoid(-b[1] * (x - b[2]));  // 1 / (1 + exp(b2 (x - b3)))
      const double ds = s * (1.0 - s);
      jac(i, 0) = 0.5 - s;
      jac(i, 1) = b[0] * ds * (x - b[2]);
      jac(i, 2) = -b[0] * ds * b[1];
      jac(i, 3) = x;
      jac(i, 4) = 1.0;
      res(i) = logistic_map(b, x) - truth[i];
    }
    const Eigen::Matrix<double, 5, 5> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 5, 1> grad = jac.transpose() * res;
    bool accepted = false;
    while (mu < 1e16) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      for (int k = 0; k < 5; ++k) a(k, k) += mu * (jtj(k, k) + 1e-12);
      const Eigen::Matrix<double, 5, 1> delta = a.ldlt().solve(-grad);
      LogisticParams trial = b;
      for (int k = 0; k < 5; ++k) trial[k] += delta(k);
      const double l = loss(trial);
      if (std::isfinite(l) && l < fit.mse) {
        const double drop = fit.mse - l;
        fit.beta = trial;
        fit.mse = l;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (drop <= opt.tolerance * std::max(l, 1e-30)) fit.converged = true;
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) fit.converged = true;  // no descent direction left
    if (fit.converged) break;
  }
  if (!fit.converged) log::warn("logistic_fit did not converge in ", opt.max_iterations, " iterations");
  return fit;
}

/// Pearson correlation between logistically remapped predictions and truth.
inline double plcc(std::span<const double> pred, std::span<const double> truth, LogisticFit* fit_out = nullptr) {
  const LogisticFit fit = logistic_fit(pred, truth);
  if (fit_out) *fit_out = fit;
  const auto mapped = logistic_map(fit.beta, pred);
  return pearson(mapped, truth);
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  double srocc = 0.0;
  double plcc = 0.0;
  LogisticParams beta{};
  bool fit_converged = true;
  int n = 0;
  int band = -1;
  std::optional<Matrix> grid;                   // per-frequency target SROCC
  std::optional<std::vector<int>> grid_converged;  // row-major flags
};

inline EvalReport evaluate_predictions(std::span<const double> pred, std::span<const double> truth) {
  EvalReport r;
  r.n = static_cast<int>(pred.size());
  r.srocc = srocc(pred, truth);
  LogisticFit fit;
  r.plcc = plcc(pred, truth, &fit);
  r.beta = fit.beta;
  r.fit_converged = fit.converged;
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = {{"srocc", r.srocc},       {"plcc", r.plcc}, {"beta", r.beta},
                      {"fit_converged", r.fit_converged}, {"n", r.n}, {"band", r.band}};
  if (r.grid) {
    nlohmann::json g = nlohmann::json::array();
    for (Eigen::Index i = 0; i < r.grid->rows(); ++i) {
      std::vector<double> row(r.grid->cols());
      for (Eigen::Index k = 0; k < r.grid->cols(); ++k) row[k] = (*r.grid)(i, k);
      g.push_back(row);
    }
    j["grid"] = g;
  }
  if (r.grid_converged) j["grid_converged"] = *r.grid_converged;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.srocc = j.at("srocc").get<double>();
  r.plcc = j.at("plcc").get<double>();
  r.beta = j.at("beta").get<LogisticParams>();
  r.fit_converged = j.value("fit_converged", true);
  r.n = j.at("n").get<int>();
  r.band = j.value("band", -1);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    Matrix m(static_cast<Eigen::Index>(g.size()), g.empty() ? 0 : static_cast<Eigen::Index>(g[0].size()));
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t k = 0; k < g[i].size(); ++k) m(i, k) = g[i][k].get<double>();
    r.grid = m;
  }
  if (j.contains("grid_converged")) r.grid_converged = j.at("grid_converged").get<std::vector<int>>();
  return r;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path);
  require<DataError>(bool(os), "cannot write ", path.string());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) os << (k ? "," : "") << format_double(m(i, k));
    os << '\n';
  }
}

/// Binary PPM heatmap, `cell` pixels per grid cell, dark blue (low) to yellow (high).
inline void write_heatmap_ppm(const std::filesystem::path& path, const Matrix& m, int cell = 32) {
  std::ofstream os(path, std::ios::binary);
  require<DataError>(bool(os), "cannot write ", path.string());
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  const int h = static_cast<int>(m.rows()) * cell, w = static_cast<int>(m.cols()) * cell;
  os << "P6\n" << w << ' ' << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = hi > lo ? (m(y / cell, x / cell) - lo) / (hi - lo) : 0.5;
      const unsigned char px[3] = {static_cast<unsigned char>(std::lround(255 * v)),
                                   static_cast<unsigned char>(std::lround(40 + 180 * v)),
                                   static_cast<unsigned char>(std::lround(140 * (1.0 - v)))};
      os.write(reinterpret_cast<const char*>(px), 3);
    }
}

// ---------------------------------------------------------------------------
// Per-frequency sweep

enum class SweepMode {
  shared,       // one source-trained extractor, a fresh head per cell
  independent,  // a fresh source-only model per cell
};

inline std::string_view to_string(SweepMode m) { return m == SweepMode::shared ? "shared" : "independent"; }
inline SweepMode parse_sweep_mode(std::string_view s) {
  if (s == "shared") return SweepMode::shared;
  if (s == "independent") return SweepMode::independent;
  fail("unknown sweep mode '", s, "' (expected shared or independent)");
}

struct SweepConfig {
  SweepMode mode = SweepMode::shared;
  int pretrain_steps = 200;  // extractor training on source, all frequencies at once
  int head_steps = 200;      // full-batch steps per cell head
  int head_hidden = 32;
  double head_lr = 3e-3;
  std::uint64_t seed = 1;
};

struct SweepResult {
  Matrix grid;                 // target SROCC per cell
  std::vector<int> converged;  // row-major flags
};

namespace detail {

// Per-cell features: rows = samples, cols = channels.
inline Matrix cell_features(const std::vector<FrequencyTensor>& chunks, int row, int col) {
  int n = 0;
  for (const auto& f : chunks) n += f.shape().batch;
  const int c = chunks.front().shape().channels;
  Matrix x(n, c);
  int r = 0;
  for (const auto& f : chunks)
    for (int b = 0; b < f.shape().batch; ++b, ++r)
      for (int k = 0; k < c; ++k) x(r, k) = f.coeffs(b, k, row, col);
  return x;
}

inline std::vector<FrequencyTensor> dataset_frequencies(Model& model, const DomainDataset& ds, int crop,
                                                        int chunk = 64) {
  std::vector<FrequencyTensor> out;
  for (int first = 0; first < ds.size(); first += chunk) {
    const int count = std::min(chunk, ds.size() - first);
    out.push_back(dct2(model.forward_features(stack_eval(ds, first, count, crop))));
  }
  return out;
}

inline std::vector<double> scores_of(const DomainDataset& ds) {
  std::vector<double> y;
  for (const auto& it : ds.items) y.push_back(it.score);
  return y;
}

// SROCC that reports 0 instead of failing on constant predictions.
inline double safe_srocc(std::span<const double> pred, std::span<const double> truth, bool& ok) {
  try {
    return srocc(pred, truth);
  } catch (const NumericError&) {
    ok = false;
    return 0.0;
  }
}

/// Trains a fresh distribution head on standardised source features and
/// returns target SROCC.
inline double fit_cell_head(const Matrix& xs, std::span<const double> ys, const Matrix& xt,
                            std::span<const double> yt, const SweepConfig& cfg, int bins, std::uint64_t seed,
                            bool& converged) {
  const Eigen::RowVectorXd mean = xs.colwise().mean();
  Eigen::RowVectorXd sd = ((xs.rowwise() - mean).array().square().colwise().sum() / std::max<Eigen::Index>(1, xs.rows() - 1)).sqrt();
  for (Eigen::Index k = 0; k < sd.size(); ++k)
    if (!(sd(k) > 1e-12)) sd(k) = 1.0;
  const Matrix zs = (xs.rowwise() - mean).array().rowwise() / sd.array();
  const Matrix zt = (xt.rowwise() - mean).array().rowwise() / sd.array();

  nn::Mlp head("cell", static_cast<int>(xs.cols()), {cfg.head_hidden, cfg.head_hidden}, bins);
  std::mt19937_64 rng(seed);
  head.init(rng);
  std::vector<nn::Param*> params;
  head.collect(params);
  nn::Adam adam({cfg.head_lr, 0.9, 0.999, 1e-8, 0.0});
  const Vector centers = bin_centers(bins);
  std::vector<double> losses;
  for (int step = 0; step < cfg.head_steps; ++step) {
    for (auto* p : params) p->zero_grad();
    RegressionOutput out;
    out.probs = softmax(head.forward(zs));
    out.scores = out.probs * centers;
    const LossGrad g = regression_loss(out, ys, RegressionLossKind::mse, centers);
    losses.push_back(g.value);
    head.backward(g.grad);
    adam.step(params);
  }
  const int k = std::max(1, cfg.head_steps / 10);
  converged = cfg.head_steps > k && std::isfinite(losses.back()) &&
              std::abs(losses.back() - losses[losses.size() - 1 - k]) <= 1e-2 * losses[losses.size() - 1 - k];
  const Vector pred = softmax(head.forward(zt)) * centers;
  return safe_srocc(std::span(pred.data(), pred.size()), yt, converged);
}

}  // namespace detail

/// Trains `model`'s extractor and head on the source domain using one band.
inline void pretrain_source(Model& model, const DomainDataset& source, const BandWindow& window, int steps,
                            int batch, double lr, std::uint64_t seed) {
  if (steps <= 0) return;
  TrainConfig tc;
  tc.source_only = true;
  tc.batch = batch;
  tc.adam.lr = lr;
  nn::Adam adam(tc.adam);
  const int crop = model.config().input_size;
  PairedSampler sampler(source, source, batch, crop, seed);
  for (int t = 0; t < steps; ++t) {
    compute_gradients(model, sampler.batch(t), window, tc, 0.0);
    adam.step(model.parameters());
  }
}

/// Source-trained regression on each single DCT cell, scored on the target.
/// `base` fixes the extractor architecture; its window is ignored.
inline SweepResult frequency_sweep(const DomainDataset& source, const DomainDataset& target, ModelConfig base,
                                   const SweepConfig& cfg, int batch = 16, double lr = 1e-3) {
  require<DataError>(source.size() >= 2 && target.size() >= 2, "frequency sweep needs at least two items per domain");
  const int grid = base.grid();
  const int cells = grid * grid;
  const auto ys = detail::scores_of(source);
  const auto yt = detail::scores_of(target);
  const int bins = base.head == HeadKind::distribution ? base.bins : 5;
  SweepResult res{Matrix::Zero(grid, grid), std::vector<int>(cells, 0)};

  if (cfg.mode == SweepMode::shared) {
    ModelConfig mc = base;
    mc.window = cells;
    Model model(mc, cfg.seed);
    const Trajectory traj = make_trajectory(TrajectoryKind::left_to_right, grid, grid);
    pretrain_source(model, source, {traj, cells, 0}, cfg.pretrain_steps, batch, lr, cfg.seed);
    const auto fs = detail::dataset_frequencies(model, source, mc.input_size);
    const auto ft = detail::dataset_frequencies(model, target, mc.input_size);
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j) {
        bool ok = true;
        res.grid(i, j) = detail::fit_cell_head(detail::cell_features(fs, i, j), ys, detail::cell_features(ft, i, j),
                                               yt, cfg, bins, mix_seed({cfg.seed, 77, std::uint64_t(i * grid + j)}), ok);
        res.converged[i * grid + j] = ok;
      }
    return res;
  }

  const Trajectory traj = make_trajectory(TrajectoryKind::left_to_right, grid, grid);
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      ModelConfig mc = base;
      mc.window = 1;
      const std::uint64_t seed = mix_seed({cfg.seed, 78, std::uint64_t(i * grid + j)});
      Model model(mc, seed);
      const BandWindow w{traj, 1, i * grid + j};
      pretrain_source(model, source, w, cfg.pretrain_steps, batch, lr, seed);
      const auto pred = predict_scores(model, target, w, mc.input_size);
      bool ok = cfg.pretrain_steps > 0;
      res.grid(i, j) = detail::safe_srocc(pred, yt, ok);
      res.converged[i * grid + j] = ok;
    }
  return res;
}

}  // namespace freqalign
