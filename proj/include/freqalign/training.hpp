#pragma once

// Loss assembly and the optimisation loop coupling the model, the DCT band
// extraction, the transferability metric and the frequency scheduler.

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freqalign/data.hpp"
#include "freqalign/metrics.hpp"
#include "freqalign/model.hpp"
#include "freqalign/scheduler.hpp"
#include "freqalign/spectral.hpp"

namespace freqalign {

enum class RegressionLossKind { mse, cross_entropy };
enum class TargetLossKind { none, entropy };

inline std::string_view to_string(RegressionLossKind k) { return k == RegressionLossKind::mse ? "mse" : "cross-entropy"; }
inline RegressionLossKind parse_regression_loss(std::string_view s) {
  if (s == "mse") return RegressionLossKind::mse;
  if (s == "cross-entropy") return RegressionLossKind::cross_entropy;
  fail("unknown regression loss '", s, "' (expected mse or cross-entropy)");
}

inline std::string_view to_string(TargetLossKind k) { return k == TargetLossKind::none ? "none" : "entropy"; }
inline TargetLossKind parse_target_loss(std::string_view s) {
  if (s == "none") return TargetLossKind::none;
  if (s == "entropy") return TargetLossKind::entropy;
  fail("unknown target loss '", s, "' (expected none or entropy)");
}

// ---------------------------------------------------------------------------
// Losses. Each returns its value and the gradient w.r.t. the head logits.

struct LossGrad {
  double value = 0.0;
  Matrix grad;  // same shape as the logits it differentiates
};

/// Domain-classification loss on discriminator probabilities (clamped like adv_metric).
inline double adversarial_loss(std::span<const double> d_source, std::span<const double> d_target) {
  return adv_metric(d_source, d_target);
}

/// Value and logit gradient of adversarial_loss. The first n_source logits are source samples.
inline LossGrad adversarial_loss_grad(const Vector& logits, int n_source) {
  const int n = static_cast<int>(logits.size());
  const int n_target = n - n_source;
  require(n_source >= 1 && n_target >= 1, "adversarial loss needs samples from both domains");
  std::vector<double> p(n);
  for (int i = 0; i < n; ++i) p[i] = sigmoid(logits(i));
  LossGrad out;
  out.value = adversarial_loss(std::span(p).first(n_source), std::span(p).subspan(n_source));
  out.grad.resize(n, 1);
  // d/dz -log(1 - sigmoid z) = sigmoid z;  d/dz -log sigmoid z = sigmoid z - 1
  for (int i = 0; i < n_source; ++i) out.grad(i, 0) = p[i] / n_source;
  for (int i = n_source; i < n; ++i) out.grad(i, 0) = (p[i] - 1.0) / n_target;
  return out;
}

/// Linear interpolation of a score between its two neighbouring bin centres.
inline Matrix discretize_scores(std::span<const double> truth, const Vector& centers) {
  const int bins = static_cast<int>(centers.size());
  Matrix q = Matrix::Zero(static_cast<Eigen::Index>(truth.size()), bins);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double y = std::clamp(truth[i], centers(0), centers(bins - 1));
    int k = 0;
    while (k < bins - 2 && y > centers(k + 1)) ++k;
    const double a = (y - centers(k)) / (centers(k + 1) - centers(k));
    q(i, k) = 1.0 - a;
    q(i, k + 1) = a;
  }
  return q;
}

/// Source regression loss over the first truth.size() rows of `out`.
inline LossGrad regression_loss(const RegressionOutput& out, std::span<const double> truth, RegressionLossKind kind,
                                const Vector& centers) {
  const int n = static_cast<int>(truth.size());
  require(n >= 1 && out.scores.size() >= n, "regression loss: ", n, " targets for ", out.scores.size(),
          " predictions");
  const bool linear = out.probs.size() == 0;
  LossGrad g;
  g.grad = Matrix::Zero(n, linear ? 1 : out.probs.cols());
  if (kind == RegressionLossKind::mse) {
    for (int i = 0; i < n; ++i) {
      const double r = out.scores(i) - truth[i];
      g.value += r * r;
      const double ds = 2.0 * r / n;
      if (linear) {
        g.grad(i, 0) = ds;
      } else {
        for (Eigen::Index k = 0; k < out.probs.cols(); ++k)
          g.grad(i, k) = ds * out.probs(i, k) * (centers(k) - out.scores(i));
      }
    }
    g.value /= n;
    return g;
  }
  require(!linear, "cross-entropy regression loss needs the distribution head");
  const Matrix q = discretize_scores(truth, centers);
  for (int i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < q.cols(); ++k) {
      const double p = std::max(out.probs(i, k), 1e-300);
      g.value -= q(i, k) * std::log(p);
      g.grad(i, k) = (out.probs(i, k) - q(i, k)) / n;
    }
  g.value /= n;
  return g;
}

/// Mean entropy of the predicted score distribution; the baseline target-domain
/// self-supervised term.
inline LossGrad entropy_loss(const Matrix& probs) {
  const auto n = probs.rows();
  require(n >= 1 && probs.cols() >= 2, "entropy loss needs a distribution head and at least one sample");
  LossGrad g;
  g.grad.resize(n, probs.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double p = probs(i, k);
      if (p > 0.0) h -= p * std::log(p);
    }
    g.value += h;
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double p = probs(i, k);
      g.grad(i, k) = p > 0.0 ? -p * (std::log(p) + h) / static_cast<double>(n) : 0.0;
    }
  }
  g.value /= static_cast<double>(n);
  return g;
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch = 16;
  int crop = 64;
  nn::AdamConfig adam{};
  double w_source = 1.0;
  double w_adv = 1.0;
  double w_target = 1.0;
  TargetLossKind target_loss = TargetLossKind::none;
  RegressionLossKind regression_loss = RegressionLossKind::mse;
  bool augment = true;
  bool source_only = false;  // no alignment terms; the target is forwarded for measurement only
  std::uint64_t seed = 1;

  void validate() const {
    require<ConfigError>(batch >= 1, "train: batch must be positive");
    require<ConfigError>(crop >= 1, "train: crop must be positive");
    require<ConfigError>(adam.lr > 0.0, "train: learning rate must be positive");
    require<ConfigError>(adam.weight_decay >= 0.0, "train: weight decay must be nonnegative");
    require<ConfigError>(w_source >= 0.0 && w_adv >= 0.0 && w_target >= 0.0, "train: loss weights must be nonnegative");
  }
};

struct LossBreakdown {
  double source = 0.0;       // L_S
  double adversarial = 0.0;  // L_adv
  double target = 0.0;       // L_T
  double total = 0.0;        // w_S L_S + w_adv L_adv + w_T L_T
  double w_source = 1.0;
  double w_adv = 1.0;
  double w_target = 0.0;
};

/// Everything one forward/backward pass produces besides parameter gradients.
struct ForwardPass {
  LossBreakdown losses;
  Matrix band;        // detached band features, source rows first
  Vector d_source;    // discriminator probabilities
  Vector d_target;
  int n_source = 0;
};

/// True when the step optimises something that depends on the target domain.
inline bool aligns(const TrainConfig& cfg) {
  return !cfg.source_only &&
         (cfg.w_adv != 0.0 || (cfg.target_loss != TargetLossKind::none && cfg.w_target != 0.0));
}

/// Forward both domains through G, take the DCT band, evaluate every loss and
/// leave the GRL-coupled gradients in the model's parameter grads. Without an
/// active alignment term only the source pass is differentiated and the target
/// is forwarded afterwards for measurement, so the step is exactly a
/// supervised source step.
inline ForwardPass compute_gradients(Model& model, const DomainBatch& batch, const BandWindow& window,
                                     const TrainConfig& cfg, double lambda) {
  const int ns = batch.source_images.batch();
  const int nt = batch.target_images.batch();
  const bool joint = aligns(cfg);
  model.zero_grad();
  ForwardPass fp;
  fp.n_source = ns;
  fp.losses.w_source = cfg.w_source;
  fp.losses.w_adv = cfg.source_only ? 0.0 : cfg.w_adv;
  fp.losses.w_target = !cfg.source_only && cfg.target_loss != TargetLossKind::none ? cfg.w_target : 0.0;

  const Tensor4 images = joint ? concat_batch(batch.source_images, batch.target_images) : batch.source_images;
  const FrequencyTensor freq = dct2(model.forward_features(images), Normalization::paper_unnormalized);
  const Matrix band = extract_band(freq, window);
  const int n = static_cast<int>(band.rows());

  const RegressionOutput reg = model.regress(band);
  const LossGrad ls = regression_loss(reg, batch.source_scores, cfg.regression_loss, model.centers());
  fp.losses.source = ls.value;
  Matrix g_reg = Matrix::Zero(n, ls.grad.cols());
  g_reg.topRows(ns) = cfg.w_source * ls.grad;

  Matrix d_band = Matrix::Zero(n, band.cols());
  if (joint) {
    if (cfg.target_loss == TargetLossKind::entropy) {
      const LossGrad lt = entropy_loss(reg.probs.bottomRows(nt));
      fp.losses.target = lt.value;
      g_reg.bottomRows(nt) = cfg.w_target * lt.grad;
    }
    const Vector z = model.discriminate_logits(band);
    const LossGrad la = adversarial_loss_grad(z, ns);
    fp.losses.adversarial = la.value;
    fp.d_source.resize(ns);
    fp.d_target.resize(nt);
    for (int i = 0; i < n; ++i) {
      const double p = std::clamp(sigmoid(z(i)), kProbabilityFloor, 1.0 - kProbabilityFloor);
      (i < ns ? fp.d_source(i) : fp.d_target(i - ns)) = p;
    }
    d_band += grl_backward(model.discriminate_backward(cfg.w_adv * la.grad.col(0)), lambda);
    fp.band = band;
  }
  d_band += model.regress_backward(g_reg);
  const Tensor4 d_freq = extract_band_backward(d_band, window, freq.shape());
  model.backward_features(dct2_backward(d_freq, Normalization::paper_unnormalized));

  if (!joint) {
    // detached target pass: values for the log and the transferability metric only
    const Matrix target_band =
        extract_band(dct2(model.forward_features(batch.target_images), Normalization::paper_unnormalized), window);
    fp.band.resize(ns + nt, band.cols());
    fp.band << band, target_band;
    if (cfg.target_loss == TargetLossKind::entropy) fp.losses.target = entropy_loss(model.regress(target_band).probs).value;
    const Vector z = model.discriminate_logits(fp.band);
    fp.d_source.resize(ns);
    fp.d_target.resize(nt);
    std::vector<double> p(ns + nt);
    for (int i = 0; i < ns + nt; ++i) p[i] = sigmoid(z(i));
    for (int i = 0; i < ns + nt; ++i) {
      const double c = std::clamp(p[i], kProbabilityFloor, 1.0 - kProbabilityFloor);
      (i < ns ? fp.d_source(i) : fp.d_target(i - ns)) = c;
    }
    fp.losses.adversarial = adversarial_loss(std::span(p).first(ns), std::span(p).subspan(ns));
  }
  fp.losses.total = fp.losses.w_source * fp.losses.source + fp.losses.w_adv * fp.losses.adversarial +
                    fp.losses.w_target * fp.losses.target;
  return fp;
}

/// Transferability of the current band, measured on detached features.
inline double measure_transferability(MetricKind kind, const ForwardPass& fp) {
  const Matrix src = fp.band.topRows(fp.n_source);
  const Matrix tgt = fp.band.bottomRows(fp.band.rows() - fp.n_source);
  switch (kind) {
    case MetricKind::mmd: return mmd(src, tgt);
    case MetricKind::coral: return coral(src, tgt);
    case MetricKind::adversarial:
      return adv_metric(std::span(fp.d_source.data(), fp.d_source.size()),
                        std::span(fp.d_target.data(), fp.d_target.size()));
  }
  fail("unknown metric kind");
}

struct LogRow {
  long long t = 0;
  Phase phase = Phase::warmup;
  int band = 0;
  LossBreakdown losses;
  double epsilon = 0.0;
  double lr = 0.0;
};

inline void write_log_header(std::ostream& os) { os << "t,phase,j,L_S,L_adv,L_T,epsilon,lr\n"; }

inline void write_log_row(std::ostream& os, const LogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%s,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.t, to_string(r.phase).data(), r.band,
                r.losses.source, r.losses.adversarial, r.losses.target, r.epsilon, r.lr);
  os << buf;
}

struct StepResult {
  LogRow row;
  SchedulerState scheduler;
};

/// Owns the model, optimiser and scheduler for one training run.
class Trainer {
public:
  Trainer(const ModelConfig& model_cfg, const SchedulerConfig& sched_cfg, const TrainConfig& train_cfg,
          const DomainDataset& source, const DomainDataset& target)
      : train_cfg_(train_cfg),
        model_(checked(model_cfg, sched_cfg, train_cfg), train_cfg.seed),
        adam_(train_cfg.adam),
        scheduler_(sched_cfg),
        trajectory_(make_trajectory(sched_cfg.trajectory, model_.config().grid(), model_.config().grid())),
        sampler_(source, target, train_cfg.batch, train_cfg.crop, train_cfg.seed, train_cfg.augment) {
    require<DataError>(source.role == DomainRole::source, "training source dataset is marked as ", to_string(source.role));
    require<DataError>(target.role == DomainRole::target, "training target dataset is marked as ", to_string(target.role));
    require<ConfigError>(train_cfg.crop == model_.config().input_size, "train: crop size ", train_cfg.crop,
                         " differs from the model input size ", model_.config().input_size);
  }

  Model& model() { return model_; }
  nn::Adam& optimizer() { return adam_; }
  FrequencyScheduler& scheduler() { return scheduler_; }
  const FrequencyScheduler& scheduler() const { return scheduler_; }
  const TrainConfig& config() const { return train_cfg_; }
  const PairedSampler& sampler() const { return sampler_; }
  const Trajectory& trajectory() const { return trajectory_; }
  const std::vector<LogRow>& log() const { return log_; }

  BandWindow window(int band) const { return {trajectory_, model_.config().window, band}; }

  /// Band the trained heads are evaluated on: j* once selected, else the current band.
  int evaluation_band() const { return scheduler_.j_star() >= 0 ? scheduler_.j_star() : scheduler_.band(); }

  StepResult train_step() { return train_step(sampler_.batch(scheduler_.iteration())); }

  StepResult train_step(const DomainBatch& batch) {
    require<StateError>(!scheduler_.complete(), "training already reached T_a = ", scheduler_.config().total);
    const long long t = scheduler_.iteration();
    const int band = scheduler_.band();
    const Phase phase = scheduler_.phase();
    ForwardPass fp = compute_gradients(model_, batch, window(band), train_cfg_, model_.config().lambda_at(t));
    const LossBreakdown& l = fp.losses;
    if (!std::isfinite(l.source) || !std::isfinite(l.adversarial) || !std::isfinite(l.target))
      fail<NumericError>("non-finite loss at iteration ", t, " on band ", band, ": L_S = ", l.source,
                         ", L_adv = ", l.adversarial, ", L_T = ", l.target);
    adam_.step(model_.parameters());
    const double eps = measure_transferability(scheduler_.config().metric, fp);
    scheduler_.step(eps);
    LogRow row{t, phase, band, l, eps, adam_.config().lr};
    log_.push_back(row);
    return {row, scheduler_.state()};
  }

  /// Runs to T_a. The callback sees every step and may persist checkpoints.
  void run(const std::function<void(const StepResult&)>& on_step = {}) {
    while (!scheduler_.complete()) {
      const StepResult r = train_step();
      if (on_step) on_step(r);
    }
  }

  /// Replaces optimiser and scheduler state, e.g. from a checkpoint.
  void restore(const SchedulerState& state, long long adam_steps) {
    scheduler_ = FrequencyScheduler(scheduler_.config(), state);
    adam_.set_steps(adam_steps);
  }

private:
  static const ModelConfig& checked(const ModelConfig& m, const SchedulerConfig& s, const TrainConfig& t) {
    t.validate();
    require<ConfigError>(m.window == s.window, "model window ", m.window, " differs from scheduler window ", s.window);
    require<ConfigError>(m.grid() * m.grid() == s.grid_cells, "scheduler grid has ", s.grid_cells,
                         " cells but the extractor emits a ", m.grid(), "x", m.grid(), " grid");
    return m;
  }

  TrainConfig train_cfg_;
  Model model_;
  nn::Adam adam_;
  FrequencyScheduler scheduler_;
  Trajectory trajectory_;
  PairedSampler sampler_;
  std::vector<LogRow> log_;
};

/// Predicted scores for every item of a dataset on one band (centre crops).
inline std::vector<double> predict_scores(Model& model, const DomainDataset& ds, const BandWindow& window, int crop,
                                          int chunk = 64) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (int first = 0; first < ds.size(); first += chunk) {
    const int count = std::min(chunk, ds.size() - first);
    const Tensor4 feats = model.forward_features(stack_eval(ds, first, count, crop));
    const Matrix band = extract_band(dct2(feats), window);
    const RegressionOutput r = model.regress(band);
    for (int i = 0; i < count; ++i) out.push_back(r.scores(i));
  }
  return out;
}

}  // namespace freqalign
