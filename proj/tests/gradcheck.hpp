#pragma once

// Central-difference check of the full training objective on a tiny model
// (4 channels, 4x4 frequency grid). Extractor parameters see the adversarial
// term through the reversal layer, so their reference gradient combines the
// loss parts as w_S dL_S + w_T dL_T - lambda w_adv dL_adv. Coordinates whose
// stencil straddles a ReLU or max-pool kink are skipped.

#include <random>
#include <string>
#include <vector>

#include "freqalign/training.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradCheck {
  double max_relative = 0.0;
  int checked = 0;
  int skipped = 0;  // coordinates whose step straddles a ReLU or max-pool kink
  std::string worst;
};

inline freqalign::ModelConfig tiny_model_config() {
  freqalign::ModelConfig m;
  m.input_size = 8;
  m.conv_channels = {3, 4};
  m.pool_blocks = 1;
  m.window = 3;
  m.hidden = 6;
  m.disc_hidden = 5;
  return m;
}

inline freqalign::DomainBatch random_batch(std::mt19937_64& rng, int n, int size) {
  freqalign::DomainBatch b;
  b.source_images = freqalign::Tensor4({n, 1, size, size});
  b.target_images = freqalign::Tensor4({n, 1, size, size});
  std::uniform_real_distribution<double> u(0.0, 1.0), s(1.0, 5.0);
  for (double& v : b.source_images.values()) v = u(rng);
  for (double& v : b.target_images.values()) v = u(rng);
  for (int i = 0; i < n; ++i) b.source_scores.push_back(s(rng));
  return b;
}

inline GradCheck check_objective_gradients(std::uint64_t seed, int per_param = 4, double h = 1e-5,
                                           freqalign::TargetLossKind target = freqalign::TargetLossKind::entropy) {
  using namespace freqalign;
  std::mt19937_64 rng(seed);
  const ModelConfig mc = tiny_model_config();
  Model model(mc, seed);
  // zero biases leave dead samples exactly on a ReLU kink
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (auto* p : model.parameters())
    if (p->name.ends_with("bias"))
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += jitter(rng);
  const DomainBatch batch = random_batch(rng, 3, mc.input_size);
  TrainConfig tc;
  tc.w_source = 1.0;
  tc.w_adv = 0.7;
  tc.w_target = 0.5;
  tc.target_loss = target;
  const double lambda = 0.8;
  const BandWindow window{make_trajectory(TrajectoryKind::zigzag, mc.grid(), mc.grid()), mc.window, 2};

  auto objective = [&](const LossBreakdown& l, double adv_sign) {
    return l.w_source * l.source + l.w_target * l.target + adv_sign * l.w_adv * l.adversarial;
  };
  const LossBreakdown base = compute_gradients(model, batch, window, tc, lambda).losses;
  std::vector<Matrix> analytic;
  for (auto* p : model.parameters()) analytic.push_back(p->grad);
  const std::size_t n_extractor = model.extractor_parameters().size();

  GradCheck out;
  const auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    nn::Param* p = params[k];
    const double adv_sign = k < n_extractor ? -lambda : 1.0;
    for (int s = 0; s < per_param; ++s) {
      const Eigen::Index idx = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p->value.size()));
      double& v = p->value.data()[idx];
      const double saved = v;
      auto at = [&](double offset) {
        v = saved + offset;
        return objective(compute_gradients(model, batch, window, tc, lambda).losses, adv_sign);
      };
      const double up = at(h), dn = at(-h), up2 = at(2 * h), dn2 = at(-2 * h);
      v = saved;
      const double mid = objective(base, adv_sign);
      // smooth: consecutive slope differences agree; a kink within 2h breaks that
      const double s0 = (dn - dn2) / h, s1 = (mid - dn) / h, s2 = (up - mid) / h, s3 = (up2 - up) / h;
      const double tol = 2e-5 * std::max({std::abs(s0), std::abs(s1), std::abs(s2), std::abs(s3)}) + 1e-9;
      if (std::abs((s2 - s1) - (s1 - s0)) > tol || std::abs((s2 - s1) - (s3 - s2)) > tol) {
        ++out.skipped;
        continue;
      }
      const double fd = (up - dn) / (2.0 * h);
      const double g = analytic[k].data()[idx];
      const double rel = relative_error(g, fd, 1e-6);
      ++out.checked;
      if (rel > out.max_relative) {
        out.max_relative = rel;
        out.worst = p->name + "[" + std::to_string(idx) + "] analytic " + std::to_string(g) + " fd " + std::to_string(fd);
      }
    }
  }
  return out;
}

}  // namespace oracle
