#pragma once

// Trainable pieces: feature extractor G, regression head R, domain
// discriminator D, and the gradient reversal coupling between G and D.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "freqalign/nn.hpp"
#include "freqalign/spectral.hpp"

namespace freqalign {

enum class HeadKind {
  distribution,  // FC + softmax over score bins, score = expectation over bin centres
  linear,        // plain scalar output
};

inline std::string_view to_string(HeadKind h) { return h == HeadKind::distribution ? "distribution" : "linear"; }

inline HeadKind parse_head(std::string_view s) {
  if (s == "distribution") return HeadKind::distribution;
  if (s == "linear") return HeadKind::linear;
  fail("unknown regression head '", s, "' (expected distribution or linear)");
}

struct ModelConfig {
  int input_size = 64;
  int input_channels = 1;
  std::vector<int> conv_channels{8, 16, 32, 64};
  int pool_blocks = 3;  // leading conv blocks followed by 2x2 average pooling
  int window = 10;      // frequencies per band fed to both heads
  int hidden = 64;      // regression head width
  int disc_hidden = 64;
  HeadKind head = HeadKind::distribution;
  int bins = 5;
  double band_scale = 0.0;  // multiplier on band features before the heads; 0 means 1/(H*W), so DC = GAP
  double grl_lambda = 1.0;
  int grl_ramp = 0;  // iterations over which lambda ramps linearly from 0; 0 means constant

  int grid() const { return input_size >> pool_blocks; }
  int channels() const { return conv_channels.empty() ? 0 : conv_channels.back(); }
  int band_dim() const { return channels() * window; }
  double effective_band_scale() const {
    return band_scale > 0.0 ? band_scale : 1.0 / static_cast<double>(grid() * grid());
  }
  double lambda_at(long long t) const {
    if (grl_ramp <= 0) return grl_lambda;
    return grl_lambda * std::min(1.0, static_cast<double>(t) / grl_ramp);
  }

  void validate() const {
    require<ConfigError>(!conv_channels.empty(), "model: at least one conv block is required");
    for (int c : conv_channels) require<ConfigError>(c >= 1, "model: conv channel counts must be positive");
    require<ConfigError>(input_channels >= 1, "model: input_channels must be positive");
    require<ConfigError>(pool_blocks >= 0 && pool_blocks <= static_cast<int>(conv_channels.size()),
                         "model: pool_blocks = ", pool_blocks, " exceeds the number of conv blocks");
    require<ConfigError>(input_size >= 1 && (input_size % (1 << pool_blocks)) == 0, "model: input size ",
                         input_size, " is not divisible by 2^pool_blocks = ", 1 << pool_blocks);
    require<ConfigError>(window >= 1 && window <= grid() * grid(), "model: window ", window,
                         " exceeds the ", grid(), "x", grid(), " frequency grid");
    require<ConfigError>(hidden >= 1 && disc_hidden >= 1, "model: head widths must be positive");
    require<ConfigError>(head == HeadKind::linear || bins >= 2, "model: distribution head needs >= 2 bins");
    require<ConfigError>(grl_lambda >= 0.0, "model: grl_lambda must be nonnegative");
    require<ConfigError>(band_scale >= 0.0, "model: band_scale must be nonnegative");
  }
};

// ---------------------------------------------------------------------------
// Gradient reversal

/// Identity in the forward direction.
inline const Matrix& grl_forward(const Matrix& x) { return x; }

/// Scales the upstream gradient by -lambda.
inline Matrix grl_backward(const Matrix& grad, double lambda) {
  require(lambda >= 0.0, "gradient reversal lambda must be nonnegative, got ", lambda);
  return -lambda * grad;
}

// ---------------------------------------------------------------------------

/// Conv blocks (conv3x3 -> ReLU [-> avgpool2]) producing a (C, grid, grid) map.
class FeatureExtractor {
public:
  FeatureExtractor() = default;
  explicit FeatureExtractor(const ModelConfig& cfg) : cfg_(cfg) {
    int in = cfg.input_channels;
    for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
      convs_.emplace_back("G.conv" + std::to_string(i + 1), in, cfg.conv_channels[i]);
      in = cfg.conv_channels[i];
    }
    relus_.resize(convs_.size());
    pools_.resize(cfg.pool_blocks);
  }

  void init(std::mt19937_64& rng) {
    for (auto& c : convs_) c.init(rng);
  }

  Tensor4 forward(const Tensor4& images) {
    require(images.channels() == cfg_.input_channels && images.rows() == cfg_.input_size &&
                images.cols() == cfg_.input_size,
            "extractor expects images of shape (n, ", cfg_.input_channels, ", ", cfg_.input_size, ", ",
            cfg_.input_size, "), got ", images.shape());
    Tensor4 h = images;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = relus_[i].forward(convs_[i].forward(h));
      if (i < pools_.size()) h = pools_[i].forward(h);
    }
    return h;
  }

  void backward(const Tensor4& grad) {
    Tensor4 g = grad;
    for (std::size_t i = convs_.size(); i-- > 0;) {
      if (i < pools_.size()) g = pools_[i].backward(g);
      g = relus_[i].backward(std::move(g));
      g = convs_[i].backward(g, i > 0);
    }
  }

  void collect(std::vector<nn::Param*>& out) {
    for (auto& c : convs_) {
      out.push_back(&c.weight());
      out.push_back(&c.bias());
    }
  }

private:
  ModelConfig cfg_;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::Relu4> relus_;
  std::vector<nn::AvgPool2> pools_;
};

struct RegressionOutput {
  Matrix probs;   // n x bins; empty for the linear head
  Vector scores;  // n
};

/// Score bin centres, evenly spaced over [1, 5].
inline Vector bin_centers(int bins) {
  Vector c(bins);
  for (int i = 0; i < bins; ++i) c(i) = 1.0 + 4.0 * i / (bins - 1);
  return c;
}

/// Row-wise softmax.
inline Matrix softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// G, R and D with the band-feature plumbing between them.
class Model {
public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    extractor_ = FeatureExtractor(cfg_);
    const int out = cfg_.head == HeadKind::distribution ? cfg_.bins : 1;
    regressor_ = nn::Mlp("R", cfg_.band_dim(), {cfg_.hidden, cfg_.hidden}, out);
    discriminator_ = nn::Mlp("D", cfg_.band_dim(), {cfg_.disc_hidden, cfg_.disc_hidden}, 1);
    std::mt19937_64 rng(seed);
    extractor_.init(rng);
    regressor_.init(rng);
    discriminator_.init(rng);
    if (cfg_.head == HeadKind::distribution) centers_ = bin_centers(cfg_.bins);
  }

  const ModelConfig& config() const { return cfg_; }

  Tensor4 forward_features(const Tensor4& images) { return extractor_.forward(images); }
  void backward_features(const Tensor4& grad) { extractor_.backward(grad); }

  /// Regression head on raw (unscaled) band features.
  RegressionOutput regress(const Matrix& band) {
    check_band(band, "regress");
    const Matrix logits = regressor_.forward(band * cfg_.effective_band_scale());
    RegressionOutput out;
    if (cfg_.head == HeadKind::linear) {
      out.scores = logits.col(0);
      return out;
    }
    out.probs = softmax(logits);
    out.scores = out.probs * centers_;
    return out;
  }

  /// Gradient of a loss w.r.t. head outputs (logits) back to the raw band.
  Matrix regress_backward(const Matrix& grad_logits) {
    return regressor_.backward(grad_logits) * cfg_.effective_band_scale();
  }

  /// Discriminator logits; probabilities are sigmoid(logit).
  Vector discriminate_logits(const Matrix& band) {
    check_band(band, "discriminate");
    return discriminator_.forward(band * cfg_.effective_band_scale()).col(0);
  }

  /// Probability of "target domain" per sample, clamped into [1e-7, 1 - 1e-7].
  Vector discriminate(const Matrix& band) {
    Vector z = discriminate_logits(band);
    for (Eigen::Index i = 0; i < z.size(); ++i)
      z(i) = std::clamp(sigmoid(z(i)), 1e-7, 1.0 - 1e-7);
    return z;
  }

  Matrix discriminate_backward(const Vector& grad_logits) {
    return discriminator_.backward(grad_logits) * cfg_.effective_band_scale();
  }

  const Vector& centers() const { return centers_; }

  std::vector<nn::Param*> parameters() {
    std::vector<nn::Param*> out;
    extractor_.collect(out);
    regressor_.collect(out);
    discriminator_.collect(out);
    return out;
  }
  std::vector<nn::Param*> extractor_parameters() {
    std::vector<nn::Param*> out;
    extractor_.collect(out);
    return out;
  }
  std::vector<nn::Param*> regressor_parameters() {
    std::vector<nn::Param*> out;
    regressor_.collect(out);
    return out;
  }
  std::vector<nn::Param*> discriminator_parameters() {
    std::vector<nn::Param*> out;
    discriminator_.collect(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Hash over every parameter value.
  std::uint64_t parameter_hash() {
    std::uint64_t h = 1469598103934665603ull;
    for (auto* p : parameters())
      h = fnv1a(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double), h);
    return h;
  }

private:
  void check_band(const Matrix& band, std::string_view who) const {
    require(band.cols() == cfg_.band_dim(), who, ": band feature dimension ", band.cols(),
            " != C*m = ", cfg_.band_dim());
  }

  ModelConfig cfg_;
  FeatureExtractor extractor_;
  nn::Mlp regressor_;
  nn::Mlp discriminator_;
  Vector centers_;
};

}  // namespace freqalign
