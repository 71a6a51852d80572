#pragma once

// Minimal layers with explicit forward/backward passes. Each layer caches what
// its backward pass needs from the most recent forward call, Caffe style, so a
// layer instance must not be shared between concurrent passes.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "freqalign/tensor.hpp"

namespace freqalign::nn {

/// A named trainable tensor with its gradient and Adam moments.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m1;
  Matrix m2;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        m1(Matrix::Zero(rows, cols)),
        m2(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

inline void he_init(Param& p, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
}

// ---------------------------------------------------------------------------

/// 2D convolution, square kernel, stride 1, zero "same" padding.
class Conv2d {
public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel = 3)
      : in_(in_channels),
        out_(out_channels),
        k_(kernel),
        weight_(name + ".weight", out_channels, static_cast<Eigen::Index>(in_channels) * kernel * kernel),
        bias_(name + ".bias", 1, out_channels) {
    require(kernel % 2 == 1, "conv kernel must be odd, got ", kernel);
  }

  void init(std::mt19937_64& rng) { he_init(weight_, in_ * k_ * k_, rng); }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

  Tensor4 forward(const Tensor4& x) {
    require(x.channels() == in_, weight_.name, ": expected ", in_, " input channels, got ", x.channels());
    in_shape_ = x.shape();
    const int n = x.batch(), h = x.rows(), w = x.cols();
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    im2col(x);
    Matrix y = weight_.value * col_;  // out x (n * hw)
    Tensor4 out({n, out_, h, w});
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < out_; ++o) {
        const double bo = bias_.value(0, o);
        const double* src = y.data() + o * y.cols() + b * hw;
        double* dst = out.plane(b, o);
        for (Eigen::Index i = 0; i < hw; ++i) dst[i] = src[i] + bo;
      }
    return out;
  }

  /// Accumulates parameter gradients; returns the input gradient when asked.
  Tensor4 backward(const Tensor4& grad_out, bool need_input_grad = true) {
    const int n = in_shape_.batch, h = in_shape_.rows, w = in_shape_.cols;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    Matrix g(out_, n * hw);
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < out_; ++o) {
        const double* src = grad_out.plane(b, o);
        double* dst = g.data() + o * g.cols() + b * hw;
        std::copy(src, src + hw, dst);
      }
    weight_.grad.noalias() += g * col_.transpose();
    bias_.grad += g.rowwise().sum().transpose();
    if (!need_input_grad) return {};
    const Matrix dcol = weight_.value.transpose() * g;
    return col2im(dcol);
  }

private:
  void im2col(const Tensor4& x) {
    const int n = x.batch(), h = x.rows(), w = x.cols(), r = k_ / 2;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    col_.setZero(static_cast<Eigen::Index>(in_) * k_ * k_, n * hw);
    for (int c = 0; c < in_; ++c)
      for (int kh = 0; kh < k_; ++kh)
        for (int kw = 0; kw < k_; ++kw) {
          double* row = col_.data() + ((c * k_ + kh) * k_ + kw) * col_.cols();
          for (int b = 0; b < n; ++b) {
            const double* plane = x.plane(b, c);
            for (int i = 0; i < h; ++i) {
              const int si = i + kh - r;
              if (si < 0 || si >= h) continue;
              double* dst = row + b * hw + static_cast<Eigen::Index>(i) * w;
              const double* src = plane + static_cast<std::size_t>(si) * w;
              const int j0 = std::max(0, r - kw), j1 = std::min(w, w + r - kw);
              for (int j = j0; j < j1; ++j) dst[j] = src[j + kw - r];
            }
          }
        }
  }

  Tensor4 col2im(const Matrix& dcol) const {
    const int n = in_shape_.batch, h = in_shape_.rows, w = in_shape_.cols, r = k_ / 2;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    Tensor4 dx(in_shape_);
    for (int c = 0; c < in_; ++c)
      for (int kh = 0; kh < k_; ++kh)
        for (int kw = 0; kw < k_; ++kw) {
          const double* row = dcol.data() + ((c * k_ + kh) * k_ + kw) * dcol.cols();
          for (int b = 0; b < n; ++b) {
            double* plane = dx.plane(b, c);
            for (int i = 0; i < h; ++i) {
              const int si = i + kh - r;
              if (si < 0 || si >= h) continue;
              const double* src = row + b * hw + static_cast<Eigen::Index>(i) * w;
              double* dst = plane + static_cast<std::size_t>(si) * w;
              const int j0 = std::max(0, r - kw), j1 = std::min(w, w + r - kw);
              for (int j = j0; j < j1; ++j) dst[j + kw - r] += src[j];
            }
          }
        }
    return dx;
  }

  int in_ = 0, out_ = 0, k_ = 3;
  Param weight_, bias_;
  Shape4 in_shape_{};
  Matrix col_;
};

class Relu4 {
public:
  Tensor4 forward(Tensor4 x) {
    mask_.assign(x.size(), 0);
    double* p = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (p[i] > 0.0) {
        mask_[i] = 1;
      } else {
        p[i] = 0.0;
      }
    }
    return x;
  }
  Tensor4 backward(Tensor4 g) const {
    double* p = g.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!mask_[i]) p[i] = 0.0;
    return g;
  }

private:
  std::vector<std::uint8_t> mask_;
};

/// 2x2 average pooling, stride 2.
class AvgPool2 {
public:
  Tensor4 forward(const Tensor4& x) {
    require(x.rows() % 2 == 0 && x.cols() % 2 == 0, "avg-pool needs even spatial size, got ", x.shape());
    in_shape_ = x.shape();
    Tensor4 out({x.batch(), x.channels(), x.rows() / 2, x.cols() / 2});
    for (int n = 0; n < x.batch(); ++n)
      for (int c = 0; c < x.channels(); ++c)
        for (int i = 0; i < out.rows(); ++i)
          for (int j = 0; j < out.cols(); ++j)
            out(n, c, i, j) =
                0.25 * (x(n, c, 2 * i, 2 * j) + x(n, c, 2 * i, 2 * j + 1) + x(n, c, 2 * i + 1, 2 * j) +
                        x(n, c, 2 * i + 1, 2 * j + 1));
    return out;
  }
  Tensor4 backward(const Tensor4& g) const {
    Tensor4 dx(in_shape_);
    for (int n = 0; n < g.batch(); ++n)
      for (int c = 0; c < g.channels(); ++c)
        for (int i = 0; i < g.rows(); ++i)
          for (int j = 0; j < g.cols(); ++j) {
            const double v = 0.25 * g(n, c, i, j);
            dx(n, c, 2 * i, 2 * j) = v;
            dx(n, c, 2 * i, 2 * j + 1) = v;
            dx(n, c, 2 * i + 1, 2 * j) = v;
            dx(n, c, 2 * i + 1, 2 * j + 1) = v;
          }
    return dx;
  }

private:
  Shape4 in_shape_{};
};

// ---------------------------------------------------------------------------

/// y = x W^T + b, one sample per row.
class Linear {
public:
  Linear() = default;
  Linear(std::string name, int in, int out)
      : weight_(name + ".weight", out, in), bias_(name + ".bias", 1, out) {}

  void init(std::mt19937_64& rng) { he_init(weight_, static_cast<int>(weight_.value.cols()), rng); }

  int in_features() const { return static_cast<int>(weight_.value.cols()); }
  int out_features() const { return static_cast<int>(weight_.value.rows()); }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

  Matrix forward(const Matrix& x) {
    require(x.cols() == weight_.value.cols(), weight_.name, ": input dimension ", x.cols(), " != ",
            weight_.value.cols());
    x_ = x;
    Matrix y = x * weight_.value.transpose();
    y.rowwise() += bias_.value.row(0);
    return y;
  }

  Matrix backward(const Matrix& g) {
    weight_.grad.noalias() += g.transpose() * x_;
    bias_.grad += g.colwise().sum();
    return g * weight_.value;
  }

private:
  Param weight_, bias_;
  Matrix x_;
};

class Relu {
public:
  Matrix forward(const Matrix& x) {
    mask_ = (x.array() > 0.0).cast<double>();
    return x.cwiseMax(0.0);
  }
  Matrix backward(const Matrix& g) const { return g.cwiseProduct(mask_); }

private:
  Matrix mask_;
};

/// Fully connected stack: Linear (ReLU Linear)*, ReLU after every hidden layer.
class Mlp {
public:
  Mlp() = default;
  Mlp(const std::string& name, int in, const std::vector<int>& hidden, int out) {
    int prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers_.emplace_back(name + ".fc" + std::to_string(i + 1), prev, hidden[i]);
      prev = hidden[i];
    }
    layers_.emplace_back(name + ".fc" + std::to_string(hidden.size() + 1), prev, out);
    relus_.resize(hidden.size());
  }

  void init(std::mt19937_64& rng) {
    for (auto& l : layers_) l.init(rng);
  }

  int in_features() const { return layers_.front().in_features(); }
  int out_features() const { return layers_.back().out_features(); }

  Matrix forward(const Matrix& x) {
    Matrix h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h);
      if (i < relus_.size()) h = relus_[i].forward(h);
    }
    return h;
  }

  Matrix backward(const Matrix& g) {
    Matrix d = g;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (i < relus_.size()) d = relus_[i].backward(d);
      d = layers_[i].backward(d);
    }
    return d;
  }

  void collect(std::vector<Param*>& out) {
    for (auto& l : layers_) {
      out.push_back(&l.weight());
      out.push_back(&l.bias());
    }
  }

private:
  std::vector<Linear> layers_;
  std::vector<Relu> relus_;
};

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;  // L2 term added to the gradient
};

class Adam {
public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }

  void step(const std::vector<Param*>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Param* p : params) {
      Matrix g = p->grad;
      if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * p->value;
      p->m1 = cfg_.beta1 * p->m1 + (1.0 - cfg_.beta1) * g;
      p->m2 = cfg_.beta2 * p->m2 + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      p->value.array() -= cfg_.lr * (p->m1.array() / c1) / ((p->m2.array() / c2).sqrt() + cfg_.eps);
    }
  }

private:
  AdamConfig cfg_{};
  long long t_ = 0;
};

}  // namespace freqalign::nn
