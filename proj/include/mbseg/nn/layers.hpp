#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mbseg/nn/bilinear.hpp"
#include "mbseg/rng.hpp"
#include "mbseg/types.hpp"

namespace mbseg::nn {

/// Train mode caches activations for backward and uses batch statistics.
enum class Mode { Train, Eval };

template <typename Scalar>
struct Parameter {
  std::vector<int> shape;
  Vector<Scalar> value;
  Vector<Scalar> grad;
  bool trainable = true;  // false for running statistics

  Parameter() = default;
  explicit Parameter(std::vector<int> dims, bool is_trainable = true) : shape(std::move(dims)), trainable(is_trainable) {
    Eigen::Index n = 1;
    for (int d : shape) n *= d;
    value = Vector<Scalar>::Zero(n);
    grad = Vector<Scalar>::Zero(n);
  }

  void fill_uniform(double bound, Rng& rng) {
    for (Eigen::Index i = 0; i < value.size(); ++i) value[i] = Scalar(rng.uniform(-bound, bound));
  }
};

template <typename Scalar>
using ParamRefs = std::vector<std::pair<std::string, Parameter<Scalar>*>>;

template <typename Scalar>
class Conv2d {
 public:
  struct Options {
    int in = 1;
    int out = 1;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int dilation = 1;
    bool bias = false;
  };

  Conv2d() = default;
  Conv2d(const Options& opt, Rng& rng)
      : opt_(opt), weight_({opt.out, opt.in, opt.kernel, opt.kernel}), bias_({opt.bias ? opt.out : 0}) {
    // fan-in scaled uniform, zero bias
    const double fan_in = static_cast<double>(opt.in) * opt.kernel * opt.kernel;
    weight_.fill_uniform(std::sqrt(6.0 / fan_in), rng);
  }

  const Options& options() const { return opt_; }

  int out_extent(int in) const {
    return (in + 2 * opt_.padding - opt_.dilation * (opt_.kernel - 1) - 1) / opt_.stride + 1;
  }

  /// Weights as out x (in * k * k), matching the [out][in][ky][kx] layout.
  Eigen::Map<Grid<Scalar>> weight_matrix() {
    return {weight_.value.data(), opt_.out, Eigen::Index(opt_.in) * opt_.kernel * opt_.kernel};
  }
  Eigen::Map<const Grid<Scalar>> weight_matrix() const {
    return {weight_.value.data(), opt_.out, Eigen::Index(opt_.in) * opt_.kernel * opt_.kernel};
  }
  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    if (x.c() != opt_.in) {
      throw ContractViolation("conv: expected " + std::to_string(opt_.in) + " input channels, got " +
                              std::to_string(x.c()));
    }
    const int ho = out_extent(x.h());
    const int wo = out_extent(x.w());
    Tensor<Scalar> y(x.n(), opt_.out, ho, wo);
    in_h_ = x.h();
    in_w_ = x.w();
    if (mode == Mode::Train) cols_.assign(static_cast<std::size_t>(x.n()), Grid<Scalar>());
    Grid<Scalar> cols;
    for (int i = 0; i < x.n(); ++i) {
      Grid<Scalar>& c = mode == Mode::Train ? cols_[static_cast<std::size_t>(i)] : cols;
      im2col(x, i, ho, wo, c);
      auto out = y.sample(i);
      out.noalias() = weight_matrix() * c;
      if (opt_.bias) out.colwise() += bias_.value;
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    if (cols_.size() != static_cast<std::size_t>(dy.n())) throw ContractViolation("conv: backward without forward");
    Tensor<Scalar> dx(dy.n(), opt_.in, in_h_, in_w_);
    Eigen::Map<Grid<Scalar>> dw(weight_.grad.data(), weight_matrix().rows(), weight_matrix().cols());
    Grid<Scalar> dcols;
    for (int i = 0; i < dy.n(); ++i) {
      const auto g = dy.sample(i);
      const auto& c = cols_[static_cast<std::size_t>(i)];
      dw.noalias() += g * c.transpose();
      if (opt_.bias) bias_.grad += g.rowwise().sum();
      dcols.noalias() = weight_matrix().transpose() * g;
      col2im(dcols, dx, i, dy.h(), dy.w());
    }
    return dx;
  }

  void collect(ParamRefs<Scalar>& out, const std::string& prefix) {
    out.emplace_back(prefix + "weight", &weight_);
    if (opt_.bias) out.emplace_back(prefix + "bias", &bias_);
  }

 private:
  bool pointwise() const { return opt_.kernel == 1 && opt_.stride == 1 && opt_.padding == 0; }

  void im2col(const Tensor<Scalar>& x, int i, int ho, int wo, Grid<Scalar>& cols) const {
    if (pointwise()) {
      cols = x.sample(i);
      return;
    }
    const int k = opt_.kernel;
    cols.resize(Eigen::Index(x.c()) * k * k, Eigen::Index(ho) * wo);
    for (int ch = 0; ch < x.c(); ++ch) {
      const Scalar* src = x.plane_ptr(i, ch);
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          Scalar* dst = cols.row((Eigen::Index(ch) * k + ky) * k + kx).data();
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * opt_.stride - opt_.padding + ky * opt_.dilation;
            if (iy < 0 || iy >= x.h()) {
              std::fill(dst, dst + wo, Scalar(0));
              dst += wo;
              continue;
            }
            const Scalar* row = src + Eigen::Index(iy) * x.w();
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * opt_.stride - opt_.padding + kx * opt_.dilation;
              *dst++ = (ix >= 0 && ix < x.w()) ? row[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }

  void col2im(const Grid<Scalar>& cols, Tensor<Scalar>& dx, int i, int ho, int wo) const {
    if (pointwise()) {
      dx.sample(i) += cols;
      return;
    }
    const int k = opt_.kernel;
    for (int ch = 0; ch < dx.c(); ++ch) {
      Scalar* dst = dx.plane_ptr(i, ch);
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Scalar* src = cols.row((Eigen::Index(ch) * k + ky) * k + kx).data();
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * opt_.stride - opt_.padding + ky * opt_.dilation;
            if (iy < 0 || iy >= dx.h()) {
              src += wo;
              continue;
            }
            Scalar* row = dst + Eigen::Index(iy) * dx.w();
            for (int ox = 0; ox < wo; ++ox, ++src) {
              const int ix = ox * opt_.stride - opt_.padding + kx * opt_.dilation;
              if (ix >= 0 && ix < dx.w()) row[ix] += *src;
            }
          }
        }
      }
    }
  }

  Options opt_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  std::vector<Grid<Scalar>> cols_;
  int in_h_ = 0, in_w_ = 0;
};

/// Batch normalization over (N, H, W) per channel. Running statistics follow
/// running = momentum * running + (1 - momentum) * batch.
template <typename Scalar>
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, double momentum = 0.9)
      : channels_(channels),
        momentum_(momentum),
        gamma_({channels}),
        beta_({channels}),
        running_mean_({channels}, false),
        running_var_({channels}, false) {
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  Parameter<Scalar>& gamma() { return gamma_; }
  Parameter<Scalar>& beta() { return beta_; }
  Parameter<Scalar>& running_mean() { return running_mean_; }
  Parameter<Scalar>& running_var() { return running_var_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    if (x.c() != channels_) throw ContractViolation("batchnorm: channel mismatch");
    Tensor<Scalar> y = Tensor<Scalar>::zeros_like(x);
    const Eigen::Index plane = x.plane_size();
    if (mode == Mode::Eval) {
      for (int ch = 0; ch < channels_; ++ch) {
        const Scalar scale = gamma_.value[ch] / std::sqrt(running_var_.value[ch] + Scalar(kEps));
        const Scalar shift = beta_.value[ch] - running_mean_.value[ch] * scale;
        for (int i = 0; i < x.n(); ++i) {
          Eigen::Map<Vector<Scalar>>(y.plane_ptr(i, ch), plane) =
              (Eigen::Map<const Vector<Scalar>>(x.plane_ptr(i, ch), plane).array() * scale + shift).matrix();
        }
      }
      return y;
    }
    const Scalar count = Scalar(Eigen::Index(x.n()) * plane);
    if (count < Scalar(2)) throw ContractViolation("batchnorm: training needs more than one value per channel");
    xhat_ = Tensor<Scalar>::zeros_like(x);
    inv_std_.resize(channels_);
    for (int ch = 0; ch < channels_; ++ch) {
      Scalar sum = 0;
      for (int i = 0; i < x.n(); ++i) sum += Eigen::Map<const Vector<Scalar>>(x.plane_ptr(i, ch), plane).sum();
      const Scalar mean = sum / count;
      Scalar sq = 0;
      for (int i = 0; i < x.n(); ++i) {
        sq += (Eigen::Map<const Vector<Scalar>>(x.plane_ptr(i, ch), plane).array() - mean).square().sum();
      }
      const Scalar var = sq / count;
      const Scalar inv_std = Scalar(1) / std::sqrt(var + Scalar(kEps));
      inv_std_[ch] = inv_std;
      for (int i = 0; i < x.n(); ++i) {
        auto xh = Eigen::Map<Vector<Scalar>>(xhat_.plane_ptr(i, ch), plane);
        xh = ((Eigen::Map<const Vector<Scalar>>(x.plane_ptr(i, ch), plane).array() - mean) * inv_std).matrix();
        Eigen::Map<Vector<Scalar>>(y.plane_ptr(i, ch), plane) =
            (xh.array() * gamma_.value[ch] + beta_.value[ch]).matrix();
      }
      const Scalar m = Scalar(momentum_);
      running_mean_.value[ch] = m * running_mean_.value[ch] + (Scalar(1) - m) * mean;
      running_var_.value[ch] = m * running_var_.value[ch] + (Scalar(1) - m) * var * count / (count - Scalar(1));
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    if (!dy.same_shape(xhat_)) throw ContractViolation("batchnorm: backward without forward");
    Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(dy);
    const Eigen::Index plane = dy.plane_size();
    const Scalar count = Scalar(Eigen::Index(dy.n()) * plane);
    for (int ch = 0; ch < channels_; ++ch) {
      Scalar sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < dy.n(); ++i) {
        const auto g = Eigen::Map<const Vector<Scalar>>(dy.plane_ptr(i, ch), plane);
        const auto xh = Eigen::Map<const Vector<Scalar>>(xhat_.plane_ptr(i, ch), plane);
        sum_dy += g.sum();
        sum_dy_xhat += g.dot(xh);
      }
      gamma_.grad[ch] += sum_dy_xhat;
      beta_.grad[ch] += sum_dy;
      const Scalar k = gamma_.value[ch] * inv_std_[ch] / count;
      for (int i = 0; i < dy.n(); ++i) {
        const auto g = Eigen::Map<const Vector<Scalar>>(dy.plane_ptr(i, ch), plane);
        const auto xh = Eigen::Map<const Vector<Scalar>>(xhat_.plane_ptr(i, ch), plane);
        Eigen::Map<Vector<Scalar>>(dx.plane_ptr(i, ch), plane) =
            (k * (count * g.array() - sum_dy - xh.array() * sum_dy_xhat)).matrix();
      }
    }
    return dx;
  }

  void collect(ParamRefs<Scalar>& out, const std::string& prefix) {
    out.emplace_back(prefix + "gamma", &gamma_);
    out.emplace_back(prefix + "beta", &beta_);
    out.emplace_back(prefix + "running_mean", &running_mean_);
    out.emplace_back(prefix + "running_var", &running_var_);
  }

 private:
  int channels_ = 0;
  double momentum_ = 0.9;
  Parameter<Scalar> gamma_, beta_, running_mean_, running_var_;
  Tensor<Scalar> xhat_;
  Vector<Scalar> inv_std_;
};

template <typename Scalar>
class ReLU {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    Tensor<Scalar> y = x;
    y.data() = x.data().cwiseMax(Scalar(0));
    if (mode == Mode::Train) input_ = x;
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx = dy;
    dx.data() = (input_.data().array() > Scalar(0)).select(dy.data(), Scalar(0));
    return dx;
  }

 private:
  Tensor<Scalar> input_;
};

template <typename Scalar>
class Sigmoid {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    Tensor<Scalar> y = x;
    y.data() = (Scalar(1) / (Scalar(1) + (-x.data().array()).exp())).matrix();
    if (mode == Mode::Train) output_ = y;
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx = dy;
    dx.data() = (dy.data().array() * output_.data().array() * (Scalar(1) - output_.data().array())).matrix();
    return dx;
  }

 private:
  Tensor<Scalar> output_;
};

/// Bilinear resampling of every plane to a fixed output size.
template <typename Scalar>
class Upsample {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x, int out_h, int out_w) {
    in_h_ = x.h();
    in_w_ = x.w();
    Tensor<Scalar> y(x.n(), x.c(), out_h, out_w);
    for (int i = 0; i < x.n(); ++i)
      for (int ch = 0; ch < x.c(); ++ch) y.plane(i, ch) = resize_bilinear(x.plane(i, ch), out_h, out_w);
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx(dy.n(), dy.c(), in_h_, in_w_);
    for (int i = 0; i < dy.n(); ++i)
      for (int ch = 0; ch < dy.c(); ++ch) dx.plane(i, ch) = resize_bilinear_adjoint(dy.plane(i, ch), in_h_, in_w_);
    return dx;
  }

 private:
  int in_h_ = 0, in_w_ = 0;
};

template <typename Scalar>
class GlobalAvgPool {
 public:
  /// N x C x H x W -> N x C matrix.
  Grid<Scalar> forward(const Tensor<Scalar>& x) {
    h_ = x.h();
    w_ = x.w();
    Grid<Scalar> y(x.n(), x.c());
    for (int i = 0; i < x.n(); ++i) y.row(i) = x.sample(i).rowwise().mean().transpose();
    return y;
  }
  Tensor<Scalar> backward(const Grid<Scalar>& dy) {
    Tensor<Scalar> dx(static_cast<int>(dy.rows()), static_cast<int>(dy.cols()), h_, w_);
    const Scalar inv = Scalar(1) / Scalar(Eigen::Index(h_) * w_);
    for (int i = 0; i < dx.n(); ++i) dx.sample(i).colwise() = dy.row(i).transpose() * inv;
    return dx;
  }

 private:
  int h_ = 0, w_ = 0;
};

/// Fully connected layer with weights stored as (in_features, out_features).
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng) : in_(in), out_(out), weight_({in, out}), bias_({out}) {
    weight_.fill_uniform(std::sqrt(6.0 / in), rng);
  }

  Eigen::Map<Grid<Scalar>> weight_matrix() { return {weight_.value.data(), in_, out_}; }
  Eigen::Map<const Grid<Scalar>> weight_matrix() const { return {weight_.value.data(), in_, out_}; }
  Parameter<Scalar>& bias() { return bias_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Grid<Scalar> forward(const Grid<Scalar>& x, Mode mode) {
    if (x.cols() != in_) throw ContractViolation("linear: feature count mismatch");
    if (mode == Mode::Train) input_ = x;
    Grid<Scalar> y = x * weight_matrix();
    y.rowwise() += bias_.value.transpose();
    return y;
  }
  Grid<Scalar> backward(const Grid<Scalar>& dy) {
    Eigen::Map<Grid<Scalar>>(weight_.grad.data(), in_, out_).noalias() += input_.transpose() * dy;
    bias_.grad += dy.colwise().sum().transpose();
    return dy * weight_matrix().transpose();
  }

  void collect(ParamRefs<Scalar>& out, const std::string& prefix) {
    out.emplace_back(prefix + "weight", &weight_);
    out.emplace_back(prefix + "bias", &bias_);
  }

 private:
  int in_ = 0, out_ = 0;
  Parameter<Scalar> weight_, bias_;
  Grid<Scalar> input_;
};

/// Convolution -> batch normalization -> ReLU.
template <typename Scalar>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(typename Conv2d<Scalar>::Options opt, Rng& rng) : conv_(opt, rng), bn_(opt.out) {}

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    return relu_.forward(bn_.forward(conv_.forward(x, mode), mode), mode);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) { return conv_.backward(bn_.backward(relu_.backward(dy))); }

  void collect(ParamRefs<Scalar>& out, const std::string& prefix) {
    conv_.collect(out, prefix + "conv.");
    bn_.collect(out, prefix + "bn.");
  }

  Conv2d<Scalar>& conv() { return conv_; }
  const Conv2d<Scalar>& conv() const { return conv_; }
  BatchNorm2d<Scalar>& bn() { return bn_; }

 private:
  Conv2d<Scalar> conv_;
  BatchNorm2d<Scalar> bn_;
  ReLU<Scalar> relu_;
};

/// Row-wise softmax of logits.
template <typename Scalar>
Grid<Scalar> softmax_rows(const Grid<Scalar>& logits) {
  Grid<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace mbseg::nn
