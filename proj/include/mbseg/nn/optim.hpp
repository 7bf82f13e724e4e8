#pragma once

#include <cmath>
#include <vector>

#include "mbseg/nn/layers.hpp"

namespace mbseg::nn {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam over a fixed list of parameters. Non-trainable entries (running
/// statistics) and entries listed as frozen are skipped.
template <typename Scalar>
class Adam {
 public:
  Adam(ParamRefs<Scalar> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (auto& [name, p] : params_) {
      m_.push_back(Vector<Scalar>::Zero(p->value.size()));
      v_.push_back(Vector<Scalar>::Zero(p->value.size()));
      active_.push_back(p->trainable);
    }
  }

  /// Excludes every parameter whose name starts with `prefix`.
  void freeze_prefix(const std::string& prefix) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].first.rfind(prefix, 0) == 0) active_[i] = false;
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p->grad.setZero();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    const Scalar lr = Scalar(opt_.learning_rate * std::sqrt(c2) / c1);
    const Scalar b1 = Scalar(opt_.beta1), b2 = Scalar(opt_.beta2);
    const Scalar eps_hat = Scalar(opt_.eps * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!active_[i]) continue;
      auto& p = *params_[i].second;
      Vector<Scalar> g = p.grad;
      if (opt_.weight_decay != 0.0) g += Scalar(opt_.weight_decay) * p.value;
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      p.value.array() -= lr * m_[i].array() / (v_[i].array().sqrt() + eps_hat);
    }
  }

 private:
  ParamRefs<Scalar> params_;
  AdamOptions opt_;
  std::vector<Vector<Scalar>> m_, v_;
  std::vector<bool> active_;
  int t_ = 0;
};

}  // namespace mbseg::nn
