#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "mbseg/errors.hpp"

namespace mbseg {

/// Row-major 2-D grid; row-major keeps pixel index = y * width + x.
template <typename Scalar>
using Grid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Per-pixel lesion probability, every value in [0,1].
template <typename Scalar>
using ProbMask = Grid<Scalar>;

/// Binary ground truth: 1 = lesion, 0 = background.
using Mask = Grid<std::uint8_t>;

/// Dense N x C x H x W tensor stored contiguously (NCHW).
template <typename Scalar>
class Tensor {
 public:
  using PlaneMap = Eigen::Map<Grid<Scalar>>;
  using ConstPlaneMap = Eigen::Map<const Grid<Scalar>>;

  Tensor() = default;
  Tensor(int n, int c, int h, int w) : n_(n), c_(c), h_(h), w_(w), data_(Vector<Scalar>::Zero(Index(n) * c * h * w)) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.n_, other.c_, other.h_, other.w_); }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  Eigen::Index plane_size() const { return Index(h_) * w_; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  std::string shape_string() const {
    return std::to_string(n_) + "x" + std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
  }

  Vector<Scalar>& data() { return data_; }
  const Vector<Scalar>& data() const { return data_; }

  Scalar* plane_ptr(int i, int ch) { return data_.data() + (Index(i) * c_ + ch) * plane_size(); }
  const Scalar* plane_ptr(int i, int ch) const { return data_.data() + (Index(i) * c_ + ch) * plane_size(); }

  PlaneMap plane(int i, int ch) { return PlaneMap(plane_ptr(i, ch), h_, w_); }
  ConstPlaneMap plane(int i, int ch) const { return ConstPlaneMap(plane_ptr(i, ch), h_, w_); }

  /// Sample `i` viewed as a C x (H*W) matrix.
  PlaneMap sample(int i) { return PlaneMap(plane_ptr(i, 0), c_, plane_size()); }
  ConstPlaneMap sample(int i) const { return ConstPlaneMap(plane_ptr(i, 0), c_, plane_size()); }

  Scalar& operator()(int i, int ch, int y, int x) { return plane_ptr(i, ch)[Index(y) * w_ + x]; }
  Scalar operator()(int i, int ch, int y, int x) const { return plane_ptr(i, ch)[Index(y) * w_ + x]; }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(n_, c_, h_, w_);
    out.data() = data_.template cast<Other>();
    return out;
  }

 private:
  using Index = Eigen::Index;
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  Vector<Scalar> data_;
};

template <typename DA, typename DB>
void require_same_shape(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
  }
}

template <typename Derived>
void require_probabilities(const Eigen::MatrixBase<Derived>& p, const char* what) {
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const Scalar v = p(r, c);
      if (!(v >= Scalar(0) && v <= Scalar(1))) {
        throw ContractViolation(std::string(what) + ": prediction outside [0,1] at (" + std::to_string(r) + "," +
                                std::to_string(c) + ")");
      }
    }
  }
}

template <typename Derived>
void require_binary(const Eigen::MatrixBase<Derived>& m, const char* what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) != 0 && m(r, c) != 1) throw ContractViolation(std::string(what) + ": ground truth not binary");
    }
  }
}

}  // namespace mbseg
