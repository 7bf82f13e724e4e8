#pragma once

#include <algorithm>
#include <vector>

#include "mbseg/types.hpp"

namespace mbseg::nn {

/// Source taps along one axis for half-pixel (align-corners off) bilinear resampling.
struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<double> frac;  // weight of `hi`
};

inline AxisTaps bilinear_taps(int in_size, int out_size) {
  AxisTaps taps;
  taps.lo.resize(static_cast<std::size_t>(out_size));
  taps.hi.resize(taps.lo.size());
  taps.frac.resize(taps.lo.size());
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double src = std::max(0.0, (o + 0.5) * scale - 0.5);
    const int lo = std::min(static_cast<int>(src), in_size - 1);
    const auto k = static_cast<std::size_t>(o);
    taps.lo[k] = lo;
    taps.hi[k] = std::min(lo + 1, in_size - 1);
    taps.frac[k] = src - lo;
  }
  return taps;
}

/// Bilinear resize of one plane.
template <typename Derived>
Grid<typename Derived::Scalar> resize_bilinear(const Eigen::MatrixBase<Derived>& in, int out_h, int out_w) {
  using Scalar = typename Derived::Scalar;
  const auto ty = bilinear_taps(static_cast<int>(in.rows()), out_h);
  const auto tx = bilinear_taps(static_cast<int>(in.cols()), out_w);
  Grid<Scalar> rows(out_h, in.cols());
  for (int y = 0; y < out_h; ++y) {
    const auto k = static_cast<std::size_t>(y);
    const Scalar f = Scalar(ty.frac[k]);
    rows.row(y) = (Scalar(1) - f) * in.row(ty.lo[k]) + f * in.row(ty.hi[k]);
  }
  Grid<Scalar> out(out_h, out_w);
  for (int x = 0; x < out_w; ++x) {
    const auto k = static_cast<std::size_t>(x);
    const Scalar f = Scalar(tx.frac[k]);
    out.col(x) = (Scalar(1) - f) * rows.col(tx.lo[k]) + f * rows.col(tx.hi[k]);
  }
  return out;
}

/// Adjoint of resize_bilinear: scatters an output-size gradient back to the input size.
template <typename Derived>
Grid<typename Derived::Scalar> resize_bilinear_adjoint(const Eigen::MatrixBase<Derived>& grad_out, int in_h,
                                                       int in_w) {
  using Scalar = typename Derived::Scalar;
  const int out_h = static_cast<int>(grad_out.rows());
  const int out_w = static_cast<int>(grad_out.cols());
  const auto ty = bilinear_taps(in_h, out_h);
  const auto tx = bilinear_taps(in_w, out_w);
  Grid<Scalar> rows = Grid<Scalar>::Zero(out_h, in_w);
  for (int x = 0; x < out_w; ++x) {
    const auto k = static_cast<std::size_t>(x);
    const Scalar f = Scalar(tx.frac[k]);
    rows.col(tx.lo[k]) += (Scalar(1) - f) * grad_out.col(x);
    rows.col(tx.hi[k]) += f * grad_out.col(x);
  }
  Grid<Scalar> out = Grid<Scalar>::Zero(in_h, in_w);
  for (int y = 0; y < out_h; ++y) {
    const auto k = static_cast<std::size_t>(y);
    const Scalar f = Scalar(ty.frac[k]);
    out.row(ty.lo[k]) += (Scalar(1) - f) * rows.row(y);
    out.row(ty.hi[k]) += f * rows.row(y);
  }
  return out;
}

}  // namespace mbseg::nn
