#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "mbseg/metrics.hpp"
#include "mbseg/rng.hpp"
#include "mbseg/types.hpp"

namespace mbseg::testing {

inline Grid<double> random_probs(Rng& rng, int h, int w, double lo = 0.05, double hi = 0.95) {
  Grid<double> p(h, w);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(lo, hi);
  return p;
}

/// Random binary mask with at least one pixel of each class.
inline Mask random_mask(Rng& rng, int h, int w, double lesion_rate = 0.4) {
  Mask m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(lesion_rate) ? 1 : 0;
  m.data()[0] = 1;
  m.data()[m.size() - 1] = 0;
  return m;
}

/// Central finite difference of `f` around `p` for every entry.
template <typename F>
Grid<double> numeric_gradient(F f, const Grid<double>& p, double step) {
  Grid<double> g(p.rows(), p.cols());
  Grid<double> q = p;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double orig = q.data()[i];
    q.data()[i] = orig + step;
    const double up = f(q);
    q.data()[i] = orig - step;
    const double down = f(q);
    q.data()[i] = orig;
    g.data()[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const Grid<double>& a, const Grid<double>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

/// Predictions that keep every hinge of the rank loss and every hard-pixel
/// ranking at least `gap` away from a tie, so small perturbations never cross a kink.
inline Grid<double> kink_free_probs(Rng& rng, const Mask& gt) {
  Grid<double> p(gt.rows(), gt.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double cell = 0.05 * static_cast<double>(rng.below(18)) + 0.05;
    const double offset = gt.data()[i] ? 0.0375 : 0.0125;
    p.data()[i] = cell + offset + 2.5e-4 * static_cast<double>(i);
  }
  return p;
}

/// Plain tallies for the oracle checks.
inline ConfusionCounts brute_counts(const Grid<double>& pred, const Mask& gt, double threshold) {
  ConfusionCounts c;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.data()[i] >= threshold;
    const bool y = gt.data()[i] == 1;
    c.tp += p && y;
    c.fp += p && !y;
    c.fn += !p && y;
    c.tn += !p && !y;
  }
  return c;
}

/// Mann-Whitney statistic over all positive/negative pairs, ties counted half.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mbseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mbseg::testing
