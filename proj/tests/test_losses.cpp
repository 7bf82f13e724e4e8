#include <doctest.h>

#include <cmath>

#include "mbseg/losses.hpp"
#include "support.hpp"

using namespace mbseg;
using namespace mbseg::testing;

namespace {
Mask mask2(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
  Mask m(2, 2);
  m << a, b, c, d;
  return m;
}
Grid<double> pred2(double a, double b, double c, double d) {
  Grid<double> p(2, 2);
  p << a, b, c, d;
  return p;
}
}  // namespace

TEST_CASE("dice loss hand values") {
  const Mask all = mask2(1, 1, 1, 1);
  // 1 - 2*4 / (4 + 4 + 1)
  CHECK(dice_loss(pred2(1, 1, 1, 1), all, 1.0) == doctest::Approx(1.0 / 9.0));
  const Mask half = mask2(1, 0, 1, 0);
  // intersection 0.5, denominator 1.5 + 2 + 1
  CHECK(dice_loss(pred2(0.5, 0.5, 0, 0.5), half, 1.0) == doctest::Approx(1.0 - 1.0 / 4.5));
  // The smooth factor sits only in the denominator, so an empty image scores 1.
  CHECK(dice_loss(pred2(0, 0, 0, 0), mask2(0, 0, 0, 0), 1.0) == 1.0);
}

TEST_CASE("weighted cross-entropy and focal hand values") {
  const Mask gt = mask2(1, 0, 1, 0);
  const auto p = pred2(0.8, 0.2, 0.8, 0.2);
  const double wce = weighted_cross_entropy_loss(p, gt, ClassWeights{2.0, 1.0});
  CHECK(wce == doctest::Approx((2 * -std::log(0.8) + -std::log(0.8)) / 2.0));

  const double focal = focal_loss(pred2(0.9, 0.1, 0.9, 0.1), gt, 2.0, 0.25);
  CHECK(focal == doctest::Approx(-0.25 * 0.01 * std::log(0.9)));

  // Clamping keeps a confident miss finite.
  const double worst = cross_entropy_loss(pred2(0, 1, 0, 1), gt);
  CHECK(std::isfinite(worst));
  CHECK(worst == doctest::Approx(-std::log(kProbabilityFloor)).epsilon(1e-6));
}

TEST_CASE("rank loss hand value") {
  const Mask gt = mask2(1, 0, 0, 1);
  // background {0.6, 0.2}, lesion {0.5, 0.95}; only (0.6, 0.5) violates: 0.4 over 4 pairs
  const auto r = rank_loss_eval(pred2(0.5, 0.6, 0.2, 0.95), gt, 30, 0.3);
  CHECK(r.value == doctest::Approx(0.1));
  CHECK(r.gradient(0, 1) == doctest::Approx(0.25));
  CHECK(r.gradient(0, 0) == doctest::Approx(-0.25));
  CHECK(r.gradient(1, 0) == 0.0);
  CHECK(r.gradient(1, 1) == 0.0);
}

TEST_CASE("hard pixel mining") {
  const Mask gt = mask2(1, 0, 0, 1);
  const auto p = pred2(0.5, 0.6, 0.2, 0.95);
  const auto h = select_hard_pixels(p, gt, 1);
  REQUIRE(h.background_indices.size() == 1);
  CHECK(h.background_indices[0] == 1);
  CHECK(h.lesion_indices[0] == 0);

  SUBCASE("ties go to the lower index") {
    const auto t = select_hard_pixels(pred2(0.3, 0.3, 0.3, 0.3), mask2(0, 0, 0, 0), 2);
    CHECK(t.background_indices == std::vector<Eigen::Index>{0, 1});
  }
  SUBCASE("absent class") {
    const auto t = select_hard_pixels(p, mask2(0, 0, 0, 0), 5);
    CHECK(t.lesion_indices.empty());
    CHECK(t.background_indices.size() == 4);
    CHECK(rank_loss(p, mask2(0, 0, 0, 0), 5, 0.3) == 0.0);
  }
}

TEST_CASE("input contracts") {
  const Mask gt = mask2(1, 0, 0, 1);
  CHECK_THROWS_AS(dice_loss(pred2(1.2, 0, 0, 0), gt, 1.0), ContractViolation);
  CHECK_THROWS_AS(dice_loss(Grid<double>::Zero(3, 2), gt, 1.0), ContractViolation);
  CHECK_THROWS_AS(dice_loss(pred2(0, 0, 0, 0), mask2(2, 0, 0, 0), 1.0), ContractViolation);
  CHECK_THROWS_AS(select_hard_pixels(pred2(0, 0, 0, 0), gt, 0), ContractViolation);
  CHECK_THROWS_AS(weighted_cross_entropy_loss(pred2(0, 0, 0, 0), gt, ClassWeights{0.0, 1.0}), ContractViolation);
}

TEST_CASE("gradients match finite differences") {
  Rng rng(21);
  for (int t = 0; t < 5; ++t) {
    const Mask gt = random_mask(rng, 6, 5);
    const Grid<double> p = random_probs(rng, 6, 5);
    const auto fd = [&](auto eval) {
      return max_relative_error(eval(p).gradient,
                                numeric_gradient([&](const Grid<double>& q) { return eval(q).value; }, p, 1e-5));
    };
    CHECK(fd([&](const Grid<double>& q) { return dice_loss_eval(q, gt, 0.5); }) < 1e-5);
    CHECK(fd([&](const Grid<double>& q) { return weighted_cross_entropy_eval(q, gt, ClassWeights{3, 1}); }) < 1e-5);
    CHECK(fd([&](const Grid<double>& q) { return focal_loss_eval(q, gt, 1.5, 0.5); }) < 1e-5);
  }
}

TEST_CASE("batch loss averages images") {
  Rng rng(4);
  Tensor<double> pred(3, 1, 4, 4);
  std::vector<Mask> gts;
  double expected = 0;
  SegLossConfig cfg;
  for (int i = 0; i < 3; ++i) {
    pred.plane(i, 0) = random_probs(rng, 4, 4);
    gts.push_back(random_mask(rng, 4, 4));
    expected += hybrid_loss(Grid<double>(pred.plane(i, 0)), gts.back(), cfg.hybrid) / 3.0;
  }
  Tensor<double> grad;
  const auto e = batch_seg_loss(pred, gts, cfg, &grad);
  CHECK(e.value == doctest::Approx(expected));
  const auto single = hybrid_loss_eval(Grid<double>(pred.plane(1, 0)), gts[1], cfg.hybrid);
  CHECK((Grid<double>(grad.plane(1, 0)) - single.gradient / 3.0).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(batch_seg_loss(pred, std::vector<Mask>(2), cfg, &grad), ContractViolation);
}
