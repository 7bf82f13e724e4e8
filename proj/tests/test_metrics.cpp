#include <doctest.h>

#include <cmath>

#include "mbseg/metrics.hpp"
#include "support.hpp"

using namespace mbseg;
using namespace mbseg::testing;

TEST_CASE("confusion counts and derived metrics") {
  Grid<double> p(2, 3);
  p << 0.9, 0.5, 0.1, 0.2, 0.7, 0.49;
  Mask gt(2, 3);
  gt << 1, 0, 1, 0, 1, 0;
  const auto c = confusion_counts(p, gt);
  CHECK(c == ConfusionCounts{2, 1, 2, 1});
  CHECK(jaccard(c) == doctest::Approx(0.5));
  CHECK(dice_coef(c) == doctest::Approx(4.0 / 6.0));
  CHECK(pixel_accuracy(c) == doctest::Approx(4.0 / 6.0));
  CHECK(sensitivity(c) == doctest::Approx(2.0 / 3.0));
  CHECK(specificity(c) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("empty denominators score one") {
  const ConfusionCounts none{0, 0, 5, 0};
  CHECK(jaccard(none) == 1.0);
  CHECK(dice_coef(none) == 1.0);
  CHECK(sensitivity(none) == 1.0);
  CHECK(specificity(ConfusionCounts{3, 0, 0, 0}) == 1.0);
}

TEST_CASE("segmentation report mean and pooled") {
  std::vector<Grid<float>> preds{Grid<float>::Ones(2, 2), Grid<float>::Zero(2, 2)};
  Mask a(2, 2), b(2, 2);
  a << 1, 1, 0, 0;
  b << 1, 0, 0, 0;
  const auto r = segmentation_report({"a", "b"}, preds, {a, b});
  CHECK(r.per_image[0].ja == doctest::Approx(0.5));
  CHECK(r.per_image[1].ja == 0.0);
  CHECK(r.mean.ja == doctest::Approx(0.25));
  CHECK(r.pooled.ja == doctest::Approx(2.0 / 5.0));
}

TEST_CASE("AUC edge cases and oracle") {
  const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  CHECK(roc_auc(s, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc(s, std::vector<int>{0, 0, 1, 1}) == 0.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1, 1, 1, 1}), UndefinedMetric);
  CHECK_THROWS_AS(roc_auc(s, std::vector<int>{1, 2, 0, 0}), ContractViolation);

  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> sc(40);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < sc.size(); ++i) {
      sc[i] = std::round(rng.uniform() * 5);
      y[i] = static_cast<int>(i % 3 == 0);
    }
    CHECK(roc_auc(sc, y) == doctest::Approx(pairwise_auc(sc, y)).epsilon(1e-12));
  }
}

TEST_CASE("classification reports") {
  Grid<double> probs(4, 3);
  probs << 0.7, 0.2, 0.1,  //
      0.1, 0.8, 0.1,       //
      0.4, 0.4, 0.2,       // tie resolves to class 0
      0.2, 0.2, 0.6;
  const std::vector<int> labels{0, 1, 1, 2};
  CHECK(argmax_accuracy(probs, labels) == doctest::Approx(0.75));
  const auto t = classification_report(probs, labels, 1);
  CHECK(t.positive_class == 1);
  CHECK(t.se == doctest::Approx(0.5));
  CHECK(t.sp == doctest::Approx(1.0));
  CHECK(t.ac == doctest::Approx(0.75));
  const auto s = classification_summary(probs, labels, {0, 2});
  CHECK(s.tasks.size() == 2);
  CHECK(s.average_auc == doctest::Approx((s.tasks[0].auc + s.tasks[1].auc) / 2));
}
