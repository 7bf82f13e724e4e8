#include <doctest.h>

#include <numbers>

#include "mbseg/data.hpp"
#include "mbseg/io.hpp"
#include "support.hpp"

using namespace mbseg;
using namespace mbseg::testing;
namespace fs = std::filesystem;

TEST_CASE("synthetic mask is the generating ellipse") {
  SyntheticConfig cfg;
  Rng rng(17);
  for (int t = 0; t < 6; ++t) {
    const auto img = generate_synthetic_image(cfg, t % 3, rng);
    const auto& e = img.ellipse;
    int mismatches = 0;
    for (int y = 0; y < cfg.image_size; ++y) {
      for (int x = 0; x < cfg.image_size; ++x) {
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = (dx * std::cos(e.angle) + dy * std::sin(e.angle)) / e.a;
        const double v = (-dx * std::sin(e.angle) + dy * std::cos(e.angle)) / e.b;
        mismatches += (u * u + v * v <= 1.0) != (img.mask(y, x) == 1);
      }
    }
    CHECK(mismatches == 0);
    // Fully inside the frame with a border.
    CHECK(img.mask.row(0).sum() == 0);
    CHECK(img.mask.col(cfg.image_size - 1).cast<int>().sum() == 0);
    CHECK(img.image.data().minCoeff() >= 0.0f);
    CHECK(img.image.data().maxCoeff() <= 1.0f);
  }
}

TEST_CASE("synthetic dataset is deterministic") {
  SyntheticConfig cfg;
  cfg.num_seg = 6;
  cfg.num_cls = 9;
  const auto [seg, cls] = generate_synthetic_dataset(cfg);
  const auto [seg2, cls2] = generate_synthetic_dataset(cfg);
  REQUIRE(seg.size() == 6);
  REQUIRE(cls.size() == 9);
  CHECK(seg[0].id == "seg_0000");
  CHECK(cls[8].id == "cls_0008");
  CHECK(seg[3].image.data() == seg2[3].image.data());
  CHECK(seg[3].mask == seg2[3].mask);
  CHECK(cls[5].label == cls2[5].label);
  for (const auto& c : cls) CHECK((c.label >= 0 && c.label < 3));

  cfg.seed = 8;
  CHECK(generate_synthetic_dataset(cfg).first[0].image.data() != seg[0].image.data());
  cfg.image_size = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("identity augmentation leaves samples unchanged") {
  SyntheticConfig sc;
  sc.num_seg = 1;
  sc.num_cls = 0;
  const auto s = generate_synthetic_dataset(sc).first[0];
  const auto cfg = AugmentationConfig::identity(64, 64);
  Rng rng(1);
  const auto out = augment(s, cfg, rng);
  CHECK(out.mask == s.mask);
  CHECK((out.image.data() - s.image.data()).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("warps follow the affine map") {
  Mask m = Mask::Zero(8, 8);
  m(2, 5) = 1;
  Tensor<float> img(1, 1, 8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) img(0, 0, y, x) = float(10 * y + x);
  }
  auto cfg = AugmentationConfig::identity(8, 8);

  AugmentationDraw shift;
  shift.shift_x = 2;
  shift.shift_y = -1;
  const auto a = augmentation_transform(shift, cfg, 8, 8);
  const auto ms = warp_nearest(m, a, 8, 8);
  CHECK(ms(1, 7) == 1);
  CHECK(ms.cast<int>().sum() == 1);
  CHECK(warp_bilinear(img, a, 8, 8)(0, 0, 3, 4) == doctest::Approx(10 * 4 + 2));

  AugmentationDraw flip;
  flip.flip_h = true;
  const auto f = augmentation_transform(flip, cfg, 8, 8);
  CHECK(warp_nearest(m, f, 8, 8)(2, 2) == 1);
  CHECK(warp_bilinear(img, f, 8, 8)(0, 0, 6, 1) == doctest::Approx(66));

  AugmentationDraw rot;
  rot.rotation = std::numbers::pi / 2;
  const auto r = augmentation_transform(rot, cfg, 8, 8);
  // Quarter turn about the centre (3.5, 3.5): output (x, y) reads source (3.5 - (y - 3.5), 3.5 + (x - 3.5)).
  const auto warped = warp_bilinear(img, r, 8, 8);
  CHECK(warped(0, 0, 1, 2) == doctest::Approx(img(0, 0, 2, 6)));

  // Outside the source, soft maps read zero.
  AugmentationDraw far;
  far.shift_x = 100;
  CHECK(warp_soft(Grid<float>::Ones(8, 8), augmentation_transform(far, cfg, 8, 8), 8, 8).isZero(0.0f));
}

TEST_CASE("augmentation draws are keyed") {
  AugmentationConfig cfg;
  auto r1 = augmentation_rng(3, "seg_0001", 4);
  auto r2 = augmentation_rng(3, "seg_0001", 4);
  auto r3 = augmentation_rng(3, "seg_0001", 5);
  const auto a = draw_augmentation(cfg, r1);
  const auto b = draw_augmentation(cfg, r2);
  const auto c = draw_augmentation(cfg, r3);
  CHECK(a.rotation == b.rotation);
  CHECK(a.crop_scale == b.crop_scale);
  CHECK(a.rotation != c.rotation);
  CHECK(a.crop_scale >= cfg.crop_scale_min);
  CHECK(std::abs(a.shift_x) <= cfg.shift_pixels);
  CHECK((a.zoom == 1.0 || a.zoom == cfg.zoom_factor));
}

TEST_CASE("whitening rescales to the unit range") {
  Rng rng(2);
  Tensor<float> img(1, 3, 10, 10);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = float(rng.uniform(0.2, 0.4));
  const auto w = whiten(img);
  CHECK(w.data().minCoeff() == doctest::Approx(0.0));
  CHECK(w.data().maxCoeff() == doctest::Approx(1.0));
}

TEST_CASE("export and reload in the folder layout") {
  SyntheticConfig sc;
  sc.num_seg = 4;
  sc.num_cls = 5;
  const auto [seg, cls] = generate_synthetic_dataset(sc);
  const auto names = synthetic_class_names(3);
  const auto dir = scratch_dir("data_export");
  export_seg_dataset(seg, dir / "seg", names);
  export_cls_dataset(cls, dir / "cls", names);

  const auto ids = read_manifest(dir / "seg", "manifest.txt");
  CHECK(ids == std::vector<std::string>{"seg_0000", "seg_0001", "seg_0002", "seg_0003"});
  CHECK(read_manifest(dir / "seg", "") == ids);
  const auto back = load_seg_dataset(dir / "seg", ids);
  for (std::size_t i = 0; i < seg.size(); ++i) {
    CHECK(back[i].mask == seg[i].mask);
    CHECK((back[i].image.data() - seg[i].image.data()).cwiseAbs().maxCoeff() < 1e-6f);
  }
  std::map<std::string, int> table{{"smooth_disk", 0}, {"bright_ring", 1}, {"speckled", 2}};
  const auto c = load_cls_dataset(dir / "cls", "labels.csv", table);
  REQUIRE(c.size() == cls.size());
  CHECK(c[4].label == cls[4].label);

  SUBCASE("ingestion errors") {
    fs::remove(dir / "seg" / "masks" / "seg_0002_segmentation.png");
    CHECK_THROWS_AS(load_seg_dataset(dir / "seg", ids), IngestionError);
    io::write_text(dir / "cls" / "bad.csv", "id,label\ncls_0000,melanoma\n");
    CHECK_THROWS_AS(load_cls_dataset(dir / "cls", "bad.csv", table), IngestionError);
    io::write_text(dir / "cls" / "nohead.csv", "cls_0000,speckled\n");
    CHECK_THROWS_AS(load_cls_dataset(dir / "cls", "nohead.csv", table), IngestionError);
    io::write_text(dir / "cls" / "ghost.csv", "id,label\nnobody,speckled\n");
    CHECK_THROWS_AS(load_cls_dataset(dir / "cls", "ghost.csv", table), IngestionError);
  }
}
