#include <doctest.h>

#include "mbseg/config.hpp"
#include "mbseg/io.hpp"
#include "support.hpp"

using namespace mbseg;

TEST_CASE("defaults") {
  const PipelineConfig cfg;
  CHECK(cfg.loss.kind == SegLossKind::Hybrid);
  CHECK(cfg.loss.hybrid.lambda_weight == 0.05);
  CHECK(cfg.loss.hybrid.k_hard == 30);
  CHECK(cfg.loss.hybrid.margin == 0.3);
  CHECK(cfg.optim.learning_rate == 1e-4);
  CHECK(cfg.optim.batch_size_seg == 16);
  CHECK(cfg.optim.batch_size_cls == 32);
  CHECK(cfg.optim.early_stop_patience == 30);
  CHECK(cfg.optim.max_epochs == 500);
  CHECK(cfg.threshold == 0.5);
  CHECK(cfg.augment.target_h == cfg.data.synthetic.image_size);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("augmentation recipe") {
  const AugmentationConfig a;
  CHECK(a.crop_scale_min == 0.5);
  CHECK(a.crop_scale_max == 1.0);
  CHECK(a.rotation_degrees == 10.0);
  CHECK(a.shear_radians == 0.1);
  CHECK(a.shift_pixels == 20.0);
  CHECK(a.zoom_factor == 1.1);
  CHECK(a.target_h == 224);
  CHECK(a.target_w == 224);
  CHECK(a.horizontal_flip);
  CHECK(a.vertical_flip);
  CHECK(a.whitening);
}

TEST_CASE("json round trip") {
  PipelineConfig cfg;
  cfg.loss.kind = SegLossKind::Focal;
  cfg.loss.hybrid.k_hard = 77;
  cfg.data.class_names = {"a", "b", "c"};
  cfg.seed = 123;
  const auto j = config_to_json(cfg);
  CHECK(j["loss"]["kind"] == "focal");
  CHECK(config_to_json(config_from_json(j)) == j);
}

TEST_CASE("overrides") {
  auto tree = config_to_json(PipelineConfig{});
  apply_override(tree, "loss.k_hard=50");
  apply_override(tree, "optim.learning_rate=0.001");
  apply_override(tree, "loss.kind=dice");
  apply_override(tree, "data.synthetic.noise_level=0");
  const auto cfg = config_from_json(tree);
  CHECK(cfg.loss.hybrid.k_hard == 50);
  CHECK(cfg.optim.learning_rate == 0.001);
  CHECK(cfg.loss.kind == SegLossKind::Dice);
  CHECK(cfg.data.synthetic.noise_level == 0.0);

  CHECK_THROWS_AS(apply_override(tree, "loss.k_hrad=5"), ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "loss.k_hard=many"), ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "loss.k_hard"), ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "loss..k_hard=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(tree, "loss=3"), ConfigError);
}

TEST_CASE("file then overrides") {
  const auto dir = testing::scratch_dir("config_file");
  io::write_text(dir / "c.json", R"({"loss": {"k_hard": 10, "margin": 0.2}, "seed": 4})");
  const auto cfg = load_config(dir / "c.json", {"loss.k_hard=20"});
  CHECK(cfg.loss.hybrid.k_hard == 20);
  CHECK(cfg.loss.hybrid.margin == 0.2);
  CHECK(cfg.seed == 4);
  CHECK(cfg.optim.batch_size_seg == 16);

  io::write_text(dir / "bad.json", R"({"los": {}})");
  CHECK_THROWS_AS(load_config(dir / "bad.json", {}), ConfigError);
  io::write_text(dir / "broken.json", "{");
  CHECK_THROWS_AS(load_config(dir / "broken.json", {}), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "absent.json", {}), ConfigError);
  CHECK_THROWS_AS(load_config("", {"loss.margin=2"}), ConfigError);
}

TEST_CASE("validation names the key") {
  PipelineConfig cfg;
  cfg.optim.batch_size_seg = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("batch_size_seg"), ConfigError);
  cfg = PipelineConfig{};
  cfg.data.seg_val = 200;
  cfg.data.seg_test = 100;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PipelineConfig{};
  cfg.loss.hybrid.lambda_weight = -1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("lambda_weight"), ConfigError);
  CHECK_THROWS_AS(parse_loss_kind("l2"), ConfigError);
}

TEST_CASE("derived options carry the config") {
  PipelineConfig cfg;
  cfg.no_mask = true;
  cfg.seed = 9;
  const auto c = cfg.cls_options(3);
  CHECK(c.spec.input_channels == 4);
  CHECK(c.no_mask);
  CHECK(c.seed == 9);
  const auto s = cfg.seg_options();
  CHECK(s.spec.input_channels == 3);
  CHECK(s.loss.hybrid.k_hard == 30);
  CHECK(config_schema_text().find("loss.k_hard") != std::string::npos);
}
