#include <doctest.h>

#include <set>

#include "mbseg/checkpoint.hpp"
#include "mbseg/io.hpp"
#include "mbseg/pipeline.hpp"
#include "support.hpp"

using namespace mbseg;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny(const fs::path& dir) {
  PipelineConfig cfg;
  cfg.data.synthetic.num_seg = 24;
  cfg.data.synthetic.num_cls = 24;
  cfg.data.synthetic.image_size = 32;
  cfg.augment.target_h = cfg.augment.target_w = 32;
  cfg.data.seg_val = cfg.data.seg_test = 6;
  cfg.data.cls_val = cfg.data.cls_test = 6;
  cfg.backbone.base_width = 4;
  cfg.optim.max_epochs = 1;
  cfg.output_dir = dir.string();
  return cfg;
}

void check_partition(const SplitIndices& s, std::size_t n) {
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    CHECK(std::is_sorted(part->begin(), part->end()));
    all.insert(part->begin(), part->end());
  }
  CHECK(all.size() == s.train.size() + s.val.size() + s.test.size());
  CHECK(all.size() <= n);
}

}  // namespace

TEST_CASE("splits are seeded disjoint partitions") {
  const auto s = split_indices(300, 50, 50, 1.0, 0, "seg");
  CHECK(s.train.size() == 200);
  CHECK(s.val.size() == 50);
  CHECK(s.test.size() == 50);
  check_partition(s, 300);

  const auto again = split_indices(300, 50, 50, 1.0, 0, "seg");
  CHECK(again.test == s.test);
  CHECK(split_indices(300, 50, 50, 1.0, 1, "seg").test != s.test);

  // A training fraction keeps val and test fixed.
  const auto half = split_indices(300, 50, 50, 0.25, 0, "seg");
  CHECK(half.train.size() == 50);
  CHECK(half.test == s.test);
  CHECK(half.val == s.val);
  CHECK(split_indices(10, 3, 3, 0.1, 0, "x").train.size() == 1);
  CHECK_THROWS_AS(split_indices(10, 5, 5, 1.0, 0, "x"), ConfigError);
}

TEST_CASE("folds cover every sample once") {
  const auto f = fold_indices(10, 4, 3, "seg");
  REQUIRE(f.size() == 4);
  std::set<std::size_t> all;
  for (const auto& fold : f) {
    CHECK((fold.size() == 2 || fold.size() == 3));
    all.insert(fold.begin(), fold.end());
  }
  CHECK(all.size() == 10);
  CHECK_THROWS_AS(fold_indices(3, 4, 0, "seg"), ConfigError);
}

TEST_CASE("mask and map artifacts round trip") {
  const auto dir = testing::scratch_dir("artifacts");
  Rng rng(5);
  std::vector<Grid<float>> masks{testing::random_probs(rng, 3, 4).cast<float>(), Grid<float>::Zero(2, 2)};
  save_masks(dir / "masks", {"a", "b"}, masks);
  const auto back = load_masks(dir / "masks");
  CHECK(back.at("a") == masks[0]);
  CHECK(back.at("b") == masks[1]);

  LocalizationMap m = normalize_map(testing::random_probs(rng, 5, 5), 1);
  m.raw_min = -0.1 / 3;
  save_maps(dir / "cams", {"a"}, {{m, m}});
  const auto maps = load_maps(dir / "cams");
  REQUIRE(maps.at("a").size() == 2);
  CHECK(maps.at("a")[1] == m);

  fs::remove(dir / "masks" / "manifest.json");
  CHECK_THROWS_AS(load_masks(dir / "masks"), IoError);
}

TEST_CASE("stages run in order and resume") {
  const auto dir = testing::scratch_dir("pipeline_stages");
  {
    Pipeline p(tiny(dir));
    CHECK_THROWS_AS(p.run_stage(Stage::TrainClassifier), ConfigError);
    p.run_stage(Stage::TrainCoarse);
    CHECK(p.state().complete(Stage::TrainCoarse));
    CHECK(fs::exists(dir / "checkpoints" / "coarse_sn" / "manifest.json"));
    CHECK_THROWS_AS(p.evaluate(), ConfigError);
  }
  const auto coarse = io::read_text(dir / "checkpoints" / "coarse_sn" / "manifest.json");
  {
    Pipeline p(tiny(dir));
    CHECK(p.state().complete(Stage::TrainCoarse));
    p.run(true);
    CHECK(p.state().all_complete());
    CHECK(io::read_text(dir / "checkpoints" / "coarse_sn" / "manifest.json") == coarse);
    const auto r = p.evaluate();
    CHECK(r.coarse.ids.size() == 6);
    CHECK(r.cls_probs.rows() == 6);
    p.emit(r, 2);
    CHECK(fs::exists(dir / "reports" / "summary.txt"));
    CHECK(fs::exists(dir / "curves" / "train_enhanced.png"));
    CHECK(std::distance(fs::directory_iterator(dir / "reports" / "overlays"), fs::directory_iterator{}) == 2);

    // The saved checkpoint reproduces its recorded validation metric.
    const auto& d = p.datasets();
    auto net = coarse_from_checkpoint(load_checkpoint(dir / "checkpoints" / "coarse_sn"));
    const auto preds = predict_masks(net, images_of(d.seg_val), p.config().input(), 16);
    const double ja = segmentation_report(ids_of(d.seg_val), preds, masks_of(d.seg_val)).mean.ja;
    CHECK(ja == doctest::Approx(p.state().at(Stage::TrainCoarse).metric).epsilon(1e-6));

    // Rerunning an upstream stage marks downstream stages stale.
    p.run_stage(Stage::GenerateMasks);
    CHECK(!p.state().complete(Stage::TrainClassifier));
    CHECK(!p.state().complete(Stage::TrainEnhanced));
  }
  auto changed = tiny(dir);
  changed.loss.hybrid.k_hard = 5;
  CHECK_THROWS_AS(Pipeline{changed}, ConfigError);
  auto cosmetic = tiny(dir);
  cosmetic.overlay_samples = 9;
  CHECK_NOTHROW(Pipeline{cosmetic});
}

TEST_CASE("experiments") {
  const auto root = testing::scratch_dir("experiments");
  SUBCASE("sweep") {
    auto cfg = tiny(root / "sweep");
    const auto r = run_sweep(cfg, "k_hard", {5, 10});
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].ok);
    CHECK(r.rows[1].value == 10);
    CHECK(sweep_csv(r).rfind("k_hard,", 0) == 0);
    CHECK_THROWS_AS(run_sweep(cfg, "gamma", {1}), ConfigError);
    CHECK(default_sweep_values("margin") == std::vector<double>{0.1, 0.2, 0.3, 0.4});
  }
  SUBCASE("loss comparison") {
    const auto rows = compare_losses(tiny(root / "losses"), {"dice", "wce"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].loss == "wce");
    CHECK(rows[0].ok);
    CHECK(loss_table(rows).find("wce") != std::string::npos);
  }
  SUBCASE("fine-tune") {
    const auto pre = root / "pre";
    Pipeline(tiny(pre)).run(false);
    auto cfg = tiny(root / "ft");
    cfg.fine_tune.pretrained = pre.string();
    cfg.fine_tune.num_folds = 2;
    cfg.data.synthetic.seed = 99;
    const auto r = fine_tune(cfg);
    REQUIRE(r.folds.size() == 2);
    std::set<std::string> tested;
    for (const auto& f : r.folds) tested.insert(f.seg_test_ids.begin(), f.seg_test_ids.end());
    CHECK(tested.size() == 24);
    CHECK(fine_tune_table(r).find("fine-tuned") != std::string::npos);

    cfg.backbone.base_width = 8;
    CHECK_THROWS_AS(fine_tune(cfg), ConfigError);
  }
}
