#include "mbseg/checkpoint.hpp"

#include "mbseg/io.hpp"
#include "mbseg/serialization.hpp"

namespace mbseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr const char* kFormat = "mbseg-checkpoint";

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}
}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& dir) {
  io::ensure_directory(dir);
  json tensors = json::array();
  for (const auto& [name, a] : ck.weights) {
    const std::string file = name + ".bin";
    io::write_f32(dir / file, a.values);
    tensors.push_back({{"name", name}, {"shape", a.shape}, {"dtype", "float32"}, {"file", file}});
  }
  json manifest = {
      {"format", kFormat},
      {"version", 1},
      {"kind", ck.kind},
      {"spec", ck.spec},
      {"num_classes", ck.num_classes},
      {"map_channels", ck.map_channels},
      {"metadata",
       {{"epoch", ck.epoch}, {"metric", ck.metric}, {"metric_name", ck.metric_name}, {"seed", ck.seed}}},
      {"tensors", tensors},
  };
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  json m;
  try {
    m = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  if (m.value("format", "") != kFormat) throw IoError(dir.string() + " is not a checkpoint directory");
  Checkpoint ck;
  try {
    ck.kind = m.at("kind").get<std::string>();
    ck.spec = m.at("spec").get<BackboneSpec>();
    ck.num_classes = m.at("num_classes").get<int>();
    ck.map_channels = m.at("map_channels").get<int>();
    const auto& meta = m.at("metadata");
    ck.epoch = meta.at("epoch").get<int>();
    ck.metric = meta.at("metric").get<double>();
    ck.metric_name = meta.at("metric_name").get<std::string>();
    ck.seed = meta.at("seed").get<std::uint64_t>();
    for (const auto& t : m.at("tensors")) {
      if (t.at("dtype") != "float32") throw IoError("unsupported dtype in " + dir.string());
      WeightArray a;
      a.shape = t.at("shape").get<std::vector<int>>();
      a.values = io::read_f32(dir / t.at("file").get<std::string>(), element_count(a.shape));
      ck.weights.emplace(t.at("name").get<std::string>(), std::move(a));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  return ck;
}

SegmentationNet<float> coarse_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "coarse_sn") throw ConfigError("expected a coarse_sn checkpoint, got '" + ck.kind + "'");
  auto net = build_coarse_sn(ck.spec, ck.seed);
  restore_weights(net, ck);
  return net;
}

ClassifierNet<float> classifier_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "mask_cn") throw ConfigError("expected a mask_cn checkpoint, got '" + ck.kind + "'");
  auto net = build_mask_cn(ck.spec, ck.num_classes, ck.seed);
  restore_weights(net, ck);
  return net;
}

EnhancedNet<float> enhanced_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "enhanced_sn") throw ConfigError("expected an enhanced_sn checkpoint, got '" + ck.kind + "'");
  SegmentationNet<float> skeleton = build_coarse_sn(ck.spec, ck.seed);
  Rng rng = Rng::keyed(ck.seed, "e_layer");
  EnhancedNet<float> net(skeleton, ck.map_channels, rng);
  restore_weights(net, ck);
  return net;
}

EnhancedNet<float> build_enhanced_sn(const Checkpoint& coarse_ckpt, int map_channels, std::uint64_t seed) {
  if (map_channels < 1) throw ConfigError("map_channels must be >= 1");
  const SegmentationNet<float> coarse = coarse_from_checkpoint(coarse_ckpt);
  Rng rng = Rng::keyed(seed, "e_layer");
  return EnhancedNet<float>(coarse, map_channels, rng);
}

}  // namespace mbseg
