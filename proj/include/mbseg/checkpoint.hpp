#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mbseg/networks.hpp"

namespace mbseg {

struct WeightArray {
  std::vector<int> shape;
  std::vector<float> values;
  bool operator==(const WeightArray&) const = default;
};

/// Network weights keyed by layer path plus the metadata needed to rebuild it.
struct Checkpoint {
  std::string kind;  // coarse_sn | mask_cn | enhanced_sn
  BackboneSpec spec;
  int num_classes = 0;
  int map_channels = 0;
  int epoch = 0;
  double metric = 0.0;
  std::string metric_name;
  std::uint64_t seed = 0;
  std::map<std::string, WeightArray> weights;

  bool operator==(const Checkpoint&) const = default;
};

/// Copies every parameter and running statistic of `net` into a checkpoint.
template <typename Net>
Checkpoint capture_weights(Net& net) {
  Checkpoint ck;
  for (auto& [name, p] : net.parameters()) {
    WeightArray a;
    a.shape = p->shape;
    a.values.resize(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) a.values[static_cast<std::size_t>(i)] = float(p->value[i]);
    ck.weights.emplace(name, std::move(a));
  }
  return ck;
}

/// Loads weights into `net`; every tensor of the network must be present with a matching shape.
template <typename Net>
void restore_weights(Net& net, const Checkpoint& ck) {
  using Scalar = typename decltype(net.parameters().front().second->value)::Scalar;
  for (auto& [name, p] : net.parameters()) {
    const auto it = ck.weights.find(name);
    if (it == ck.weights.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape != p->shape) throw ConfigError("checkpoint tensor '" + name + "' has a mismatched shape");
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value[i] = Scalar(it->second.values[static_cast<std::size_t>(i)]);
  }
}

/// Writes manifest.json plus one float32 file per tensor into `dir`.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

SegmentationNet<float> coarse_from_checkpoint(const Checkpoint& ck);
ClassifierNet<float> classifier_from_checkpoint(const Checkpoint& ck);
EnhancedNet<float> enhanced_from_checkpoint(const Checkpoint& ck);

/// Enhanced segmenter whose encoder and decoder start from a coarse checkpoint;
/// the E-layer is freshly initialized from `seed`.
EnhancedNet<float> build_enhanced_sn(const Checkpoint& coarse_ckpt, int map_channels, std::uint64_t seed);

}  // namespace mbseg
