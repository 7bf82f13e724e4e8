#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mbseg/nn/layers.hpp"

namespace mbseg {

using nn::Mode;

/// Shape of the pluggable backbone. Only the built-in "plain" encoder-decoder
/// is available; stage `l` has `base_width << l` channels.
struct BackboneSpec {
  std::string name = "plain";
  int input_channels = 3;
  int base_width = 8;
  int depth = 3;
  int dilation_last_stage = 2;

  int width(int level) const { return base_width << level; }

  void validate() const {
    if (name != "plain") throw ConfigError("unsupported backbone '" + name + "'");
    if (input_channels < 1) throw ConfigError("backbone.input_channels must be >= 1");
    if (base_width < 1) throw ConfigError("backbone.base_width must be >= 1");
    if (depth < 1 || depth > 6) throw ConfigError("backbone.depth must lie in [1,6]");
    if (dilation_last_stage < 1) throw ConfigError("backbone.dilation_last_stage must be >= 1");
  }

  bool operator==(const BackboneSpec&) const = default;
};

/// Strided conv-BN-ReLU stages; records each stage's input size for the decoder.
template <typename Scalar>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const BackboneSpec& spec, Rng& rng) {
    for (int l = 0; l < spec.depth; ++l) {
      const int in = l == 0 ? spec.input_channels : spec.width(l - 1);
      stages_.emplace_back(typename nn::Conv2d<Scalar>::Options{in, spec.width(l), 3, 2, 1, 1, false}, rng);
    }
  }

  int out_channels() const { return stages_.back().conv().options().out; }
  int in_channels() const { return stages_.front().conv().options().in; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    sizes_.clear();
    Tensor<Scalar> h = x;
    for (auto& s : stages_) {
      sizes_.emplace_back(h.h(), h.w());
      h = s.forward(h, mode);
    }
    return h;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> g = dy;
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) g = it->backward(g);
    return g;
  }

  /// Input (height, width) of each stage from the last forward pass.
  const std::vector<std::pair<int, int>>& level_sizes() const { return sizes_; }

  void collect(nn::ParamRefs<Scalar>& out, const std::string& prefix) {
    for (std::size_t l = 0; l < stages_.size(); ++l) stages_[l].collect(out, prefix + std::to_string(l) + ".");
  }

 private:
  std::vector<nn::ConvBlock<Scalar>> stages_;
  std::vector<std::pair<int, int>> sizes_;
};

/// Skip-free decoder: per level, bilinear upsample then conv-BN-ReLU; a 1x1
/// convolution with one output channel and a sigmoid produce the mask.
template <typename Scalar>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const BackboneSpec& spec, Rng& rng) {
    for (int l = spec.depth - 1; l >= 0; --l) {
      const int out = spec.width(l > 0 ? l - 1 : 0);
      blocks_.emplace_back(typename nn::Conv2d<Scalar>::Options{spec.width(l), out, 3, 1, 1, 1, false}, rng);
      ups_.emplace_back();
    }
    head_ = nn::Conv2d<Scalar>({spec.width(0), 1, 1, 1, 0, 1, true}, rng);
  }

  int in_channels() const { return blocks_.front().conv().options().in; }

  /// `sizes` are the encoder level sizes, shallowest first.
  Tensor<Scalar> forward(const Tensor<Scalar>& features, const std::vector<std::pair<int, int>>& sizes, Mode mode) {
    if (sizes.size() != blocks_.size()) throw ContractViolation("decoder: level count mismatch");
    Tensor<Scalar> h = features;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto [th, tw] = sizes[sizes.size() - 1 - i];
      h = blocks_[i].forward(ups_[i].forward(h, th, tw), mode);
    }
    return sigmoid_.forward(head_.forward(h, mode), mode);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dprob) {
    Tensor<Scalar> g = head_.backward(sigmoid_.backward(dprob));
    for (std::size_t i = blocks_.size(); i-- > 0;) g = ups_[i].backward(blocks_[i].backward(g));
    return g;
  }

  void collect(nn::ParamRefs<Scalar>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + std::to_string(i) + ".");
    head_.collect(out, prefix + "head.");
  }

 private:
  std::vector<nn::ConvBlock<Scalar>> blocks_;
  std::vector<nn::Upsample<Scalar>> ups_;
  nn::Conv2d<Scalar> head_;
  nn::Sigmoid<Scalar> sigmoid_;
};

/// Coarse segmenter: image (N x 3 x H x W) -> lesion probabilities (N x 1 x H x W).
template <typename Scalar>
class SegmentationNet {
 public:
  SegmentationNet() = default;
  SegmentationNet(const BackboneSpec& spec, Rng& rng) : spec_(spec), encoder_(spec, rng), decoder_(spec, rng) {}

  const BackboneSpec& spec() const { return spec_; }
  Encoder<Scalar>& encoder() { return encoder_; }
  const Encoder<Scalar>& encoder() const { return encoder_; }
  Decoder<Scalar>& decoder() { return decoder_; }
  const Decoder<Scalar>& decoder() const { return decoder_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) {
    if (x.c() != spec_.input_channels) throw ContractViolation("segmentation net: expected 3-channel input");
    return decoder_.forward(encoder_.forward(x, mode), encoder_.level_sizes(), mode);
  }

  void backward(const Tensor<Scalar>& dprob) { encoder_.backward(decoder_.backward(dprob)); }

  nn::ParamRefs<Scalar> parameters() {
    nn::ParamRefs<Scalar> out;
    encoder_.collect(out, "encoder.");
    decoder_.collect(out, "decoder.");
    return out;
  }

 private:
  BackboneSpec spec_;
  Encoder<Scalar> encoder_;
  Decoder<Scalar> decoder_;
};

/// Mask-guided classifier: 4-channel input, strided stages, a dilated final
/// stage in place of the last down-sampling, global average pooling and a
/// fully connected softmax head.
template <typename Scalar>
class ClassifierNet {
 public:
  ClassifierNet() = default;
  ClassifierNet(const BackboneSpec& spec, int num_classes, Rng& rng) : spec_(spec), num_classes_(num_classes) {
    for (int l = 0; l < spec.depth; ++l) {
      const int in = l == 0 ? spec.input_channels : spec.width(l - 1);
      trunk_.emplace_back(typename nn::Conv2d<Scalar>::Options{in, spec.width(l), 3, 2, 1, 1, false}, rng);
    }
    const int d = spec.dilation_last_stage;
    const int feat = spec.width(spec.depth);
    trunk_.emplace_back(typename nn::Conv2d<Scalar>::Options{spec.width(spec.depth - 1), feat, 3, 1, d, d, false}, rng);
    trunk_.emplace_back(typename nn::Conv2d<Scalar>::Options{feat, feat, 3, 1, d, d, false}, rng);
    fc_ = nn::Linear<Scalar>(feat, num_classes, rng);
  }

  const BackboneSpec& spec() const { return spec_; }
  int num_classes() const { return num_classes_; }
  int feature_channels() const { return fc_.in_features(); }

  /// First convolution; its input channels are (R, G, B, mask).
  nn::Conv2d<Scalar>& stem() { return trunk_.front().conv(); }

  /// FC weights, shape (feature_channels, num_classes).
  Eigen::Map<Grid<Scalar>> fc_weights() { return fc_.weight_matrix(); }
  Eigen::Map<const Grid<Scalar>> fc_weights() const { return fc_.weight_matrix(); }

  /// Output of the last convolutional stage (N x feature_channels x h x w).
  Tensor<Scalar> features(const Tensor<Scalar>& x, Mode mode) {
    if (x.c() != spec_.input_channels) {
      throw ContractViolation("classifier: expected " + std::to_string(spec_.input_channels) + "-channel input");
    }
    Tensor<Scalar> h = x;
    for (auto& b : trunk_) h = b.forward(h, mode);
    return h;
  }

  /// Logits (N x C) from a feature grid.
  Grid<Scalar> logits_from_features(const Tensor<Scalar>& feats, Mode mode) {
    return fc_.forward(gap_.forward(feats), mode);
  }

  Grid<Scalar> logits(const Tensor<Scalar>& x, Mode mode) { return logits_from_features(features(x, mode), mode); }

  /// Class probabilities (N x C), rows sum to 1.
  Grid<Scalar> forward(const Tensor<Scalar>& x, Mode mode) { return nn::softmax_rows(logits(x, mode)); }

  void backward(const Grid<Scalar>& dlogits) {
    Tensor<Scalar> g = gap_.backward(fc_.backward(dlogits));
    for (auto it = trunk_.rbegin(); it != trunk_.rend(); ++it) g = it->backward(g);
  }

  nn::ParamRefs<Scalar> parameters() {
    nn::ParamRefs<Scalar> out;
    for (std::size_t i = 0; i < trunk_.size(); ++i) trunk_[i].collect(out, "trunk." + std::to_string(i) + ".");
    fc_.collect(out, "fc.");
    return out;
  }

 private:
  BackboneSpec spec_;
  int num_classes_ = 0;
  std::vector<nn::ConvBlock<Scalar>> trunk_;
  nn::GlobalAvgPool<Scalar> gap_;
  nn::Linear<Scalar> fc_;
};

/// Enhanced segmenter: coarse encoder, an E-layer fusing encoder features
/// with localization maps (concat -> 1x1 conv -> BN -> ReLU), coarse decoder.
template <typename Scalar>
class EnhancedNet {
 public:
  EnhancedNet() = default;
  EnhancedNet(const SegmentationNet<Scalar>& coarse, int map_channels, Rng& rng)
      : spec_(coarse.spec()), map_channels_(map_channels), encoder_(coarse.encoder()), decoder_(coarse.decoder()) {
    const int c = encoder_.out_channels();
    e_layer_ = nn::ConvBlock<Scalar>({c + map_channels, c, 1, 1, 0, 1, false}, rng);
  }

  const BackboneSpec& spec() const { return spec_; }
  int map_channels() const { return map_channels_; }
  Encoder<Scalar>& encoder() { return encoder_; }
  Decoder<Scalar>& decoder() { return decoder_; }
  nn::ConvBlock<Scalar>& e_layer() { return e_layer_; }

  /// `maps` is N x map_channels x h x w at any resolution; it is resized to the encoder grid.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>& maps, Mode mode) {
    if (x.c() != spec_.input_channels) throw ContractViolation("enhanced net: expected 3-channel input");
    if (maps.c() != map_channels_ || maps.n() != x.n()) {
      throw ContractViolation("enhanced net: expected " + std::to_string(map_channels_) + " localization map(s) per image");
    }
    const Tensor<Scalar> feats = encoder_.forward(x, mode);
    const int c = feats.c();
    Tensor<Scalar> fused(x.n(), c + map_channels_, feats.h(), feats.w());
    for (int i = 0; i < x.n(); ++i) {
      fused.sample(i).topRows(c) = feats.sample(i);
      for (int m = 0; m < map_channels_; ++m) {
        fused.plane(i, c + m) = nn::resize_bilinear(maps.plane(i, m), feats.h(), feats.w());
      }
    }
    return decoder_.forward(e_layer_.forward(fused, mode), encoder_.level_sizes(), mode);
  }

  void backward(const Tensor<Scalar>& dprob) {
    const Tensor<Scalar> dfused = e_layer_.backward(decoder_.backward(dprob));
    const int c = encoder_.out_channels();
    Tensor<Scalar> dfeat(dfused.n(), c, dfused.h(), dfused.w());
    for (int i = 0; i < dfused.n(); ++i) dfeat.sample(i) = dfused.sample(i).topRows(c);
    encoder_.backward(dfeat);
  }

  nn::ParamRefs<Scalar> parameters() {
    nn::ParamRefs<Scalar> out;
    encoder_.collect(out, "encoder.");
    e_layer_.collect(out, "e_layer.");
    decoder_.collect(out, "decoder.");
    return out;
  }

 private:
  BackboneSpec spec_;
  int map_channels_ = 1;
  Encoder<Scalar> encoder_;
  nn::ConvBlock<Scalar> e_layer_;
  Decoder<Scalar> decoder_;
};

/// Coarse segmenter with a randomly initialized prediction head.
template <typename Scalar = float>
SegmentationNet<Scalar> build_coarse_sn(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.input_channels != 3) throw ConfigError("coarse segmenter needs input_channels = 3");
  Rng rng = Rng::keyed(seed, "coarse_sn");
  return SegmentationNet<Scalar>(spec, rng);
}

/// Sets the 4th input channel of a stem convolution to the mean of the RGB channels.
///
/// `weights` is out x (in * k * k) in [out][in][ky][kx] order.
template <typename Derived>
void init_fourth_channel(Eigen::MatrixBase<Derived>& weights, int in_channels, int kernel) {
  using Scalar = typename Derived::Scalar;
  if (in_channels != 4) throw ContractViolation("init_fourth_channel: stem must have 4 input channels");
  const Eigen::Index taps = Eigen::Index(kernel) * kernel;
  if (weights.cols() != 4 * taps) throw ContractViolation("init_fourth_channel: weight shape mismatch");
  for (Eigen::Index f = 0; f < weights.rows(); ++f) {
    for (Eigen::Index t = 0; t < taps; ++t) {
      weights(f, 3 * taps + t) = (weights(f, t) + weights(f, taps + t) + weights(f, 2 * taps + t)) / Scalar(3);
    }
  }
}

template <typename Scalar>
void init_fourth_channel(nn::Conv2d<Scalar>& stem) {
  auto w = stem.weight_matrix();
  init_fourth_channel(w, stem.options().in, stem.options().kernel);
}

/// Mask-guided classifier; the mask channel of the stem starts as the RGB mean.
template <typename Scalar = float>
ClassifierNet<Scalar> build_mask_cn(const BackboneSpec& spec, int num_classes, std::uint64_t seed) {
  spec.validate();
  if (spec.input_channels != 4) throw ConfigError("mask-guided classifier needs input_channels = 4");
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  Rng rng = Rng::keyed(seed, "mask_cn");
  ClassifierNet<Scalar> net(spec, num_classes, rng);
  init_fourth_channel(net.stem());
  return net;
}

}  // namespace mbseg
