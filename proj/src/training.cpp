#include <cmath>
#include <numeric>

#include "mbseg/nn/optim.hpp"
#include "mbseg/training.hpp"

namespace mbseg {

void OptimConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("optim.learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("optim: betas must lie in [0,1)");
  if (weight_decay < 0) throw ConfigError("optim.weight_decay must be >= 0");
  if (batch_size_seg < 1) throw ConfigError("optim.batch_size_seg must be >= 1");
  if (batch_size_cls < 1) throw ConfigError("optim.batch_size_cls must be >= 1");
  if (max_epochs < 1) throw ConfigError("optim.max_epochs must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("optim.early_stop_patience must be >= 1");
}

namespace {

using Affine = Eigen::Matrix<double, 2, 3>;

nn::AdamOptions adam_options(const OptimConfig& o) {
  nn::AdamOptions a;
  a.learning_rate = o.learning_rate;
  a.beta1 = o.beta1;
  a.beta2 = o.beta2;
  a.weight_decay = o.weight_decay;
  return a;
}

bool needs_resize(int h, int w, const InputOptions& opt) {
  return h != opt.augment.target_h || w != opt.augment.target_w;
}

Affine identity_transform(int h, int w, const InputOptions& opt) {
  const auto cfg = AugmentationConfig::identity(opt.augment.target_h, opt.augment.target_w);
  return augmentation_transform(AugmentationDraw{}, cfg, h, w);
}

Grid<float> prepare_soft(const Grid<float>& map, const InputOptions& opt) {
  const int h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  if (!needs_resize(h, w, opt)) return map;
  return warp_soft(map, identity_transform(h, w, opt), opt.augment.target_h, opt.augment.target_w);
}

Tensor<float> stack(const std::vector<Tensor<float>>& parts) {
  const auto& f = parts.front();
  Tensor<float> out(static_cast<int>(parts.size()), f.c(), f.h(), f.w());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].c() != f.c() || parts[i].h() != f.h() || parts[i].w() != f.w()) {
      throw ContractViolation("batch: inputs differ in shape");
    }
    out.sample(static_cast<int>(i)) = parts[i].sample(0);
  }
  return out;
}

/// One training example after augmentation: image (1 x 3 x H x W), extra planes and mask.
struct Prepared {
  Tensor<float> image;
  std::vector<Grid<float>> planes;
  Mask mask;
};

Prepared prepare_train(const std::string& id, const Tensor<float>& image, const Mask* mask,
                       const std::vector<Grid<float>>& planes, const InputOptions& opt, std::uint64_t seed,
                       int epoch) {
  Prepared p;
  const auto& cfg = opt.augment;
  const int h = image.h(), w = image.w();
  Affine m;
  bool warp = true;
  if (opt.augment_enabled) {
    Rng rng = augmentation_rng(seed, id, epoch);
    m = augmentation_transform(draw_augmentation(cfg, rng), cfg, h, w);
  } else if (needs_resize(h, w, opt)) {
    m = identity_transform(h, w, opt);
  } else {
    warp = false;
  }
  if (warp) {
    p.image = warp_bilinear(image, m, cfg.target_h, cfg.target_w);
    if (mask) p.mask = warp_nearest(*mask, m, cfg.target_h, cfg.target_w);
    for (const auto& g : planes) p.planes.push_back(warp_soft(g, m, cfg.target_h, cfg.target_w));
  } else {
    p.image = image;
    if (mask) p.mask = *mask;
    p.planes = planes;
  }
  if (cfg.whitening) p.image = whiten(p.image);
  return p;
}

Tensor<float> planes_tensor(const std::vector<std::vector<Grid<float>>>& planes) {
  const auto& f = planes.front().front();
  const int c = static_cast<int>(planes.front().size());
  Tensor<float> out(static_cast<int>(planes.size()), c, static_cast<int>(f.rows()), static_cast<int>(f.cols()));
  for (std::size_t i = 0; i < planes.size(); ++i) {
    for (int ch = 0; ch < c; ++ch) out.plane(static_cast<int>(i), ch) = planes[i][static_cast<std::size_t>(ch)];
  }
  return out;
}

/// Shared epoch loop: shuffled mini-batches, validation after every epoch,
/// best-metric snapshot and patience-based stopping.
template <typename StepFn, typename EvalFn, typename SnapFn>
TrainResult fit(std::size_t n_train, int batch_size, const OptimConfig& optim, std::uint64_t seed,
                const std::string& stage, StepFn step, EvalFn evaluate, SnapFn snapshot,
                const std::function<void(int, double, double)>& on_epoch) {
  if (n_train == 0) throw ContractViolation(stage + ": empty training set");
  TrainResult result;
  bool have_best = false;
  int best_epoch = 0;
  std::vector<std::size_t> order(n_train);
  for (int epoch = 1; epoch <= optim.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::keyed(seed, stage + "/shuffle", static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(batch_size));
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const double loss = step(batch, epoch);
      if (!std::isfinite(loss)) throw TrainingError(stage + ": loss became non-finite", epoch);
      loss_sum += loss * static_cast<double>(batch.size());
    }
    const double train_loss = loss_sum / static_cast<double>(n_train);
    const double metric = evaluate();
    result.curve.epoch.push_back(epoch);
    result.curve.train_loss.push_back(train_loss);
    result.curve.val_metric.push_back(metric);
    if (on_epoch) on_epoch(epoch, train_loss, metric);
    if (!have_best || metric > result.checkpoint.metric) {
      result.checkpoint = snapshot();
      result.checkpoint.epoch = epoch;
      result.checkpoint.metric = metric;
      best_epoch = epoch;
      have_best = true;
    }
    if (epoch - best_epoch >= optim.early_stop_patience) break;
  }
  return result;
}

void check_seg_inputs(const std::vector<SegSample>& train, const std::vector<SegSample>& val, const char* stage) {
  if (train.empty() || val.empty()) throw ContractViolation(std::string(stage) + ": train and val sets must be nonempty");
}

std::vector<MapStack> maps_at_image_size(const std::vector<SegSample>& samples, const std::vector<MapStack>& maps) {
  if (maps.size() != samples.size()) throw ContractViolation("train_enhanced: one map stack per sample required");
  std::vector<MapStack> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto& m : maps[i]) {
      out[i].push_back(
          nn::resize_bilinear(m, samples[i].image.h(), samples[i].image.w()).cwiseMax(0.0f).cwiseMin(1.0f));
    }
  }
  return out;
}

}  // namespace

Tensor<float> prepare_input(const Tensor<float>& image, const InputOptions& opt) {
  Tensor<float> x = image;
  if (needs_resize(image.h(), image.w(), opt)) {
    x = warp_bilinear(image, identity_transform(image.h(), image.w(), opt), opt.augment.target_h,
                      opt.augment.target_w);
  }
  if (opt.augment.whitening) x = whiten(x);
  return x;
}

std::vector<Grid<float>> predict_masks(SegmentationNet<float>& net, const std::vector<Tensor<float>>& images,
                                       const InputOptions& opt, int batch_size) {
  std::vector<Grid<float>> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor<float>> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(prepare_input(images[i], opt));
    const Tensor<float> pred = net.forward(stack(xs), Mode::Eval);
    for (std::size_t i = start; i < end; ++i) {
      const Grid<float> p = pred.plane(static_cast<int>(i - start), 0);
      const auto& img = images[i];
      out.push_back(p.rows() == img.h() && p.cols() == img.w()
                        ? p
                        : Grid<float>(nn::resize_bilinear(p, img.h(), img.w()).cwiseMax(0.0f).cwiseMin(1.0f)));
    }
  }
  return out;
}

std::vector<Grid<float>> predict_enhanced(EnhancedNet<float>& net, const std::vector<Tensor<float>>& images,
                                          const std::vector<MapStack>& maps, const InputOptions& opt,
                                          int batch_size) {
  if (maps.size() != images.size()) throw ContractViolation("predict_enhanced: one map stack per image required");
  std::vector<Grid<float>> out;
  out.reserve(images.size());
  const int th = opt.augment.target_h, tw = opt.augment.target_w;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor<float>> xs;
    std::vector<std::vector<Grid<float>>> ms;
    for (std::size_t i = start; i < end; ++i) {
      xs.push_back(prepare_input(images[i], opt));
      std::vector<Grid<float>> resized;
      for (const auto& m : maps[i]) resized.push_back(nn::resize_bilinear(m, th, tw).cwiseMax(0.0f).cwiseMin(1.0f));
      ms.push_back(std::move(resized));
    }
    const Tensor<float> pred = net.forward(stack(xs), planes_tensor(ms), Mode::Eval);
    for (std::size_t i = start; i < end; ++i) {
      const Grid<float> p = pred.plane(static_cast<int>(i - start), 0);
      const auto& img = images[i];
      out.push_back(p.rows() == img.h() && p.cols() == img.w()
                        ? p
                        : Grid<float>(nn::resize_bilinear(p, img.h(), img.w()).cwiseMax(0.0f).cwiseMin(1.0f)));
    }
  }
  return out;
}

Grid<double> predict_classes(ClassifierNet<float>& net, const std::vector<Tensor<float>>& images,
                             const std::vector<Grid<float>>& masks, const InputOptions& opt, bool no_mask,
                             int batch_size) {
  if (masks.size() != images.size()) throw ContractViolation("predict_classes: one mask per image required");
  Grid<double> probs(static_cast<Eigen::Index>(images.size()), net.num_classes());
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor<float>> xs;
    for (std::size_t i = start; i < end; ++i) {
      const auto img = prepare_input(images[i], opt);
      const Grid<float> m = no_mask ? Grid<float>(Grid<float>::Zero(img.h(), img.w())) : prepare_soft(masks[i], opt);
      xs.push_back(stack_image_mask(img, m));
    }
    const Grid<float> p = net.forward(stack(xs), Mode::Eval);
    probs.middleRows(static_cast<Eigen::Index>(start), p.rows()) = p.cast<double>();
  }
  return probs;
}

std::vector<std::vector<LocalizationMap>> generate_maps(ClassifierNet<float>& net,
                                                        const std::vector<Tensor<float>>& images,
                                                        const std::vector<Grid<float>>& masks,
                                                        const InputOptions& opt, const CamOptions& cam) {
  if (masks.size() != images.size()) throw ContractViolation("generate_maps: one mask per image required");
  std::vector<std::vector<LocalizationMap>> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.push_back(cam_for_sample(net, prepare_input(images[i], opt), prepare_soft(masks[i], opt), cam));
  }
  return out;
}

TrainResult train_coarse(const std::vector<SegSample>& train, const std::vector<SegSample>& val,
                         const SegTrainOptions& opt, const Checkpoint* init) {
  check_seg_inputs(train, val, "train_coarse");
  opt.optim.validate();
  opt.loss.hybrid.validate();
  auto net = build_coarse_sn(opt.spec, opt.seed);
  if (init) restore_weights(net, *init);
  nn::Adam<float> adam(net.parameters(), adam_options(opt.optim));
  const auto val_images = images_of(val);
  const auto val_masks = masks_of(val);
  const auto val_ids = ids_of(val);

  auto step = [&](const std::vector<std::size_t>& batch, int epoch) {
    std::vector<Tensor<float>> xs;
    std::vector<Mask> ys;
    for (const auto i : batch) {
      auto p = prepare_train(train[i].id, train[i].image, &train[i].mask, {}, opt.input, opt.seed, epoch);
      xs.push_back(std::move(p.image));
      ys.push_back(std::move(p.mask));
    }
    const Tensor<float> pred = net.forward(stack(xs), Mode::Train);
    Tensor<float> grad;
    const auto loss = batch_seg_loss(pred, ys, opt.loss, &grad);
    adam.zero_grad();
    net.backward(grad);
    adam.step();
    return static_cast<double>(loss.value);
  };
  auto evaluate = [&] {
    const auto preds = predict_masks(net, val_images, opt.input, opt.optim.batch_size_seg);
    return segmentation_report(val_ids, preds, val_masks, opt.threshold).mean.ja;
  };
  auto snapshot = [&] { return capture_weights(net); };
  auto result = fit(train.size(), opt.optim.batch_size_seg, opt.optim, opt.seed, "train_coarse", step, evaluate,
                    snapshot, opt.on_epoch);
  result.checkpoint.kind = "coarse_sn";
  result.checkpoint.spec = opt.spec;
  result.checkpoint.metric_name = "val_ja";
  result.checkpoint.seed = opt.seed;
  return result;
}

TrainResult train_classifier(const std::vector<ClsSample>& train, const std::vector<Grid<float>>& train_masks,
                             const std::vector<ClsSample>& val, const std::vector<Grid<float>>& val_masks,
                             const ClsTrainOptions& opt, const Checkpoint* init) {
  if (train.empty() || val.empty()) throw ContractViolation("train_classifier: train and val sets must be nonempty");
  if (train_masks.size() != train.size() || val_masks.size() != val.size()) {
    throw ContractViolation("train_classifier: masks must be present for every sample");
  }
  opt.optim.validate();
  for (const auto& s : train) {
    if (s.label < 0 || s.label >= opt.num_classes) throw ContractViolation("train_classifier: label out of range");
  }
  auto net = build_mask_cn(opt.spec, opt.num_classes, opt.seed);
  if (init) restore_weights(net, *init);
  nn::Adam<float> adam(net.parameters(), adam_options(opt.optim));
  const auto val_images = images_of(val);
  std::vector<int> val_labels;
  for (const auto& s : val) val_labels.push_back(s.label);

  auto step = [&](const std::vector<std::size_t>& batch, int epoch) {
    std::vector<Tensor<float>> xs;
    for (const auto i : batch) {
      auto p = prepare_train(train[i].id, train[i].image, nullptr, {train_masks[i]}, opt.input, opt.seed, epoch);
      const Grid<float> m = opt.no_mask ? Grid<float>(Grid<float>::Zero(p.image.h(), p.image.w())) : p.planes[0];
      xs.push_back(stack_image_mask(p.image, m));
    }
    const Tensor<float> x = stack(xs);
    const Grid<float> logits = net.logits(x, Mode::Train);
    const Grid<float> probs = nn::softmax_rows(logits);
    Grid<float> dlogits = probs;
    double loss = 0.0;
    const float inv_n = 1.0f / static_cast<float>(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const int y = train[batch[r]].label;
      const auto row = static_cast<Eigen::Index>(r);
      loss -= std::log(std::max(static_cast<double>(probs(row, y)), 1e-12));
      dlogits(row, y) -= 1.0f;
    }
    dlogits *= inv_n;
    adam.zero_grad();
    net.backward(dlogits);
    adam.step();
    return loss / static_cast<double>(batch.size());
  };
  auto evaluate = [&] {
    const Grid<double> probs = predict_classes(net, val_images, val_masks, opt.input, opt.no_mask,
                                               opt.optim.batch_size_cls);
    return argmax_accuracy(probs, val_labels);
  };
  auto snapshot = [&] { return capture_weights(net); };
  auto result = fit(train.size(), opt.optim.batch_size_cls, opt.optim, opt.seed, "train_classifier", step, evaluate,
                    snapshot, opt.on_epoch);
  result.checkpoint.kind = "mask_cn";
  result.checkpoint.spec = opt.spec;
  result.checkpoint.num_classes = opt.num_classes;
  result.checkpoint.metric_name = "val_accuracy";
  result.checkpoint.seed = opt.seed;
  return result;
}

TrainResult train_enhanced(const std::vector<SegSample>& train, const std::vector<MapStack>& train_maps,
                           const std::vector<SegSample>& val, const std::vector<MapStack>& val_maps,
                           const Checkpoint& coarse, const SegTrainOptions& opt, const Checkpoint* init) {
  check_seg_inputs(train, val, "train_enhanced");
  if (train_maps.size() != train.size() || val_maps.size() != val.size()) {
    throw ContractViolation("train_enhanced: localization maps must be present for every sample");
  }
  opt.optim.validate();
  opt.loss.hybrid.validate();
  const int map_channels = static_cast<int>(train_maps.front().size());
  if (map_channels < 1) throw ContractViolation("train_enhanced: empty map stack");
  auto net = build_enhanced_sn(coarse, map_channels, opt.seed);
  if (init) restore_weights(net, *init);
  nn::Adam<float> adam(net.parameters(), adam_options(opt.optim));
  if (opt.freeze_encoder) adam.freeze_prefix("encoder.");
  const auto planes = maps_at_image_size(train, train_maps);
  const auto val_images = images_of(val);
  const auto val_masks = masks_of(val);
  const auto val_ids = ids_of(val);

  auto step = [&](const std::vector<std::size_t>& batch, int epoch) {
    std::vector<Tensor<float>> xs;
    std::vector<std::vector<Grid<float>>> ms;
    std::vector<Mask> ys;
    for (const auto i : batch) {
      auto p = prepare_train(train[i].id, train[i].image, &train[i].mask, planes[i], opt.input, opt.seed, epoch);
      if (static_cast<int>(p.planes.size()) != map_channels) {
        throw ContractViolation("train_enhanced: inconsistent map channel count");
      }
      xs.push_back(std::move(p.image));
      ms.push_back(std::move(p.planes));
      ys.push_back(std::move(p.mask));
    }
    const Tensor<float> pred = net.forward(stack(xs), planes_tensor(ms), Mode::Train);
    Tensor<float> grad;
    const auto loss = batch_seg_loss(pred, ys, opt.loss, &grad);
    adam.zero_grad();
    net.backward(grad);
    adam.step();
    return static_cast<double>(loss.value);
  };
  auto evaluate = [&] {
    const auto preds = predict_enhanced(net, val_images, val_maps, opt.input, opt.optim.batch_size_seg);
    return segmentation_report(val_ids, preds, val_masks, opt.threshold).mean.ja;
  };
  auto snapshot = [&] { return capture_weights(net); };
  auto result = fit(train.size(), opt.optim.batch_size_seg, opt.optim, opt.seed, "train_enhanced", step, evaluate,
                    snapshot, opt.on_epoch);
  result.checkpoint.kind = "enhanced_sn";
  result.checkpoint.spec = coarse.spec;
  result.checkpoint.map_channels = map_channels;
  result.checkpoint.metric_name = "val_ja";
  result.checkpoint.seed = opt.seed;
  return result;
}

}  // namespace mbseg
