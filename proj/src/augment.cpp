#include <cmath>
#include <numbers>

#include "mbseg/data.hpp"

namespace mbseg {

AugmentationConfig AugmentationConfig::identity(int h, int w) {
  AugmentationConfig c;
  c.crop_scale_min = c.crop_scale_max = 1.0;
  c.rotation_degrees = 0.0;
  c.shear_radians = 0.0;
  c.shift_pixels = 0.0;
  c.zoom_factor = 1.0;
  c.zoom_probability = 0.0;
  c.whitening = false;
  c.horizontal_flip = c.vertical_flip = false;
  c.target_h = h;
  c.target_w = w;
  return c;
}

void AugmentationConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw ConfigError("augment: crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (rotation_degrees < 0 || shear_radians < 0 || shift_pixels < 0) {
    throw ConfigError("augment: rotation, shear and shift ranges must be >= 0");
  }
  if (!(zoom_factor > 0.0)) throw ConfigError("augment: zoom_factor must be > 0");
  if (zoom_probability < 0 || zoom_probability > 1) throw ConfigError("augment: zoom_probability must lie in [0,1]");
  if (target_h < 1 || target_w < 1) throw ConfigError("augment: target size must be positive");
}

Rng augmentation_rng(std::uint64_t seed, const std::string& id, int epoch) {
  return Rng::keyed(seed, "augment/" + id, static_cast<std::uint64_t>(epoch));
}

AugmentationDraw draw_augmentation(const AugmentationConfig& cfg, Rng& rng) {
  // Every draw consumes the same number of values so sequences stay aligned.
  AugmentationDraw d;
  d.crop_scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
  d.rotation = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees) * std::numbers::pi / 180.0;
  d.shear = rng.uniform(-cfg.shear_radians, cfg.shear_radians);
  d.shift_x = rng.uniform(-cfg.shift_pixels, cfg.shift_pixels);
  d.shift_y = rng.uniform(-cfg.shift_pixels, cfg.shift_pixels);
  d.zoom = rng.bernoulli(cfg.zoom_probability) ? cfg.zoom_factor : 1.0;
  const bool fh = rng.bernoulli(0.5);
  const bool fv = rng.bernoulli(0.5);
  d.flip_h = cfg.horizontal_flip && fh;
  d.flip_v = cfg.vertical_flip && fv;
  return d;
}

Eigen::Matrix<double, 2, 3> augmentation_transform(const AugmentationDraw& d, const AugmentationConfig& cfg,
                                                   int src_h, int src_w) {
  using M3 = Eigen::Matrix3d;
  const double tw = cfg.target_w, th = cfg.target_h;

  M3 flip = M3::Identity();
  if (d.flip_h) {
    flip(0, 0) = -1;
    flip(0, 2) = tw - 1;
  }
  if (d.flip_v) {
    flip(1, 1) = -1;
    flip(1, 2) = th - 1;
  }

  // Center crop of relative size crop_scale, resampled to the target size.
  const double cw = d.crop_scale * src_w, ch = d.crop_scale * src_h;
  const double ox = (src_w - cw) / 2.0, oy = (src_h - ch) / 2.0;
  const double sx = cw / tw, sy = ch / th;
  M3 crop = M3::Identity();
  crop(0, 0) = sx;
  crop(1, 1) = sy;
  crop(0, 2) = ox - 0.5 + 0.5 * sx;
  crop(1, 2) = oy - 0.5 + 0.5 * sy;

  // Rotation, shear and zoom about the crop center, then shift.
  const double cx = ox + cw / 2.0 - 0.5, cy = oy + ch / 2.0 - 0.5;
  Eigen::Matrix2d rot;
  rot << std::cos(d.rotation), -std::sin(d.rotation), std::sin(d.rotation), std::cos(d.rotation);
  Eigen::Matrix2d shear;
  shear << 1.0, -std::sin(d.shear), 0.0, std::cos(d.shear);
  const Eigen::Matrix2d a = rot * shear / d.zoom;
  const Eigen::Vector2d c(cx, cy);
  M3 geo = M3::Identity();
  geo.topLeftCorner<2, 2>() = a;
  geo.topRightCorner<2, 1>() = c - a * c - Eigen::Vector2d(d.shift_x, d.shift_y);

  const M3 m = geo * crop * flip;
  return m.topRows<2>();
}

namespace {

template <typename Fn>
void for_each_target(const Eigen::Matrix<double, 2, 3>& affine, int out_h, int out_w, Fn fn) {
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double sx = affine(0, 0) * x + affine(0, 1) * y + affine(0, 2);
      const double sy = affine(1, 0) * x + affine(1, 1) * y + affine(1, 2);
      fn(y, x, sx, sy);
    }
  }
}

template <typename PlaneFn>
float sample_bilinear(PlaneFn at, int h, int w, double sx, double sy, bool replicate) {
  if (replicate) {
    sx = std::clamp(sx, 0.0, double(w - 1));
    sy = std::clamp(sy, 0.0, double(h - 1));
  } else if (sx <= -1.0 || sy <= -1.0 || sx >= w || sy >= h) {
    return 0.0f;
  }
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  auto v = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= w || yy >= h) {
      return replicate ? double(at(std::clamp(yy, 0, h - 1), std::clamp(xx, 0, w - 1))) : 0.0;
    }
    return double(at(yy, xx));
  };
  const double top = (1 - fx) * v(y0, x0) + fx * v(y0, x0 + 1);
  const double bottom = (1 - fx) * v(y0 + 1, x0) + fx * v(y0 + 1, x0 + 1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

}  // namespace

Tensor<float> warp_bilinear(const Tensor<float>& image, const Eigen::Matrix<double, 2, 3>& affine, int out_h,
                            int out_w) {
  Tensor<float> out(image.n(), image.c(), out_h, out_w);
  for (int i = 0; i < image.n(); ++i) {
    for (int ch = 0; ch < image.c(); ++ch) {
      const auto src = image.plane(i, ch);
      auto dst = out.plane(i, ch);
      for_each_target(affine, out_h, out_w, [&](int y, int x, double sx, double sy) {
        dst(y, x) = sample_bilinear([&](int yy, int xx) { return src(yy, xx); }, image.h(), image.w(), sx, sy, true);
      });
    }
  }
  return out;
}

Grid<float> warp_soft(const Grid<float>& map, const Eigen::Matrix<double, 2, 3>& affine, int out_h, int out_w) {
  Grid<float> out(out_h, out_w);
  const int h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  for_each_target(affine, out_h, out_w, [&](int y, int x, double sx, double sy) {
    out(y, x) = sample_bilinear([&](int yy, int xx) { return map(yy, xx); }, h, w, sx, sy, false);
  });
  return out;
}

Mask warp_nearest(const Mask& mask, const Eigen::Matrix<double, 2, 3>& affine, int out_h, int out_w) {
  Mask out = Mask::Zero(out_h, out_w);
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  for_each_target(affine, out_h, out_w, [&](int y, int x, double sx, double sy) {
    const int ix = static_cast<int>(std::floor(sx + 0.5));
    const int iy = static_cast<int>(std::floor(sy + 0.5));
    if (ix >= 0 && iy >= 0 && ix < w && iy < h) out(y, x) = mask(iy, ix) ? 1 : 0;
  });
  return out;
}

Tensor<float> whiten(const Tensor<float>& image) {
  Tensor<float> out = image;
  for (int i = 0; i < image.n(); ++i) {
    for (int ch = 0; ch < image.c(); ++ch) {
      auto p = out.plane(i, ch);
      const double mean = p.cast<double>().mean();
      const double var = (p.cast<double>().array() - mean).square().mean();
      const double sd = std::sqrt(var);
      p = ((p.cast<double>().array() - mean) / (sd > 1e-12 ? sd : 1.0)).cast<float>().matrix();
    }
    auto s = out.sample(i);
    const float lo = s.minCoeff(), hi = s.maxCoeff();
    if (hi > lo) {
      s = ((s.array() - lo) / (hi - lo)).matrix();
    } else {
      s.setConstant(0.5f);
    }
  }
  return out;
}

SegSample augment(const SegSample& s, const AugmentationConfig& cfg, const AugmentationDraw& d) {
  const auto m = augmentation_transform(d, cfg, s.image.h(), s.image.w());
  SegSample out;
  out.id = s.id;
  out.label = s.label;
  out.image = warp_bilinear(s.image, m, cfg.target_h, cfg.target_w);
  if (cfg.whitening) out.image = whiten(out.image);
  out.mask = warp_nearest(s.mask, m, cfg.target_h, cfg.target_w);
  return out;
}

SegSample augment(const SegSample& s, const AugmentationConfig& cfg, Rng& rng) {
  return augment(s, cfg, draw_augmentation(cfg, rng));
}

std::pair<Tensor<float>, Grid<float>> augment(const Tensor<float>& image, const Grid<float>& soft_mask,
                                              const AugmentationConfig& cfg, const AugmentationDraw& d) {
  const auto m = augmentation_transform(d, cfg, image.h(), image.w());
  Tensor<float> img = warp_bilinear(image, m, cfg.target_h, cfg.target_w);
  if (cfg.whitening) img = whiten(img);
  return {std::move(img), warp_soft(soft_mask, m, cfg.target_h, cfg.target_w)};
}

}  // namespace mbseg
