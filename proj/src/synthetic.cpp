#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mbseg/data.hpp"

namespace mbseg {

void SyntheticConfig::validate() const {
  if (num_seg < 0 || num_cls < 0) throw ConfigError("synthetic: sample counts must be >= 0");
  if (image_size < 8) throw ConfigError("synthetic: image_size must be >= 8");
  if (num_classes < 2 || num_classes > 3) throw ConfigError("synthetic: num_classes must be 2 or 3");
  if (!(lesion_axis_min > 0.0 && lesion_axis_min <= lesion_axis_max)) {
    throw ConfigError("synthetic: lesion axis range must satisfy 0 < min <= max");
  }
  // The ellipse must fit with a one-pixel border on each side.
  if (2.0 * lesion_axis_max * image_size > image_size - 2) {
    throw ConfigError("synthetic: lesion axes exceed the image");
  }
  if (distractor_density < 0 || noise_level < 0) throw ConfigError("synthetic: densities must be >= 0");
}

std::vector<std::string> synthetic_class_names(int num_classes) {
  static const std::array<const char*, 3> names{"smooth_disk", "bright_ring", "speckled"};
  return {names.begin(), names.begin() + num_classes};
}

namespace {

using Rgb = std::array<double, 3>;

float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(static_cast<int>(std::lround(c * 255.0))) / 255.0f;
}

// Quadratic Bezier stroke of width ~1.2 px darkening the image.
void draw_hair(std::vector<Rgb>& px, int size, Rng& rng) {
  const double s = size;
  const double x0 = rng.uniform(0, s), y0 = rng.uniform(0, s);
  const double ang = rng.uniform(0, 2 * std::numbers::pi);
  const double len = rng.uniform(0.5, 1.0) * s;
  const double x2 = x0 + len * std::cos(ang), y2 = y0 + len * std::sin(ang);
  const double x1 = (x0 + x2) / 2 + rng.uniform(-0.2, 0.2) * s, y1 = (y0 + y2) / 2 + rng.uniform(-0.2, 0.2) * s;
  const double tone = rng.uniform(0.08, 0.25);
  const double width = rng.uniform(0.5, 1.0);
  const int steps = static_cast<int>(3 * len) + 1;
  for (int k = 0; k <= steps; ++k) {
    const double t = double(k) / steps;
    const double bx = (1 - t) * (1 - t) * x0 + 2 * (1 - t) * t * x1 + t * t * x2;
    const double by = (1 - t) * (1 - t) * y0 + 2 * (1 - t) * t * y1 + t * t * y2;
    for (int yy = int(std::floor(by - 1)); yy <= int(std::ceil(by + 1)); ++yy) {
      for (int xx = int(std::floor(bx - 1)); xx <= int(std::ceil(bx + 1)); ++xx) {
        if (xx < 0 || yy < 0 || xx >= size || yy >= size) continue;
        const double d = std::hypot(xx - bx, yy - by);
        if (d <= width) {
          for (double& c : px[std::size_t(yy) * std::size_t(size) + std::size_t(xx)]) c = std::min(c, tone);
        }
      }
    }
  }
}

}  // namespace

SyntheticImage generate_synthetic_image(const SyntheticConfig& cfg, int label, Rng& rng) {
  const int n = cfg.image_size;
  const double s = n;
  SyntheticImage out;
  out.label = label;

  // Skin tone with a smooth illumination gradient.
  const double shade = rng.uniform(-0.06, 0.06);
  const Rgb skin{0.82 + shade + rng.uniform(-0.04, 0.04) + cfg.background_shift,
                 0.62 + shade + rng.uniform(-0.04, 0.04) + cfg.background_shift,
                 0.52 + shade + rng.uniform(-0.04, 0.04) + cfg.background_shift};
  const double gx = rng.uniform(-0.08, 0.08), gy = rng.uniform(-0.08, 0.08);

  auto& e = out.ellipse;
  e.a = rng.uniform(cfg.lesion_axis_min, cfg.lesion_axis_max) * s;
  e.b = rng.uniform(cfg.lesion_axis_min, cfg.lesion_axis_max) * s;
  e.angle = rng.uniform(0, std::numbers::pi);
  const double reach = std::max(e.a, e.b);
  e.cx = rng.uniform(reach + 0.5, s - 1.5 - reach);
  e.cy = rng.uniform(reach + 0.5, s - 1.5 - reach);

  // Lesion pigment: darker brown, per-image depth.
  const double depth = rng.uniform(0.35, 0.6);
  const Rgb pigment{0.45 * depth + 0.1, 0.3 * depth + 0.05, 0.25 * depth + 0.05};
  const double speckle_scale = rng.uniform(0.12, 0.2);

  std::vector<Rgb> px(std::size_t(n) * std::size_t(n));
  out.mask = Mask::Zero(n, n);
  const double ca = std::cos(e.angle), sa = std::sin(e.angle);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = x - e.cx, dy = y - e.cy;
      const double u = (dx * ca + dy * sa) / e.a;
      const double v = (-dx * sa + dy * ca) / e.b;
      const double r2 = u * u + v * v;
      Rgb bg;
      const double light = gx * (x / s - 0.5) + gy * (y / s - 0.5);
      for (int c = 0; c < 3; ++c) bg[std::size_t(c)] = skin[std::size_t(c)] + light;
      Rgb col = bg;
      if (r2 <= 1.0) {
        out.mask(y, x) = 1;
        const double r = std::sqrt(r2);
        for (int c = 0; c < 3; ++c) {
          const auto k = std::size_t(c);
          double v_c = pigment[k];
          switch (label) {
            case 0:  // smooth dark disk, slightly darker at the center
              v_c = pigment[k] * (0.85 + 0.15 * r);
              break;
            case 1:  // ring: dark interior with a bright rim
              v_c = r > 0.7 ? std::min(1.0, bg[k] * 1.12 + 0.05) : pigment[k] * 1.1;
              break;
            default:  // speckled texture
              v_c = pigment[k];
              break;
          }
          col[k] = v_c;
        }
        if (label == 2) {
          const double sp = rng.bernoulli(0.5) ? speckle_scale : -speckle_scale;
          for (double& c : col) c += sp;
        }
      }
      px[std::size_t(y) * std::size_t(n) + std::size_t(x)] = col;
    }
  }

  const double mean_hairs = cfg.distractor_density;
  int hairs = static_cast<int>(std::floor(mean_hairs));
  if (rng.bernoulli(mean_hairs - hairs)) ++hairs;
  for (int h = 0; h < hairs; ++h) draw_hair(px, n, rng);

  out.image = Tensor<float>(1, 3, n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double noise = cfg.noise_level > 0 ? cfg.noise_level * rng.normal() : 0.0;
        out.image(0, c, y, x) = quantize(px[std::size_t(y) * std::size_t(n) + std::size_t(x)][std::size_t(c)] + noise);
      }
    }
  }
  return out;
}

std::pair<std::vector<SegSample>, std::vector<ClsSample>> generate_synthetic_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  std::pair<std::vector<SegSample>, std::vector<ClsSample>> out;
  char id[32];
  for (int i = 0; i < cfg.num_seg; ++i) {
    Rng rng = Rng::keyed(cfg.seed, "synthetic/seg", static_cast<std::uint64_t>(i));
    const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)));
    auto img = generate_synthetic_image(cfg, label, rng);
    std::snprintf(id, sizeof id, "seg_%04d", i);
    out.first.push_back({id, std::move(img.image), std::move(img.mask), label});
  }
  for (int i = 0; i < cfg.num_cls; ++i) {
    Rng rng = Rng::keyed(cfg.seed, "synthetic/cls", static_cast<std::uint64_t>(i));
    const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)));
    auto img = generate_synthetic_image(cfg, label, rng);
    std::snprintf(id, sizeof id, "cls_%04d", i);
    out.second.push_back({id, std::move(img.image), label});
  }
  return out;
}

}  // namespace mbseg
