#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mbseg/rng.hpp"
#include "mbseg/types.hpp"

namespace mbseg {

/// Image (1 x 3 x H x W, values in [0,1]) with a pixel-level lesion mask.
struct SegSample {
  std::string id;
  Tensor<float> image;
  Mask mask;
  int label = -1;  // generating class when known
};

/// Image with an image-level class label.
struct ClsSample {
  std::string id;
  Tensor<float> image;
  int label = 0;
};

// ---------------------------------------------------------------------------
// Ingestion (ISIC layout: images/<id>.<ext>, masks/<id>_segmentation.<ext>,
// labels.csv with header "id,label").

/// Ids listed one per line in `manifest`; an empty path lists the image stems in sorted order.
std::vector<std::string> read_manifest(const std::filesystem::path& root, const std::filesystem::path& manifest);

/// Loads images and masks in manifest order; masks are binarized at 0.5.
std::vector<SegSample> load_seg_dataset(const std::filesystem::path& root, const std::vector<std::string>& ids);

/// Rows of a labels file ("id,label" header), class names mapped through `class_table`.
std::vector<std::pair<std::string, int>> read_labels(const std::filesystem::path& root,
                                                    const std::filesystem::path& labels_file,
                                                    const std::map<std::string, int>& class_table);

/// Loads images listed in `labels_file`; class names are mapped through `class_table`.
std::vector<ClsSample> load_cls_dataset(const std::filesystem::path& root, const std::filesystem::path& labels_file,
                                        const std::map<std::string, int>& class_table);

/// Writes samples in the ISIC layout (PNG images, `<id>_segmentation.png` masks, labels.csv).
void export_seg_dataset(const std::vector<SegSample>& samples, const std::filesystem::path& root,
                        const std::vector<std::string>& class_names);
void export_cls_dataset(const std::vector<ClsSample>& samples, const std::filesystem::path& root,
                        const std::vector<std::string>& class_names);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentationConfig {
  double crop_scale_min = 0.5;
  double crop_scale_max = 1.0;
  double rotation_degrees = 10.0;  // drawn uniformly in [-r, r]
  double shear_radians = 0.1;      // drawn uniformly in [-s, s]
  double shift_pixels = 20.0;      // per axis, drawn uniformly in [-d, d]
  double zoom_factor = 1.1;        // applied with zoom_probability
  double zoom_probability = 0.5;
  bool whitening = true;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  int target_h = 224;
  int target_w = 224;

  /// Every range collapsed: output is the input resized to (h, w).
  static AugmentationConfig identity(int h, int w);
  void validate() const;
};

/// Random parameters of one augmentation.
struct AugmentationDraw {
  double crop_scale = 1.0;
  double rotation = 0.0;  // radians
  double shear = 0.0;     // radians
  double shift_x = 0.0;
  double shift_y = 0.0;
  double zoom = 1.0;
  bool flip_h = false;
  bool flip_v = false;
};

/// Generator keyed by (seed, sample id, epoch).
Rng augmentation_rng(std::uint64_t seed, const std::string& id, int epoch);

AugmentationDraw draw_augmentation(const AugmentationConfig& cfg, Rng& rng);

/// Affine map from output pixel (x, y) to source pixel coordinates.
Eigen::Matrix<double, 2, 3> augmentation_transform(const AugmentationDraw& d, const AugmentationConfig& cfg,
                                                   int src_h, int src_w);

/// Bilinear warp of every plane with border replication.
Tensor<float> warp_bilinear(const Tensor<float>& image, const Eigen::Matrix<double, 2, 3>& affine, int out_h,
                            int out_w);
/// Bilinear warp of a soft map; outside the source reads 0.
Grid<float> warp_soft(const Grid<float>& map, const Eigen::Matrix<double, 2, 3>& affine, int out_h, int out_w);
/// Nearest-neighbour warp of a binary mask; outside the source reads 0.
Mask warp_nearest(const Mask& mask, const Eigen::Matrix<double, 2, 3>& affine, int out_h, int out_w);

/// Per-channel standardization followed by a global min-max rescale to [0,1].
Tensor<float> whiten(const Tensor<float>& image);

SegSample augment(const SegSample& s, const AugmentationConfig& cfg, const AugmentationDraw& d);
SegSample augment(const SegSample& s, const AugmentationConfig& cfg, Rng& rng);

/// Image plus its soft coarse mask, warped with the same geometry.
std::pair<Tensor<float>, Grid<float>> augment(const Tensor<float>& image, const Grid<float>& soft_mask,
                                              const AugmentationConfig& cfg, const AugmentationDraw& d);

// ---------------------------------------------------------------------------
// Synthetic lesion images

struct SyntheticConfig {
  int num_seg = 300;
  int num_cls = 300;
  int image_size = 64;
  int num_classes = 3;
  double lesion_axis_min = 0.14;  // semi-axis, fraction of image size
  double lesion_axis_max = 0.30;
  double distractor_density = 2.0;  // hairs per image (mean)
  double noise_level = 0.03;
  double background_shift = 0.0;    // added to the skin tone; models a domain shift
  std::uint64_t seed = 7;

  void validate() const;
};

struct EllipseParams {
  double cx = 0, cy = 0, a = 1, b = 1, angle = 0;
};

/// One synthetic image together with its generating ellipse.
struct SyntheticImage {
  Tensor<float> image;
  Mask mask;
  int label = 0;
  EllipseParams ellipse;
};

SyntheticImage generate_synthetic_image(const SyntheticConfig& cfg, int label, Rng& rng);

/// Deterministic in `cfg.seed`; ids are seg_NNNN / cls_NNNN.
std::pair<std::vector<SegSample>, std::vector<ClsSample>> generate_synthetic_dataset(const SyntheticConfig& cfg);

std::vector<std::string> synthetic_class_names(int num_classes);

}  // namespace mbseg
