#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mbseg/types.hpp"

namespace mbseg::io {

namespace fs = std::filesystem;

/// Raw little-endian float32 array, no header.
void write_f32(const fs::path& path, std::span<const float> values);
std::vector<float> read_f32(const fs::path& path, std::size_t expected_count);

inline void write_grid(const fs::path& path, const Grid<float>& g) {
  write_f32(path, std::span<const float>(g.data(), static_cast<std::size_t>(g.size())));
}
inline Grid<float> read_grid(const fs::path& path, int rows, int cols) {
  const auto v = read_f32(path, static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  return Eigen::Map<const Grid<float>>(v.data(), rows, cols);
}

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Creates `dir` (and parents); throws IoError when that fails or it is not writable.
void ensure_directory(const fs::path& dir);

/// RGB image as a 3 x H x W tensor (N = 1) with values in [0,1].
Tensor<float> read_rgb(const fs::path& path);
/// Grayscale image scaled to [0,1].
Grid<float> read_gray(const fs::path& path);
void write_rgb(const fs::path& path, const Tensor<float>& image);
void write_gray(const fs::path& path, const Grid<float>& gray);

}  // namespace mbseg::io
