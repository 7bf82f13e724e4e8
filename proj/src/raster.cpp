#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "mbseg/io.hpp"

namespace mbseg::io {

static_assert(std::endian::native == std::endian::little, "binary artifacts assume a little-endian host");

void write_f32(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected_count * sizeof(float)) {
    throw IoError(path.string() + ": expected " + std::to_string(expected_count) + " float32 values, found " +
                  std::to_string(bytes) + " bytes");
  }
  in.seekg(0);
  std::vector<float> v(expected_count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + path.string());
  return v;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
  const auto probe = dir / ".write_probe";
  std::ofstream out(probe);
  if (!out) throw IoError("directory not writable: " + dir.string());
  out.close();
  fs::remove(probe, ec);
}

Tensor<float> read_rgb(const fs::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("unreadable image " + path.string());
  Tensor<float> t(1, 3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int ch = 0; ch < 3; ++ch) t(0, ch, y, x) = static_cast<float>(row[x][2 - ch]) / 255.0f;
    }
  }
  return t;
}

Grid<float> read_gray(const fs::path& path) {
  const cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw IoError("unreadable image " + path.string());
  Grid<float> out(g.rows, g.cols);
  for (int y = 0; y < g.rows; ++y) {
    const auto* row = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < g.cols; ++x) out(y, x) = static_cast<float>(row[x]) / 255.0f;
  }
  return out;
}

namespace {
std::uint8_t to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(c * 255.0f + 0.5f);
}
}  // namespace

void write_rgb(const fs::path& path, const Tensor<float>& image) {
  if (image.c() != 3) throw ContractViolation("write_rgb: expected 3 channels");
  cv::Mat bgr(image.h(), image.w(), CV_8UC3);
  for (int y = 0; y < image.h(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.w(); ++x) {
      for (int ch = 0; ch < 3; ++ch) row[x][2 - ch] = to_byte(image(0, ch, y, x));
    }
  }
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

void write_gray(const fs::path& path, const Grid<float>& gray) {
  cv::Mat g(static_cast<int>(gray.rows()), static_cast<int>(gray.cols()), CV_8UC1);
  for (int y = 0; y < g.rows; ++y) {
    auto* row = g.ptr<std::uint8_t>(y);
    for (int x = 0; x < g.cols; ++x) row[x] = to_byte(gray(y, x));
  }
  if (!cv::imwrite(path.string(), g)) throw IoError("cannot write image " + path.string());
}

}  // namespace mbseg::io
