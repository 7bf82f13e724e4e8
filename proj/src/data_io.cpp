#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>

#include "mbseg/data.hpp"
#include "mbseg/io.hpp"

namespace mbseg {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 6> kImageExtensions{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};

std::optional<fs::path> find_with_extension(const fs::path& dir, const std::string& stem) {
  for (const char* ext : kImageExtensions) {
    const auto p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

Tensor<float> load_image(const fs::path& p, const std::string& id) {
  try {
    return io::read_rgb(p);
  } catch (const IoError& e) {
    throw IngestionError("sample '" + id + "': " + e.what());
  }
}

}  // namespace

std::vector<std::string> read_manifest(const fs::path& root, const fs::path& manifest) {
  std::vector<std::string> ids;
  if (!manifest.empty()) {
    std::ifstream in(manifest.is_absolute() ? manifest : root / manifest);
    if (!in) throw IngestionError("cannot read manifest " + manifest.string());
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (!line.empty()) ids.push_back(line);
    }
    return ids;
  }
  const auto dir = root / "images";
  if (!fs::is_directory(dir)) throw IngestionError("missing directory " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (std::find(kImageExtensions.begin(), kImageExtensions.end(), ext) != kImageExtensions.end()) {
      ids.push_back(entry.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<SegSample> load_seg_dataset(const fs::path& root, const std::vector<std::string>& ids) {
  std::vector<SegSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto img_path = find_with_extension(root / "images", id);
    if (!img_path) throw IngestionError("sample '" + id + "': image file not found");
    const auto mask_path = find_with_extension(root / "masks", id + "_segmentation");
    if (!mask_path) throw IngestionError("sample '" + id + "': mask file not found");
    SegSample s;
    s.id = id;
    s.image = load_image(*img_path, id);
    Grid<float> gray;
    try {
      gray = io::read_gray(*mask_path);
    } catch (const IoError& e) {
      throw IngestionError("sample '" + id + "': " + e.what());
    }
    if (gray.rows() != s.image.h() || gray.cols() != s.image.w()) {
      throw IngestionError("sample '" + id + "': mask size differs from image size");
    }
    s.mask = (gray.array() >= 0.5f).cast<std::uint8_t>().matrix();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::pair<std::string, int>> read_labels(const fs::path& root, const fs::path& labels_file,
                                                    const std::map<std::string, int>& class_table) {
  std::ifstream in(labels_file.is_absolute() ? labels_file : root / labels_file);
  if (!in) throw IngestionError("cannot read labels file " + labels_file.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "id,label") {
    throw IngestionError("labels file must start with the header 'id,label'");
  }
  std::vector<std::pair<std::string, int>> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IngestionError("labels row " + std::to_string(row) + ": expected 'id,label'");
    const std::string id = trim(line.substr(0, comma));
    const std::string name = trim(line.substr(comma + 1));
    const auto cls = class_table.find(name);
    if (cls == class_table.end()) {
      throw IngestionError("labels row " + std::to_string(row) + " (" + id + "): unknown class '" + name + "'");
    }
    out.emplace_back(id, cls->second);
  }
  return out;
}

std::vector<ClsSample> load_cls_dataset(const fs::path& root, const fs::path& labels_file,
                                        const std::map<std::string, int>& class_table) {
  std::vector<ClsSample> out;
  for (const auto& [id, label] : read_labels(root, labels_file, class_table)) {
    const auto img_path = find_with_extension(root / "images", id);
    if (!img_path) throw IngestionError("labels file: no image for id '" + id + "'");
    out.push_back({id, load_image(*img_path, id), label});
  }
  return out;
}

namespace {
void write_labels(const fs::path& root, const std::vector<std::pair<std::string, int>>& rows,
                  const std::vector<std::string>& class_names) {
  std::ostringstream csv;
  csv << "id,label\n";
  for (const auto& [id, label] : rows) {
    if (label < 0) continue;
    csv << id << ',' << class_names.at(static_cast<std::size_t>(label)) << '\n';
  }
  io::write_text(root / "labels.csv", csv.str());
}
}  // namespace

void export_seg_dataset(const std::vector<SegSample>& samples, const fs::path& root,
                        const std::vector<std::string>& class_names) {
  io::ensure_directory(root / "images");
  io::ensure_directory(root / "masks");
  std::ostringstream manifest;
  std::vector<std::pair<std::string, int>> labels;
  for (const auto& s : samples) {
    io::write_rgb(root / "images" / (s.id + ".png"), s.image);
    io::write_gray(root / "masks" / (s.id + "_segmentation.png"), s.mask.cast<float>());
    manifest << s.id << '\n';
    labels.emplace_back(s.id, s.label);
  }
  io::write_text(root / "manifest.txt", manifest.str());
  write_labels(root, labels, class_names);
}

void export_cls_dataset(const std::vector<ClsSample>& samples, const fs::path& root,
                        const std::vector<std::string>& class_names) {
  io::ensure_directory(root / "images");
  std::vector<std::pair<std::string, int>> labels;
  for (const auto& s : samples) {
    io::write_rgb(root / "images" / (s.id + ".png"), s.image);
    labels.emplace_back(s.id, s.label);
  }
  write_labels(root, labels, class_names);
}

}  // namespace mbseg
