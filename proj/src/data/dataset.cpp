#include "cloudmamba/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "cloudmamba/data/synth.hpp"

namespace cloudmamba::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path image_path(const fs::path& root, const std::string& id) { return root / "images" / (id + ".png"); }
fs::path mask_path(const fs::path& root, const std::string& id) { return root / "masks" / (id + ".png"); }

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_png(const fs::path& file, const cv::Mat& mat) {
  bool ok = false;
  try {
    ok = cv::imwrite(file.string(), mat);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + file.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + file.string());
}

cv::Mat read_png(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw IoError(file.string() + ": no such file");
  cv::Mat m;
  try {
    m = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw CorruptFile(file.string() + ": " + e.what());
  }
  if (m.empty()) throw CorruptFile(file.string() + ": not a decodable image");
  return m;
}

bool valid_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'; });
}

// Transforms on interleaved H×W×C buffers.
template <class T>
std::vector<T> flip(const std::vector<T>& in, int H, int W, int C, bool horizontal) {
  std::vector<T> out(in.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int sy = horizontal ? y : H - 1 - y, sx = horizontal ? W - 1 - x : x;
      std::copy_n(in.begin() + (static_cast<std::size_t>(sy) * W + sx) * C, C,
                  out.begin() + (static_cast<std::size_t>(y) * W + x) * C);
    }
  return out;
}

// Counter-clockwise quarter turn; the result is W×H.
template <class T>
std::vector<T> rotate(const std::vector<T>& in, int H, int W, int C) {
  std::vector<T> out(in.size());
  for (int y = 0; y < W; ++y)
    for (int x = 0; x < H; ++x)
      std::copy_n(in.begin() + (static_cast<std::size_t>(x) * W + (W - 1 - y)) * C, C,
                  out.begin() + (static_cast<std::size_t>(y) * H + x) * C);
  return out;
}

template <class T>
std::vector<T> transform(std::vector<T> data, int& H, int& W, int C, const Augmentation& a) {
  if (a.quarter_turns < 0 || a.quarter_turns > 3) throw InvalidParameter("quarter_turns must be in [0, 3]");
  if (a.quarter_turns % 2 == 1 && H != W) {
    throw InvalidParameter("rotation by " + std::to_string(90 * a.quarter_turns) + " degrees needs a square patch, got " +
                           std::to_string(H) + "x" + std::to_string(W));
  }
  if (a.flip != Augmentation::Flip::kNone) data = flip(data, H, W, C, a.flip == Augmentation::Flip::kHorizontal);
  for (int k = 0; k < a.quarter_turns; ++k) {
    data = rotate(data, H, W, C);
    std::swap(H, W);
  }
  return data;
}

}  // namespace

Tensor normalize_bands(const std::vector<std::uint16_t>& raw, int height, int width, int bands) {
  if (raw.size() != static_cast<std::size_t>(height) * width * bands) {
    throw ShapeError("normalize_bands: buffer size does not match " + std::to_string(height) + "x" +
                     std::to_string(width) + "x" + std::to_string(bands));
  }
  Tensor out({height, width, bands});
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = Real(raw[i]) / 65535.0;
  return out;
}

void write_patch(const fs::path& root, const std::string& id, const Tensor& image, const BinaryMask& label) {
  if (!valid_id(id)) throw InvalidParameter("invalid patch id '" + id + "'");
  if (image.rank() != 3 || image.channels() != kBands) {
    throw ShapeError("write_patch: image must be H×W×4, got " + shape_string(image.shape()));
  }
  if (image.height() != label.height || image.width() != label.width) {
    throw ShapeError("write_patch: mask size differs from image size for '" + id + "'");
  }
  ensure_directory(root / "images");
  ensure_directory(root / "masks");
  cv::Mat img(image.height(), image.width(), CV_16UC4);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = img.ptr<cv::Vec<std::uint16_t, 4>>(y);
    for (int x = 0; x < image.width(); ++x)
      for (int b = 0; b < kBands; ++b) {
        const Real v = std::clamp(image.at(y, x, b), Real(0), Real(1));
        row[x][b] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      }
  }
  cv::Mat mask(label.height, label.width, CV_8UC1);
  for (int y = 0; y < label.height; ++y)
    for (int x = 0; x < label.width; ++x) mask.at<std::uint8_t>(y, x) = label.at(y, x) ? 255 : 0;
  write_png(image_path(root, id), img);
  write_png(mask_path(root, id), mask);
}

void write_manifest(const fs::path& root, const std::vector<ManifestEntry>& entries) {
  ensure_directory(root);
  json j;
  j["entries"] = json::array();
  for (const auto& e : entries) j["entries"].push_back({{"id", e.id}, {"split", e.split}});
  std::ofstream out(root / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& root) {
  const fs::path file = root / "manifest.json";
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DatasetError("no manifest.json in " + root.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CorruptFile(file.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array()) {
    throw CorruptFile(file.string() + ": expected an object with an \"entries\" array");
  }
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  for (const auto& e : j["entries"]) {
    if (!e.is_object() || !e.contains("id") || !e["id"].is_string()) {
      throw CorruptFile(file.string() + ": every entry needs a string \"id\"");
    }
    ManifestEntry m{e["id"].get<std::string>(), e.value("split", std::string("train"))};
    if (!valid_id(m.id)) throw CorruptFile(file.string() + ": invalid id '" + m.id + "'");
    if (!seen.insert(m.id).second) throw ManifestMismatch("id '" + m.id + "' is listed twice in the manifest");
    entries.push_back(std::move(m));
  }
  return entries;
}

Tensor read_image(const fs::path& file) {
  const cv::Mat m = read_png(file);
  if (m.type() != CV_16UC4) throw CorruptFile(file.string() + ": expected a 16-bit 4-channel PNG");
  std::vector<std::uint16_t> raw(static_cast<std::size_t>(m.rows) * m.cols * kBands);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint16_t>(y);
    std::copy(row, row + static_cast<std::size_t>(m.cols) * kBands, raw.begin() + static_cast<std::size_t>(y) * m.cols * kBands);
  }
  return normalize_bands(raw, m.rows, m.cols, kBands);
}

BinaryMask read_mask(const fs::path& file, bool* had_non_binary) {
  const cv::Mat m = read_png(file);
  if (m.type() != CV_8UC1) throw CorruptFile(file.string() + ": expected an 8-bit grayscale PNG");
  BinaryMask out(m.rows, m.cols);
  bool odd = false;
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const std::uint8_t v = m.at<std::uint8_t>(y, x);
      odd = odd || (v != 0 && v != 255);
      out.at(y, x) = v ? 1 : 0;
    }
  if (had_non_binary) *had_non_binary = odd;
  return out;
}

Dataset Dataset::load(const fs::path& root) {
  Dataset ds;
  ds.root_ = root;
  const auto entries = read_manifest(root);
  std::set<std::string> listed;
  for (const auto& e : entries) {
    listed.insert(e.id);
    const fs::path img = image_path(root, e.id), msk = mask_path(root, e.id);
    if (!fs::exists(img)) throw ManifestMismatch("manifest lists '" + e.id + "' but " + img.string() + " is missing");
    if (!fs::exists(msk)) throw MissingMask("image '" + e.id + "' has no mask (" + msk.string() + ")");
    Sample s;
    s.id = e.id;
    s.split = e.split;
    s.image = read_image(img);
    bool odd = false;
    s.label = read_mask(msk, &odd);
    if (odd) ds.non_binary_.push_back(e.id);
    if (s.label.height != s.image.height() || s.label.width != s.image.width()) {
      throw CorruptFile("mask of '" + e.id + "' is " + std::to_string(s.label.height) + "x" +
                        std::to_string(s.label.width) + " but the image is " + std::to_string(s.image.height()) + "x" +
                        std::to_string(s.image.width()));
    }
    ds.samples_.push_back(std::move(s));
  }
  if (fs::is_directory(root / "images")) {
    for (const auto& f : fs::directory_iterator(root / "images")) {
      if (f.path().extension() != ".png") continue;
      const std::string id = f.path().stem().string();
      if (!listed.count(id)) throw ManifestMismatch("images/" + id + ".png is not listed in the manifest");
    }
  }
  return ds;
}

std::vector<std::size_t> Dataset::split(const std::string& name) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i)
    if (samples_[i].split == name) out.push_back(i);
  return out;
}

Augmentation Augmentation::draw(std::uint64_t seed) {
  std::mt19937_64 rng(scene_seed(seed, 0x61756775ULL));
  Augmentation a;
  a.flip = static_cast<Flip>(std::uniform_int_distribution<int>(0, 2)(rng));
  a.quarter_turns = std::uniform_int_distribution<int>(0, 3)(rng);
  return a;
}

Augmentation Augmentation::inverse() const {
  // A flip followed by any rotation is a reflection, hence its own inverse.
  if (flip != Flip::kNone) return *this;
  return {Flip::kNone, (4 - quarter_turns) % 4};
}

Tensor augment_image(const Tensor& image, const Augmentation& a) {
  if (image.rank() != 3) throw ShapeError("augment: image must be H×W×C");
  int H = image.height(), W = image.width();
  const int C = image.channels();
  auto data = transform(image.storage(), H, W, C, a);
  return Tensor({H, W, C}, std::move(data));
}

BinaryMask augment_mask(const BinaryMask& mask, const Augmentation& a) {
  int H = mask.height, W = mask.width;
  BinaryMask out;
  out.data = transform(mask.data, H, W, 1, a);
  out.height = H;
  out.width = W;
  return out;
}

void augment(Tensor& image, BinaryMask& label, const Augmentation& a) {
  if (image.rank() != 3 || image.height() != label.height || image.width() != label.width) {
    throw ShapeError("augment: image and mask sizes differ");
  }
  image = augment_image(image, a);
  label = augment_mask(label, a);
}

}  // namespace cloudmamba::data
