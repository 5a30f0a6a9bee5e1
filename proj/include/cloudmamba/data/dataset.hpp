#pragma once

// On-disk patch format and dihedral augmentation.
//
//   <root>/manifest.json       {"entries": [{"id": ..., "split": "train"|"test"}, ...]}
//   <root>/images/<id>.png     16-bit, 4 channels, bands B, G, R, NIR
//   <root>/masks/<id>.png      8-bit grayscale, 255 = cloud
//
// Images are written through OpenCV, whose channel order is B, G, R, A, so
// the PNG shows a true-colour composite with NIR in the alpha channel.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cloudmamba/tensor.hpp"

namespace cloudmamba::data {

struct Sample {
  std::string id;
  std::string split;
  Tensor image;  // H×W×4 in [0, 1]
  BinaryMask label;
};

struct ManifestEntry {
  std::string id;
  std::string split;
  bool operator==(const ManifestEntry&) const = default;
};

// value / 65535 per element; `raw` is H×W×bands interleaved.
Tensor normalize_bands(const std::vector<std::uint16_t>& raw, int height, int width, int bands);

void write_patch(const std::filesystem::path& root, const std::string& id, const Tensor& image, const BinaryMask& label);
void write_manifest(const std::filesystem::path& root, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root);

Tensor read_image(const std::filesystem::path& file);
BinaryMask read_mask(const std::filesystem::path& file, bool* had_non_binary = nullptr);

// Loads every manifest entry in manifest order. Missing images or ids listed
// twice raise ManifestMismatch, missing masks MissingMask, undecodable files
// CorruptFile.
class Dataset {
 public:
  Dataset() = default;
  static Dataset load(const std::filesystem::path& root);

  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const Sample& operator[](std::size_t i) const { return samples_.at(i); }
  const std::vector<Sample>& samples() const noexcept { return samples_; }
  // Manifest-order indices of one split.
  std::vector<std::size_t> split(const std::string& name) const;
  const std::filesystem::path& root() const noexcept { return root_; }
  // Masks that held values other than 0/255 (treated as cloud when nonzero).
  const std::vector<std::string>& non_binary_masks() const noexcept { return non_binary_; }

 private:
  std::filesystem::path root_;
  std::vector<Sample> samples_;
  std::vector<std::string> non_binary_;
};

// One of {identity, horizontal flip, vertical flip} followed by a
// counter-clockwise rotation of quarter_turns · 90°.
struct Augmentation {
  enum class Flip { kNone, kHorizontal, kVertical };
  Flip flip = Flip::kNone;
  int quarter_turns = 0;

  static Augmentation draw(std::uint64_t seed);
  Augmentation inverse() const;
  bool operator==(const Augmentation&) const = default;
};

// Applies the same transform to the patch and its mask. Odd quarter turns on
// a non-square patch raise InvalidParameter.
void augment(Tensor& image, BinaryMask& label, const Augmentation& a);
Tensor augment_image(const Tensor& image, const Augmentation& a);
BinaryMask augment_mask(const BinaryMask& mask, const Augmentation& a);

}  // namespace cloudmamba::data
