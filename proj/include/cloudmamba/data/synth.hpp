#pragma once

// Deterministic synthetic multispectral cloud scenes (bands B, G, R, NIR in
// [0, 1]) with thick and thin clouds over a value-noise background, plus
// bright snow-like confusers that are labelled clear.

#include <cstdint>

#include "cloudmamba/tensor.hpp"

namespace cloudmamba::data {

inline constexpr int kBands = 4;

struct SynthParams {
  std::uint64_t seed = 42;
  int height = 64;
  int width = 64;
  int thick_min = 0;
  int thick_max = 3;
  int thin_min = 0;
  int thin_max = 2;
  Real thin_alpha_min = 0.2;
  Real thin_alpha_max = 0.5;
  Real confuser_probability = 0.35;
  int noise_octaves = 3;

  // A pixel is cloud when its composited cloud alpha exceeds this value.
  Real label_threshold() const { return 0.5 * thin_alpha_min; }
  void validate() const;
  bool operator==(const SynthParams&) const = default;
};

struct Scene {
  Tensor image;          // H×W×4
  BinaryMask label;      // 1 = cloud
  UncertaintyMap alpha;  // composited cloud opacity in [0, 1]
  int confusers = 0;
};

Scene generate_scene(const SynthParams& p);

// Seed of the index-th scene in a dataset generated from `seed`.
std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index);

// Multi-octave value noise in [0, 1] with bilinear interpolation between
// lattice points.
Grid<Real> value_noise(int height, int width, int octaves, int base_cell, std::uint64_t seed);

}  // namespace cloudmamba::data
