#include "cloudmamba/data/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace cloudmamba::data {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}
  Real uniform(Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(engine_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool chance(Real p) { return uniform(0, 1) < p; }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

using Spectrum = std::array<Real, kBands>;

// Soft-edged ellipse with a noisy boundary, in [0, 1].
Grid<Real> blob_shape(int H, int W, Rng& rng) {
  const Real side = std::min(H, W);
  const Real cy = rng.uniform(-0.1, 1.1) * H, cx = rng.uniform(-0.1, 1.1) * W;
  const Real ry = rng.uniform(0.12, 0.35) * side, rx = rng.uniform(0.12, 0.35) * side;
  const Real theta = rng.uniform(0, std::numbers::pi);
  const Real c = std::cos(theta), s = std::sin(theta);
  const Grid<Real> wobble = value_noise(H, W, 2, std::max(4, static_cast<int>(side) / 8), rng.next());
  Grid<Real> shape(H, W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Real dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      const Real u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
      const Real d = std::sqrt(u * u + v * v);
      const Real edge = 1 - d + 0.35 * (wobble.at(y, x) - 0.5);
      shape.at(y, x) = std::clamp(edge / 0.15, Real(0), Real(1));
    }
  }
  return shape;
}

void paint_confuser(Tensor& image, Rng& rng) {
  const int H = image.height(), W = image.width();
  const Spectrum snow{rng.uniform(0.75, 0.85), rng.uniform(0.75, 0.85), rng.uniform(0.72, 0.82),
                      rng.uniform(0.45, 0.55)};
  const int cy = rng.integer(0, H - 1), cx = rng.integer(0, W - 1);
  const int pieces = rng.integer(1, 3);
  for (int k = 0; k < pieces; ++k) {
    const int h = rng.integer(4, std::max(4, H / 4)), w = rng.integer(4, std::max(4, W / 4));
    const int y0 = std::clamp(cy + rng.integer(-h / 2, h / 2) - h / 2, 0, H - 1);
    const int x0 = std::clamp(cx + rng.integer(-w / 2, w / 2) - w / 2, 0, W - 1);
    for (int y = y0; y < std::min(H, y0 + h); ++y)
      for (int x = x0; x < std::min(W, x0 + w); ++x)
        for (int b = 0; b < kBands; ++b) image.at(y, x, b) = snow[b] + rng.uniform(-0.02, 0.02);
  }
}

}  // namespace

void SynthParams::validate() const {
  if (height < 2 || width < 2) throw InvalidParameter("synthetic scene must be at least 2x2");
  if (thick_min < 0 || thick_max < thick_min) throw InvalidParameter("thick cloud count range is invalid");
  if (thin_min < 0 || thin_max < thin_min) throw InvalidParameter("thin cloud count range is invalid");
  if (!(thin_alpha_min > 0 && thin_alpha_min <= thin_alpha_max && thin_alpha_max < 1)) {
    throw InvalidParameter("thin cloud alpha range must satisfy 0 < min <= max < 1");
  }
  if (!(confuser_probability >= 0 && confuser_probability <= 1)) {
    throw InvalidParameter("confuser probability must lie in [0, 1]");
  }
  if (noise_octaves < 1) throw InvalidParameter("noise_octaves must be >= 1");
}

std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(seed ^ splitmix64(index + 1)); }

Grid<Real> value_noise(int height, int width, int octaves, int base_cell, std::uint64_t seed) {
  if (height < 1 || width < 1 || octaves < 1 || base_cell < 1) throw InvalidParameter("value_noise: bad arguments");
  Grid<Real> out(height, width);
  Real amplitude = 1, total = 0;
  for (int o = 0; o < octaves; ++o) {
    const int cell = std::max(1, base_cell >> o);
    const int gh = height / cell + 2, gw = width / cell + 2;
    Rng rng(seed + 0x51ed27ULL * static_cast<std::uint64_t>(o + 1));
    std::vector<Real> lattice(static_cast<std::size_t>(gh) * gw);
    for (auto& v : lattice) v = rng.uniform(0, 1);
    for (int y = 0; y < height; ++y) {
      const Real fy = Real(y) / cell;
      const int iy = static_cast<int>(fy);
      const Real ty = fy - iy;
      for (int x = 0; x < width; ++x) {
        const Real fx = Real(x) / cell;
        const int ix = static_cast<int>(fx);
        const Real tx = fx - ix;
        const Real* r0 = lattice.data() + static_cast<std::size_t>(iy) * gw;
        const Real* r1 = r0 + gw;
        const Real top = r0[ix] + (r0[ix + 1] - r0[ix]) * tx;
        const Real bottom = r1[ix] + (r1[ix + 1] - r1[ix]) * tx;
        out.at(y, x) += amplitude * (top + (bottom - top) * ty);
      }
    }
    total += amplitude;
    amplitude *= 0.5;
  }
  for (auto& v : out.data) v /= total;
  return out;
}

Scene generate_scene(const SynthParams& p) {
  p.validate();
  const int H = p.height, W = p.width;
  const int side = std::min(H, W);
  Rng rng(p.seed);

  // Background: a vegetation fraction field drives the NIR/red contrast.
  const Grid<Real> vegetation = value_noise(H, W, p.noise_octaves, std::max(2, side / 4), rng.next());
  const Grid<Real> soil = value_noise(H, W, p.noise_octaves, std::max(2, side / 8), rng.next());
  const Grid<Real> grain = value_noise(H, W, 1, 2, rng.next());
  Scene scene;
  scene.image = Tensor({H, W, kBands});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Real v = vegetation.at(y, x), s = soil.at(y, x), g = 0.04 * (grain.at(y, x) - 0.5);
      const Spectrum px{0.06 + 0.10 * s + g, 0.09 + 0.12 * s + 0.04 * v + g, 0.08 + 0.20 * s * (1 - v) + g,
                        0.18 + 0.40 * v + 0.05 * s + g};
      for (int b = 0; b < kBands; ++b) scene.image.at(y, x, b) = px[b];
    }
  }

  if (rng.chance(p.confuser_probability)) {
    scene.confusers = rng.integer(1, 2);
    for (int k = 0; k < scene.confusers; ++k) paint_confuser(scene.image, rng);
  }

  // Clouds: composite transparency Π(1 - α_i) over all layers.
  Grid<Real> clear(H, W, Real(1));
  const int thick = rng.integer(p.thick_min, p.thick_max);
  const int thin = rng.integer(p.thin_min, p.thin_max);
  for (int k = 0; k < thick + thin; ++k) {
    const Real peak = k < thick ? Real(1) : rng.uniform(p.thin_alpha_min, p.thin_alpha_max);
    const Grid<Real> shape = blob_shape(H, W, rng);
    for (std::size_t i = 0; i < clear.data.size(); ++i) clear.data[i] *= 1 - peak * shape.data[i];
  }

  const Grid<Real> texture = value_noise(H, W, 2, std::max(2, side / 8), rng.next());
  const Spectrum cloud{rng.uniform(0.80, 0.90), rng.uniform(0.80, 0.90), rng.uniform(0.80, 0.90),
                       rng.uniform(0.75, 0.85)};
  scene.alpha = Grid<Real>(H, W);
  scene.label = BinaryMask(H, W);
  const Real threshold = p.label_threshold();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Real a = 1 - clear.at(y, x);
      scene.alpha.at(y, x) = a;
      scene.label.at(y, x) = a > threshold ? 1 : 0;
      const Real t = 0.06 * (texture.at(y, x) - 0.5);
      for (int b = 0; b < kBands; ++b) {
        Real& v = scene.image.at(y, x, b);
        v = std::clamp((1 - a) * v + a * (cloud[b] + t), Real(0), Real(1));
      }
    }
  }
  return scene;
}

}  // namespace cloudmamba::data
