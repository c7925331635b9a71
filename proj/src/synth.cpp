#include "ddspseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>


namespace ddspseg::synth {

void SynthSpec::validate() const {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw std::invalid_argument("grid dims must be positive");
  if (dims.nx % 4 || dims.ny % 4 || dims.nz % 4) {
    throw std::invalid_argument("grid dims must be divisible by 4, got " + to_string(dims));
  }
  if (!(fg_fraction_max > 0.0 && fg_fraction_max < 0.5)) {
    throw std::invalid_argument("foreground fraction bound must lie in (0, 0.5)");
  }
  if (blobs_min < 1 || blobs_max < blobs_min) throw std::invalid_argument("need 1 <= blobs_min <= blobs_max");
  if (!(radius_min > 0.0 && radius_max >= radius_min)) throw std::invalid_argument("need 0 < radius_min <= radius_max");
  if (!(noise >= 0.0) || !(bias >= 0.0)) throw std::invalid_argument("noise and bias must be non-negative");
  if (deform_spacing < 2) throw std::invalid_argument("deformation control spacing must be >= 2 voxels");
}

double SynthSpec::resolved_deform_std() const {
  if (deform_std >= 0.0) return deform_std;
  return 15.0 * static_cast<double>(std::max({dims.nx, dims.ny, dims.nz})) / 96.0;
}

namespace {

struct Blob {
  double c[3];
  double r[3];
};

template <class F>
void for_each_voxel_in(const Blob& b, Dims d, F&& f) {
  const int lo[3] = {std::max(0, static_cast<int>(std::floor(b.c[0] - b.r[0]))),
                     std::max(0, static_cast<int>(std::floor(b.c[1] - b.r[1]))),
                     std::max(0, static_cast<int>(std::floor(b.c[2] - b.r[2])))};
  const int hi[3] = {std::min(d.nx - 1, static_cast<int>(std::ceil(b.c[0] + b.r[0]))),
                     std::min(d.ny - 1, static_cast<int>(std::ceil(b.c[1] + b.r[1]))),
                     std::min(d.nz - 1, static_cast<int>(std::ceil(b.c[2] + b.r[2])))};
  for (int z = lo[2]; z <= hi[2]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[0]; x <= hi[0]; ++x) {
        const double dx = (x - b.c[0]) / b.r[0], dy = (y - b.c[1]) / b.r[1], dz = (z - b.c[2]) / b.r[2];
        if (dx * dx + dy * dy + dz * dz <= 1.0) f(static_cast<std::size_t>(x) + static_cast<std::size_t>(d.nx) * (y + static_cast<std::size_t>(d.ny) * z));
      }
}

}  // namespace

Case gen_synthetic_case(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const Dims d = spec.dims;
  const std::size_t n = d.count();
  const auto budget = static_cast<std::size_t>(spec.fg_fraction_max * static_cast<double>(n));
  const int ext[3] = {d.nx, d.ny, d.nz};

  std::vector<float> truth(n, 0.0f);
  std::size_t fg = 0;
  const int wanted = std::uniform_int_distribution<int>(spec.blobs_min, spec.blobs_max)(rng);
  int placed = 0;
  std::vector<std::size_t> fresh;
  for (int attempt = 0; attempt < 64 * spec.blobs_max && placed < wanted; ++attempt) {
    Blob b{};
    for (int a = 0; a < 3; ++a) {
      b.r[a] = std::uniform_real_distribution<double>(spec.radius_min, spec.radius_max)(rng);
      const double margin = std::min(b.r[a] + 1.0, (ext[a] - 1) / 2.0);
      b.c[a] = std::uniform_real_distribution<double>(margin, ext[a] - 1 - margin)(rng);
    }
    fresh.clear();
    for_each_voxel_in(b, d, [&](std::size_t i) {
      if (truth[i] == 0.0f) fresh.push_back(i);
    });
    if (fresh.empty() || fg + fresh.size() > budget) continue;
    for (auto i : fresh) truth[i] = 1.0f;
    fg += fresh.size();
    ++placed;
  }
  if (placed == 0) {
    throw InfeasibleSpec("no blob fits within foreground fraction " + std::to_string(spec.fg_fraction_max) +
                         " on grid " + to_string(d));
  }

  // Additive bias: mean of three random low-frequency cosines, peak <= bias.
  struct Wave {
    double k[3];
    double phase;
  };
  Wave waves[3];
  for (auto& w : waves) {
    for (double& k : w.k) k = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    w.phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<float> img(n);
  const double contrast = spec.fg_intensity - spec.bg_intensity;
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        double v = spec.bg_intensity + contrast * truth[i];
        if (spec.bias > 0.0) {
          double b = 0.0;
          for (const auto& w : waves) {
            b += std::cos(2.0 * std::numbers::pi * (w.k[0] * x / d.nx + w.k[1] * y / d.ny + w.k[2] * z / d.nz) + w.phase);
          }
          v += spec.bias * b / 3.0;
        }
        if (spec.noise > 0.0) v += spec.noise * noise(rng);
        img[i] = static_cast<float>(v);
      }
  return {Volume(d, spec.spacing, std::move(img)), BinaryMask(Volume(d, spec.spacing, std::move(truth)))};
}

DisplacementField random_displacement(Dims d, int spacing, double std, std::uint64_t seed) {
  if (spacing < 2) throw std::invalid_argument("deformation control spacing must be >= 2 voxels");
  if (!(std >= 0.0)) throw std::invalid_argument("deformation std must be non-negative");
  const int m[3] = {(d.nx - 1 + spacing - 1) / spacing + 1, (d.ny - 1 + spacing - 1) / spacing + 1,
                    (d.nz - 1 + spacing - 1) / spacing + 1};
  const std::size_t nodes = static_cast<std::size_t>(m[0]) * m[1] * m[2];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> ctrl(3 * nodes);
  for (auto& c : ctrl) c = std * g(rng);

  DisplacementField f{Volume(d), Volume(d), Volume(d)};
  Volume* comp[3] = {&f.ux, &f.uy, &f.uz};
  auto node = [&](int a, int i, int j, int k) {
    return ctrl[a * nodes + static_cast<std::size_t>(i) + static_cast<std::size_t>(m[0]) * (j + static_cast<std::size_t>(m[1]) * k)];
  };
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const int i0 = x / spacing, j0 = y / spacing, k0 = z / spacing;
        const int i1 = std::min(i0 + 1, m[0] - 1), j1 = std::min(j0 + 1, m[1] - 1), k1 = std::min(k0 + 1, m[2] - 1);
        const double tx = static_cast<double>(x % spacing) / spacing;
        const double ty = static_cast<double>(y % spacing) / spacing;
        const double tz = static_cast<double>(z % spacing) / spacing;
        for (int a = 0; a < 3; ++a) {
          const double c00 = node(a, i0, j0, k0) * (1 - tx) + node(a, i1, j0, k0) * tx;
          const double c10 = node(a, i0, j1, k0) * (1 - tx) + node(a, i1, j1, k0) * tx;
          const double c01 = node(a, i0, j0, k1) * (1 - tx) + node(a, i1, j0, k1) * tx;
          const double c11 = node(a, i0, j1, k1) * (1 - tx) + node(a, i1, j1, k1) * tx;
          const double c0 = c00 * (1 - ty) + c10 * ty;
          const double c1 = c01 * (1 - ty) + c11 * ty;
          (*comp[a])(x, y, z) = static_cast<float>(c0 * (1 - tz) + c1 * tz);
        }
      }
  return f;
}

namespace {

double clamp_coord(double p, int n) { return std::clamp(p, 0.0, static_cast<double>(n - 1)); }

}  // namespace

Volume warp_trilinear(const Volume& v, const DisplacementField& f) {
  const Dims d = v.dims();
  if (f.ux.dims() != d) throw std::invalid_argument("displacement field dims differ from volume");
  Volume out(d, v.spacing());
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const double px = clamp_coord(x + f.ux(x, y, z), d.nx);
        const double py = clamp_coord(y + f.uy(x, y, z), d.ny);
        const double pz = clamp_coord(z + f.uz(x, y, z), d.nz);
        const int x0 = static_cast<int>(px), y0 = static_cast<int>(py), z0 = static_cast<int>(pz);
        const int x1 = std::min(x0 + 1, d.nx - 1), y1 = std::min(y0 + 1, d.ny - 1), z1 = std::min(z0 + 1, d.nz - 1);
        const double tx = px - x0, ty = py - y0, tz = pz - z0;
        auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
        const double c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), tx);
        const double c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), tx);
        const double c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), tx);
        const double c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), tx);
        out(x, y, z) = static_cast<float>(lerp(lerp(c00, c10, ty), lerp(c01, c11, ty), tz));
      }
  return out;
}

BinaryMask warp_nearest(const BinaryMask& m, const DisplacementField& f) {
  const Dims d = m.dims();
  if (f.ux.dims() != d) throw std::invalid_argument("displacement field dims differ from mask");
  Volume out(d, m.spacing());
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const int sx = static_cast<int>(std::lround(clamp_coord(x + f.ux(x, y, z), d.nx)));
        const int sy = static_cast<int>(std::lround(clamp_coord(y + f.uy(x, y, z), d.ny)));
        const int sz = static_cast<int>(std::lround(clamp_coord(z + f.uz(x, y, z), d.nz)));
        out(x, y, z) = m.at(sx, sy, sz) ? 1.0f : 0.0f;
      }
  return BinaryMask(std::move(out));
}

Case deform_augment(const Volume& image, const BinaryMask& mask, int spacing, double std, std::uint64_t seed) {
  if (image.dims() != mask.dims()) throw std::invalid_argument("image and mask dims differ");
  const auto f = random_displacement(image.dims(), spacing, std, seed);
  return {warp_trilinear(image, f), warp_nearest(mask, f)};
}

Case deform_augment(const Case& c, const SynthSpec& spec, std::uint64_t seed) {
  return deform_augment(c.image, c.truth, spec.deform_spacing, spec.resolved_deform_std(), seed);
}

}  // namespace ddspseg::synth
