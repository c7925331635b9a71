#include "ddspseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ddspseg::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_dims(const BinaryMask& a, const BinaryMask& b) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument("dims mismatch: " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  }
}

bool is_boundary(const BinaryMask& m, int x, int y, int z) {
  const auto& v = m.volume();
  static constexpr int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (const auto& o : off) {
    const int xx = x + o[0], yy = y + o[1], zz = z + o[2];
    if (!v.contains(xx, yy, zz) || v(xx, yy, zz) == 0.0f) return true;
  }
  return false;
}

/// One pass of the lower-envelope squared distance transform along a line.
/// f holds squared distances (kInf for no site); result written back to f.
void edt_1d(std::vector<double>& f, double step, std::vector<int>& v, std::vector<double>& z, std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  const double s2 = step * step;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + s2 * q * q) - (f[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) return;  // no sites on this line
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = (q - v[j]) * step;
    out[q] = d * d + f[v[j]];
  }
  std::copy(out.begin(), out.end(), f.begin());
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest site.
std::vector<double> squared_distance_transform(const std::vector<char>& sites, Dims d, Spacing sp) {
  const std::size_t nx = d.nx, ny = d.ny, nz = d.nz;
  std::vector<double> g(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) g[i] = sites[i] ? 0.0 : kInf;

  const std::size_t longest = std::max({nx, ny, nz});
  std::vector<double> line(longest), out(longest), zbuf(longest + 1);
  std::vector<int> vbuf(longest);

  auto run = [&](std::size_t len, double step, auto index) {
    line.resize(len);
    out.resize(len);
    for (std::size_t i = 0; i < len; ++i) line[i] = g[index(i)];
    edt_1d(line, step, vbuf, zbuf, out);
    for (std::size_t i = 0; i < len; ++i) g[index(i)] = line[i];
  };

  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y) run(nx, sp.sx, [&](std::size_t i) { return i + nx * (y + ny * z); });
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t x = 0; x < nx; ++x) run(ny, sp.sy, [&](std::size_t i) { return x + nx * (i + ny * z); });
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t x = 0; x < nx; ++x) run(nz, sp.sz, [&](std::size_t i) { return x + nx * (y + ny * i); });
  return g;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

BoundarySet boundary_extract(const BinaryMask& m) {
  BoundarySet b;
  const auto& v = m.volume();
  const auto& sp = v.spacing();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 0.0f) continue;
    const auto c = v.coords(i);
    if (!is_boundary(m, c.x, c.y, c.z)) continue;
    b.voxels.push_back(i);
    b.points.push_back({c.x * sp.sx, c.y * sp.sy, c.z * sp.sz});
  }
  return b;
}

double dice_coefficient(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.at(i), y = b.at(i);
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::optional<double> arvd(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b);
  const auto nb = b.count();
  if (nb == 0) return std::nullopt;
  return 100.0 * std::abs(static_cast<double>(a.count()) / static_cast<double>(nb) - 1.0);
}

std::vector<double> directed_boundary_distances(const BinaryMask& from, const BinaryMask& to) {
  require_same_dims(from, to);
  const auto bf = boundary_extract(from);
  const auto bt = boundary_extract(to);
  std::vector<double> out;
  if (bf.empty() || bt.empty()) return out;

  std::vector<char> sites(to.size(), 0);
  for (auto i : bt.voxels) sites[i] = 1;
  // Spacing of `from` and `to` is assumed equal; the reference grid wins.
  const auto g = squared_distance_transform(sites, to.dims(), to.spacing());
  out.reserve(bf.size());
  for (auto i : bf.voxels) out.push_back(std::sqrt(g[i]));
  return out;
}

double nearest_rank_percentile(std::vector<double> values, int pct) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (pct < 0 || pct > 100) throw std::invalid_argument("percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::size_t rank = (static_cast<std::size_t>(pct) * n + 99) / 100;  // ceil(pct * n / 100)
  rank = std::max<std::size_t>(rank, 1);
  return values[rank - 1];
}

std::optional<double> abd(const BinaryMask& a, const BinaryMask& b) {
  auto ab = directed_boundary_distances(a, b);
  auto ba = directed_boundary_distances(b, a);
  if (ab.empty() || ba.empty()) return std::nullopt;
  return 0.5 * (mean(ab) + mean(ba));
}

std::optional<double> hd95(const BinaryMask& a, const BinaryMask& b) {
  auto ab = directed_boundary_distances(a, b);
  auto ba = directed_boundary_distances(b, a);
  if (ab.empty() || ba.empty()) return std::nullopt;
  return std::max(nearest_rank_percentile(std::move(ab), 95), nearest_rank_percentile(std::move(ba), 95));
}

std::optional<double> hausdorff(const BinaryMask& a, const BinaryMask& b) {
  auto ab = directed_boundary_distances(a, b);
  auto ba = directed_boundary_distances(b, a);
  if (ab.empty() || ba.empty()) return std::nullopt;
  return std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
}

MetricsReport evaluate(const BinaryMask& pred, const BinaryMask& ref) {
  require_same_dims(pred, ref);
  MetricsReport r;
  r.dsc = dice_coefficient(pred, ref);
  r.arvd_pct = arvd(pred, ref);
  const bool empty_pred = pred.count() == 0;
  const bool empty_ref = ref.count() == 0;
  if (empty_pred) r.flags.emplace_back("empty_prediction");
  if (empty_ref) r.flags.emplace_back("empty_reference");
  if (!empty_pred && !empty_ref) {
    auto ab = directed_boundary_distances(pred, ref);
    auto ba = directed_boundary_distances(ref, pred);
    r.abd_mm = 0.5 * (mean(ab) + mean(ba));
    r.hd95_mm = std::max(nearest_rank_percentile(std::move(ab), 95), nearest_rank_percentile(std::move(ba), 95));
  }
  return r;
}

}  // namespace ddspseg::metrics
