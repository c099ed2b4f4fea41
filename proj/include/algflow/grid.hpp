// Uniform periodic lattice over a rectangular chart box, with fourth order
// centered finite differences along each axis. The right edge of every axis is
// identified with the left one, so the sample set covers [lo, hi) and the
// spacing is (hi - lo) / count.

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace algflow {

struct Grid {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<int> counts;
  std::vector<double> spacing;
  std::vector<std::size_t> stride;  // row-major, last axis fastest
  std::size_t total = 0;

  static Grid make(std::vector<double> lo_in, std::vector<double> hi_in,
                   std::vector<int> counts_in) {
    Grid g;
    g.lo = std::move(lo_in);
    g.hi = std::move(hi_in);
    g.counts = std::move(counts_in);
    const std::size_t k = g.counts.size();
    if (k == 0 || g.lo.size() != k || g.hi.size() != k)
      throw std::runtime_error("grid axis data sizes disagree");
    g.spacing.resize(k);
    g.stride.assign(k, 1);
    for (std::size_t a = 0; a < k; ++a) {
      if (g.counts[a] < 8) throw std::runtime_error("grid needs at least 8 points per axis");
      if (!std::isfinite(g.lo[a]) || !std::isfinite(g.hi[a]) || !(g.hi[a] > g.lo[a]))
        throw std::runtime_error("grid box bounds must be finite with hi > lo");
      g.spacing[a] = (g.hi[a] - g.lo[a]) / g.counts[a];
    }
    for (std::size_t a = k - 1; a-- > 0;)
      g.stride[a] = g.stride[a + 1] * static_cast<std::size_t>(g.counts[a + 1]);
    g.total = g.stride[0] * static_cast<std::size_t>(g.counts[0]);
    return g;
  }

  int axes() const { return static_cast<int>(counts.size()); }

  double cell_volume() const {
    double v = 1.0;
    for (double s : spacing) v *= s;
    return v;
  }

  double max_spacing() const {
    double v = spacing[0];
    for (double s : spacing)
      if (s > v) v = s;
    return v;
  }

  std::vector<double> point(std::size_t flat) const {
    std::vector<double> p(counts.size());
    for (std::size_t a = 0; a < counts.size(); ++a) {
      const std::size_t idx = (flat / stride[a]) % static_cast<std::size_t>(counts[a]);
      p[a] = lo[a] + static_cast<double>(idx) * spacing[a];
    }
    return p;
  }
};

// out[p] = d(data)/d(axis) at p, periodic wrap, error O(spacing^4).
inline void derive_axis(const Grid& g, const double* data, int axis, double* out) {
  const int cnt = g.counts[static_cast<std::size_t>(axis)];
  const std::size_t s = g.stride[static_cast<std::size_t>(axis)];
  const std::size_t line = s * static_cast<std::size_t>(cnt);
  const double scale = 1.0 / (12.0 * g.spacing[static_cast<std::size_t>(axis)]);
  for (std::size_t block = 0; block < g.total; block += line)
    for (std::size_t inner = 0; inner < s; ++inner) {
      const double* d = data + block + inner;
      double* o = out + block + inner;
      for (int i = 0; i < cnt; ++i) {
        const int ip1 = i + 1 < cnt ? i + 1 : i + 1 - cnt;
        const int ip2 = i + 2 < cnt ? i + 2 : i + 2 - cnt;
        const int im1 = i - 1 >= 0 ? i - 1 : i - 1 + cnt;
        const int im2 = i - 2 >= 0 ? i - 2 : i - 2 + cnt;
        o[static_cast<std::size_t>(i) * s] =
            (8.0 * (d[static_cast<std::size_t>(ip1) * s] - d[static_cast<std::size_t>(im1) * s]) -
             (d[static_cast<std::size_t>(ip2) * s] - d[static_cast<std::size_t>(im2) * s])) *
            scale;
      }
    }
}

inline void derive_axis(const Grid& g, const std::vector<double>& data, int axis,
                        std::vector<double>& out) {
  out.resize(g.total);
  derive_axis(g, data.data(), axis, out.data());
}

}  // namespace algflow
