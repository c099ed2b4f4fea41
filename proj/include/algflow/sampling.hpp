#pragma once

// Deterministic point sampling inside a chart box.  Validation sweeps use a
// Halton sequence (low discrepancy, reproducible for a given seed); property
// tests that want independent draws use a seeded mt19937_64.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace algflow {

struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  int dim() const { return static_cast<int>(lo.size()); }

  void validate() const {
    if (lo.size() != hi.size()) throw std::runtime_error("box bounds have mismatched lengths");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i])) throw std::runtime_error("box has empty extent on some axis");
  }

  double map01(int axis, double t) const { return lo[axis] + (hi[axis] - lo[axis]) * t; }
};

namespace detail {
constexpr int kHaltonPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37,
                                 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89};

inline double radical_inverse(std::uint64_t index, int base) {
  double inv = 1.0 / base;
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % static_cast<std::uint64_t>(base));
    index /= static_cast<std::uint64_t>(base);
    f *= inv;
  }
  return r;
}
}  // namespace detail

// points[k] is the k-th Halton point mapped into the box.  The seed shifts
// the sequence start so distinct seeds give distinct but reproducible sweeps.
inline std::vector<std::vector<double>> halton_points(const Box& box, int count,
                                                      std::uint64_t seed) {
  box.validate();
  const int d = box.dim();
  if (d > static_cast<int>(std::size(detail::kHaltonPrimes)))
    throw std::runtime_error("chart dimension exceeds supported Halton axes");
  std::vector<std::vector<double>> pts;
  pts.reserve(static_cast<std::size_t>(count));
  const std::uint64_t start = 1000 + (seed % 100000) * 7919;
  for (int k = 0; k < count; ++k) {
    std::vector<double> p(static_cast<std::size_t>(d));
    for (int axis = 0; axis < d; ++axis)
      p[static_cast<std::size_t>(axis)] = box.map01(
          axis, detail::radical_inverse(start + static_cast<std::uint64_t>(k),
                                        detail::kHaltonPrimes[axis]));
    pts.push_back(std::move(p));
  }
  return pts;
}

class UniformSampler {
 public:
  UniformSampler(Box box, std::uint64_t seed) : box_(std::move(box)), rng_(seed) {
    box_.validate();
  }

  std::vector<double> next() {
    std::vector<double> p(static_cast<std::size_t>(box_.dim()));
    for (int axis = 0; axis < box_.dim(); ++axis)
      p[static_cast<std::size_t>(axis)] = box_.map01(axis, unit_(rng_));
    return p;
  }

 private:
  Box box_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace algflow
