#pragma once

// Random expression generator for derivative property checks, plus the
// finite-difference cross-check itself.  Generated trees keep log, sqrt and
// division away from their singular sets by construction (arguments of the
// form c + u^2 with c >= 0.5); anything that still evaluates outside the
// domain, overflows, or is too rough for the step size is resampled.
// Resampling is decided only by the expression's own finite-difference
// self-consistency, never by its disagreement with the analytic derivative,
// so a wrong derivative rule cannot hide behind it.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "algflow/expr.hpp"

namespace algflow::testgen {

class ExprGen {
 public:
  ExprGen(std::vector<std::string> vars, std::uint64_t seed)
      : vars_(std::move(vars)), rng_(seed) {}

  Expr leaf() {
    if (unit() < 0.65) {
      const int v = pick_var();
      return variable(v, vars_[static_cast<std::size_t>(v)]);
    }
    return constant(round3(uniform(-3.0, 3.0)));
  }

  Expr gen(int depth) {
    if (depth <= 0) return leaf();
    const double r = unit();
    if (r < 0.16) return add(gen(depth - 1), gen(depth - 1));
    if (r < 0.30) return sub(gen(depth - 1), gen(depth - 1));
    if (r < 0.48) return mul(gen(depth - 1), gen(depth - 1));
    if (r < 0.56) return safe_div(gen(depth - 1), gen(depth - 1));
    if (r < 0.66) return sin(gen(depth - 1));
    if (r < 0.76) return cos(gen(depth - 1));
    if (r < 0.82) return exp(mul(constant(0.5), gen(depth - 1)));
    if (r < 0.88) return log(positive(gen(depth - 1)));
    if (r < 0.93) return sqrt(positive(gen(depth - 1)));
    if (r < 0.97) return pow(gen(depth - 1), constant(double(2 + (rng_() % 2))));
    return pow(positive(gen(depth - 1)), leaf());
  }

  int pick_var() { return static_cast<int>(rng_() % vars_.size()); }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * unit();
  }

  std::vector<double> point(double lo, double hi) {
    std::vector<double> p(vars_.size());
    for (auto& c : p) c = uniform(lo, hi);
    return p;
  }

 private:
  Expr positive(const Expr& u) { return add(constant(round3(uniform(0.5, 2.0))), mul(u, u)); }
  Expr safe_div(const Expr& a, const Expr& b) { return div(a, positive(b)); }
  static double round3(double v) { return std::round(v * 1000.0) / 1000.0; }
  double unit() { return unit_(rng_); }

  std::vector<std::string> vars_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

struct FdReport {
  int tested = 0;
  int resampled = 0;
  double max_rel_err = 0.0;
};

// Runs `count` fresh (expression, variable) derivative checks against a
// central difference with step h.  Relative error is measured against
// max(1, |analytic|).  Throws if the resample budget is exhausted.
inline FdReport fd_derivative_check(ExprGen& gen, int count, double h, double tol) {
  FdReport rep;
  int attempts = 0;
  const int max_attempts = count * 60;
  while (rep.tested < count) {
    if (++attempts > max_attempts)
      throw std::runtime_error("finite-difference check exhausted its resample budget");
    const Expr e = gen.gen(3);
    const int var = gen.pick_var();
    const std::vector<double> p = gen.point(-2.0, 2.0);
    double fd_h, fd_h2, an;
    try {
      const Expr de = differentiate(e, var);
      an = de.eval(p);
      auto shifted = [&](double dh) {
        std::vector<double> q = p;
        q[static_cast<std::size_t>(var)] += dh;
        return e.eval(q);
      };
      fd_h = (shifted(h) - shifted(-h)) / (2.0 * h);
      fd_h2 = (shifted(h / 2.0) - shifted(-h / 2.0)) / h;
    } catch (const DomainError&) {
      ++rep.resampled;
      continue;
    }
    const double scale = std::max(1.0, std::abs(an));
    if (std::abs(an) > 1e6 || std::abs(fd_h - fd_h2) > 0.25 * tol * scale) {
      ++rep.resampled;  // step sizes disagree with each other: too rough here
      continue;
    }
    const double rel = std::abs(fd_h - an) / scale;
    if (rel > rep.max_rel_err) rep.max_rel_err = rel;
    ++rep.tested;
  }
  return rep;
}

}  // namespace algflow::testgen
