// Parabolic evolution of block metrics on a periodic sampling grid. The frame
// data (anchor, structure functions, N-connection and its fiber derivatives)
// is frozen at setup; each evaluation assembles the active connection
// coefficients pointwise from fourth order frame derivatives of the metric,
// contracts curvature, and feeds the metric and potential equations. The
// functional and thermodynamic integrands use the same arrays, so one
// evaluation serves both the stepper and the per-step report.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "algflow/field.hpp"
#include "algflow/geometry.hpp"
#include "algflow/grid.hpp"
#include "algflow/linalg.hpp"

namespace algflow {

enum class FlowMode { Canonical, Distorted };
enum class GradConvention { Squared, Literal };

struct FlowDomainError : std::runtime_error {
  explicit FlowDomainError(const std::string& w) : std::runtime_error(w) {}
};
struct FlowInvariantError : std::runtime_error {
  explicit FlowInvariantError(const std::string& w) : std::runtime_error(w) {}
};

namespace detail {

constexpr int kMaxBlock = 6;

// Dense LU with partial pivoting on one metric block, allocation free.
struct SmallLu {
  int n = 0;
  double a[kMaxBlock * kMaxBlock];
  int perm[kMaxBlock];
  int sign = 1;

  void factor(const double* src, int nn) {
    if (nn > kMaxBlock) throw std::runtime_error("metric block larger than supported");
    n = nn;
    sign = 1;
    for (int i = 0; i < n * n; ++i) a[i] = src[i];
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int k = 0; k < n; ++k) {
      int piv = k;
      double best = std::fabs(a[perm[k] * n + k]);
      for (int r = k + 1; r < n; ++r) {
        const double v = std::fabs(a[perm[r] * n + k]);
        if (v > best) {
          best = v;
          piv = r;
        }
      }
      if (best == 0.0) throw SingularMatrixError("singular metric block on grid");
      if (piv != k) {
        std::swap(perm[piv], perm[k]);
        sign = -sign;
      }
      const double d = a[perm[k] * n + k];
      for (int r = k + 1; r < n; ++r) {
        const double f = a[perm[r] * n + k] / d;
        a[perm[r] * n + k] = f;
        for (int c = k + 1; c < n; ++c) a[perm[r] * n + c] -= f * a[perm[k] * n + c];
      }
    }
  }

  void solve(const double* b, double* x) const {
    double y[kMaxBlock];
    for (int i = 0; i < n; ++i) {
      double s = b[perm[i]];
      for (int j = 0; j < i; ++j) s -= a[perm[i] * n + j] * y[j];
      y[i] = s;
    }
    for (int i = n - 1; i >= 0; --i) {
      double s = y[i];
      for (int j = i + 1; j < n; ++j) s -= a[perm[i] * n + j] * x[j];
      x[i] = s / a[perm[i] * n + i];
    }
  }

  void inverse(double* inv) const {
    double e[kMaxBlock], col[kMaxBlock];
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) e[i] = i == j ? 1.0 : 0.0;
      solve(e, col);
      for (int i = 0; i < n; ++i) inv[i * n + j] = col[i];
    }
  }

  double det() const {
    double d = sign;
    for (int i = 0; i < n; ++i) d *= a[perm[i] * n + i];
    return d;
  }
};

// Cholesky existence test; the flow keeps both blocks inside the cone.
inline bool positive_definite(const double* g, int m) {
  double a[kMaxBlock * kMaxBlock];
  for (int i = 0; i < m * m; ++i) a[i] = g[i];
  for (int k = 0; k < m; ++k) {
    double d = a[k * m + k];
    for (int j = 0; j < k; ++j) d -= a[k * m + j] * a[k * m + j];
    if (!(d > 0.0)) return false;
    const double r = std::sqrt(d);
    a[k * m + k] = r;
    for (int i = k + 1; i < m; ++i) {
      double s = a[i * m + k];
      for (int j = 0; j < k; ++j) s -= a[i * m + j] * a[k * m + j];
      a[i * m + k] = s / r;
    }
  }
  return true;
}

inline double min_eigenvalue(const double* g, int m) {
  if (m == 1) return g[0];
  if (m == 2) {
    const double half = 0.5 * (g[0] + g[3]);
    const double off = 0.5 * (g[1] + g[2]);
    const double rad = std::sqrt(0.25 * (g[0] - g[3]) * (g[0] - g[3]) + off * off);
    return half - rad;
  }
  Mat a(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) a(i, j) = g[i * m + j];
  return min_sym_eigenvalue(a);
}

}  // namespace detail

// Frame data sampled once over the grid. Axes are ordered base first, fiber
// last, matching the chart coordinate order.
struct GridSample {
  int n = 0;
  int m = 0;
  Grid grid;
  std::vector<double> rho;    // [p][al][i]      anchor components
  std::vector<double> cc;     // [p][al][be][ga] structure functions
  std::vector<double> nconn;  // [p][al][C]      N_al^C
  std::vector<double> vn;     // [p][ga][A][B]   V_B N_ga^A
  std::vector<double> omega;  // [p][al][be][A]  Omega_al_be^A
  bool frame_coupling = false;  // any of C, Omega, V N nonzero

  int dim() const { return 2 * m; }

  double rho_at(std::size_t p, int al, int i) const {
    return rho[(p * static_cast<std::size_t>(m) + static_cast<std::size_t>(al)) *
                   static_cast<std::size_t>(n) +
               static_cast<std::size_t>(i)];
  }
  double n_at(std::size_t p, int al, int C) const {
    return nconn[(p * static_cast<std::size_t>(m) + static_cast<std::size_t>(al)) *
                     static_cast<std::size_t>(m) +
                 static_cast<std::size_t>(C)];
  }
  double vn_at(std::size_t p, int ga, int A, int B) const {
    return vn[((p * static_cast<std::size_t>(m) + static_cast<std::size_t>(ga)) *
                   static_cast<std::size_t>(m) +
               static_cast<std::size_t>(A)) *
                  static_cast<std::size_t>(m) +
              static_cast<std::size_t>(B)];
  }
  double c_at(std::size_t p, int al, int be, int ga) const {
    return cc[((p * static_cast<std::size_t>(m) + static_cast<std::size_t>(al)) *
                   static_cast<std::size_t>(m) +
               static_cast<std::size_t>(be)) *
                  static_cast<std::size_t>(m) +
              static_cast<std::size_t>(ga)];
  }
  double omega_at(std::size_t p, int al, int be, int A) const {
    return omega[((p * static_cast<std::size_t>(m) + static_cast<std::size_t>(al)) *
                      static_cast<std::size_t>(m) +
                  static_cast<std::size_t>(be)) *
                     static_cast<std::size_t>(m) +
                 static_cast<std::size_t>(A)];
  }

  static GridSample from_geometry(const LagrangeGeometry& geo, Grid grid_in) {
    const Coords& co = geo.coords();
    GridSample s;
    s.n = co.n;
    s.m = co.m;
    if (grid_in.axes() != co.n + co.m)
      throw FlowDomainError("grid axes do not match chart dimension");
    s.grid = std::move(grid_in);
    const std::size_t total = s.grid.total;
    const int n = s.n, m = s.m;
    s.rho.assign(total * static_cast<std::size_t>(m * n), 0.0);
    s.cc.assign(total * static_cast<std::size_t>(m * m * m), 0.0);
    s.nconn.assign(total * static_cast<std::size_t>(m * m), 0.0);
    s.vn.assign(total * static_cast<std::size_t>(m * m * m), 0.0);
    s.omega.assign(total * static_cast<std::size_t>(m * m * m), 0.0);

    std::vector<Field> vnf(static_cast<std::size_t>(m * m * m));
    std::vector<Field> omf(vnf.size());
    for (int ga = 0; ga < m; ++ga)
      for (int A = 0; A < m; ++A)
        for (int B = 0; B < m; ++B)
          vnf[static_cast<std::size_t>((ga * m + A) * m + B)] =
              fdiff(geo.nconn(ga, A), co.y_index(B));
    for (int al = 0; al < m; ++al)
      for (int be = 0; be < m; ++be)
        for (int A = 0; A < m; ++A)
          omf[static_cast<std::size_t>((al * m + be) * m + A)] =
              geo.curvature_of_nconn(al, be, A);

    const Algebroid& alg = geo.alg();
    for (std::size_t p = 0; p < total; ++p) {
      const std::vector<double> pt = s.grid.point(p);
      EvalContext ctx(pt);
      for (int al = 0; al < m; ++al)
        for (int i = 0; i < n; ++i)
          s.rho[(p * static_cast<std::size_t>(m) + static_cast<std::size_t>(al)) *
                    static_cast<std::size_t>(n) +
                static_cast<std::size_t>(i)] = alg.rho_at(al, i).eval(pt);
      for (int al = 0; al < m; ++al)
        for (int be = 0; be < m; ++be)
          for (int ga = 0; ga < m; ++ga)
            s.cc[((p * static_cast<std::size_t>(m) + static_cast<std::size_t>(al)) *
                      static_cast<std::size_t>(m) +
                  static_cast<std::size_t>(be)) *
                     static_cast<std::size_t>(m) +
                 static_cast<std::size_t>(ga)] = alg.c_at(al, be, ga).eval(pt);
      for (int al = 0; al < m; ++al)
        for (int C = 0; C < m; ++C)
          s.nconn[(p * static_cast<std::size_t>(m) + static_cast<std::size_t>(al)) *
                      static_cast<std::size_t>(m) +
                  static_cast<std::size_t>(C)] = ctx.eval(geo.nconn(al, C));
      for (std::size_t k = 0; k < vnf.size(); ++k)
        s.vn[p * vnf.size() + k] = ctx.eval(vnf[k]);
      for (std::size_t k = 0; k < omf.size(); ++k)
        s.omega[p * omf.size() + k] = ctx.eval(omf[k]);
    }
    s.scan_coupling();
    return s;
  }

  // Identity anchor, vanishing structure functions and N-connection.
  static GridSample trivial(int n_in, int m_in, Grid grid_in) {
    if (n_in != m_in) throw FlowDomainError("trivial frame needs matching base and fiber rank");
    GridSample s;
    s.n = n_in;
    s.m = m_in;
    if (grid_in.axes() != n_in + m_in)
      throw FlowDomainError("grid axes do not match chart dimension");
    s.grid = std::move(grid_in);
    const std::size_t total = s.grid.total;
    s.rho.assign(total * static_cast<std::size_t>(s.m * s.n), 0.0);
    s.cc.assign(total * static_cast<std::size_t>(s.m * s.m * s.m), 0.0);
    s.nconn.assign(total * static_cast<std::size_t>(s.m * s.m), 0.0);
    s.vn.assign(total * static_cast<std::size_t>(s.m * s.m * s.m), 0.0);
    s.omega.assign(total * static_cast<std::size_t>(s.m * s.m * s.m), 0.0);
    for (std::size_t p = 0; p < total; ++p)
      for (int al = 0; al < s.m; ++al)
        s.rho[(p * static_cast<std::size_t>(s.m) + static_cast<std::size_t>(al)) *
                  static_cast<std::size_t>(s.n) +
              static_cast<std::size_t>(al)] = 1.0;
    s.frame_coupling = false;
    return s;
  }

  void scan_coupling() {
    frame_coupling = false;
    for (double v : cc)
      if (v != 0.0) {
        frame_coupling = true;
        return;
      }
    for (double v : omega)
      if (v != 0.0) {
        frame_coupling = true;
        return;
      }
    for (double v : vn)
      if (v != 0.0) {
        frame_coupling = true;
        return;
      }
  }
};

// Evolving data: block metrics, potential, flow parameter and backward time.
struct FlowState {
  double chi = 0.0;
  double tau = 1.0;
  std::vector<double> gh;  // [p][i][j]
  std::vector<double> gv;  // [p][A][B]
  std::vector<double> f;   // [p]
};

inline double state_volume(const GridSample& s, const FlowState& st) {
  const int m = s.m;
  const std::size_t mm = static_cast<std::size_t>(m * m);
  detail::SmallLu lh, lv;
  double vol = 0.0;
  for (std::size_t p = 0; p < s.grid.total; ++p) {
    lh.factor(st.gh.data() + p * mm, m);
    lv.factor(st.gv.data() + p * mm, m);
    const double d = lh.det() * lv.det();
    if (!(d > 0.0)) throw FlowInvariantError("nonpositive metric volume element");
    vol += std::sqrt(d);
  }
  return vol * s.grid.cell_volume();
}

// f constant solving total measure one: f = log Vol - m log(4 pi tau).
inline void set_constant_f(const GridSample& s, FlowState& st) {
  const double vol = state_volume(s, st);
  const double f0 = std::log(vol) - s.m * std::log(4.0 * 3.14159265358979323846 * st.tau);
  st.f.assign(s.grid.total, f0);
}

inline double measure_total(const GridSample& s, const FlowState& st) {
  const int m = s.m;
  const std::size_t mm = static_cast<std::size_t>(m * m);
  detail::SmallLu lh, lv;
  double tot = 0.0;
  for (std::size_t p = 0; p < s.grid.total; ++p) {
    lh.factor(st.gh.data() + p * mm, m);
    lv.factor(st.gv.data() + p * mm, m);
    const double d = lh.det() * lv.det();
    if (!(d > 0.0)) throw FlowInvariantError("nonpositive metric volume element");
    tot += std::exp(-st.f[p]) * std::sqrt(d);
  }
  const double pref = std::pow(4.0 * 3.14159265358979323846 * st.tau, -s.m);
  return pref * tot * s.grid.cell_volume();
}

// Shifts f so the weighted measure integrates to one; pure gauge for the
// metric evolution.
inline void normalize_f(const GridSample& s, FlowState& st) {
  const double shift = std::log(measure_total(s, st));
  for (double& v : st.f) v += shift;
}

inline FlowState init_flow(const GridSample& s, const LagrangeGeometry& geo, double tau0) {
  if (!(tau0 > 0.0)) throw FlowDomainError("tau0 must be positive");
  const int m = s.m;
  const std::size_t mm = static_cast<std::size_t>(m * m);
  FlowState st;
  st.tau = tau0;
  st.gh.assign(s.grid.total * mm, 0.0);
  st.gv.assign(s.grid.total * mm, 0.0);
  for (std::size_t p = 0; p < s.grid.total; ++p) {
    const std::vector<double> pt = s.grid.point(p);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        const double v = geo.hess_at(a, b).eval(pt);
        st.gh[p * mm + static_cast<std::size_t>(a * m + b)] = v;
        st.gv[p * mm + static_cast<std::size_t>(a * m + b)] = v;
      }
    if (!detail::positive_definite(st.gh.data() + p * mm, m))
      throw FlowDomainError("metric block not positive definite on grid");
  }
  set_constant_f(s, st);
  return st;
}

inline FlowState init_state_from_exprs(const GridSample& s, const std::vector<Expr>& ghe,
                                       const std::vector<Expr>& gve, double tau0) {
  if (!(tau0 > 0.0)) throw FlowDomainError("tau0 must be positive");
  const int m = s.m;
  const std::size_t mm = static_cast<std::size_t>(m * m);
  if (ghe.size() != mm || gve.size() != mm)
    throw FlowDomainError("metric expression count does not match fiber rank");
  FlowState st;
  st.tau = tau0;
  st.gh.assign(s.grid.total * mm, 0.0);
  st.gv.assign(s.grid.total * mm, 0.0);
  for (std::size_t p = 0; p < s.grid.total; ++p) {
    const std::vector<double> pt = s.grid.point(p);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        const std::size_t k = static_cast<std::size_t>(a * m + b);
        st.gh[p * mm + k] = 0.5 * (ghe[k].eval(pt) + ghe[static_cast<std::size_t>(b * m + a)].eval(pt));
        st.gv[p * mm + k] = 0.5 * (gve[k].eval(pt) + gve[static_cast<std::size_t>(b * m + a)].eval(pt));
      }
    if (!detail::positive_definite(st.gh.data() + p * mm, m) ||
        !detail::positive_definite(st.gv.data() + p * mm, m))
      throw FlowDomainError("metric block not positive definite on grid");
  }
  set_constant_f(s, st);
  return st;
}

// Adds amp * (symmetrized expr) to each block, then refreshes the constant f.
inline void add_metric_perturbation(const GridSample& s, FlowState& st,
                                    const std::vector<Expr>& he, const std::vector<Expr>& ve,
                                    double amp) {
  const int m = s.m;
  const std::size_t mm = static_cast<std::size_t>(m * m);
  if (he.size() != mm || ve.size() != mm)
    throw FlowDomainError("perturbation expression count does not match fiber rank");
  for (std::size_t p = 0; p < s.grid.total; ++p) {
    const std::vector<double> pt = s.grid.point(p);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        const std::size_t k = static_cast<std::size_t>(a * m + b);
        const std::size_t kt = static_cast<std::size_t>(b * m + a);
        st.gh[p * mm + k] += amp * 0.5 * (he[k].eval(pt) + he[kt].eval(pt));
        st.gv[p * mm + k] += amp * 0.5 * (ve[k].eval(pt) + ve[kt].eval(pt));
      }
    if (!detail::positive_definite(st.gh.data() + p * mm, m) ||
        !detail::positive_definite(st.gv.data() + p * mm, m))
      throw FlowDomainError("perturbation breaks positive definiteness");
  }
  set_constant_f(s, st);
}

class FlowEngine {
 public:
  struct Report {
    double F = 0.0;
    double W = 0.0;
    double mu_total = 0.0;
    double log_z = 0.0;
    double e_avg = 0.0;
    double entropy = 0.0;
    double sigma = 0.0;
    double beta = 0.0;
    double max_mixed = 0.0;
    double min_eig = 0.0;
    double max_sr = 0.0;
  };

  FlowEngine(const GridSample& s, FlowMode mode, GradConvention grad)
      : s_(&s), mode_(mode), grad_(grad) {
    const int axes = s_->grid.axes();
    const int d = s_->dim();
    coef_nz_.assign(static_cast<std::size_t>(d * axes), 0);
    for (int a = 0; a < d; ++a)
      for (int k = 0; k < axes; ++k) {
        bool nz = false;
        if (a < s_->m) {
          if (k < s_->n) {
            for (std::size_t p = 0; p < s_->grid.total && !nz; ++p)
              nz = s_->rho_at(p, a, k) != 0.0;
          } else {
            for (std::size_t p = 0; p < s_->grid.total && !nz; ++p)
              nz = s_->n_at(p, a, k - s_->n) != 0.0;
          }
        } else {
          nz = k == s_->n + (a - s_->m);
        }
        coef_nz_[static_cast<std::size_t>(a * axes + k)] = nz ? 1 : 0;
      }
  }

  FlowMode mode() const { return mode_; }
  GradConvention grad() const { return grad_; }

  // Active connection curvature and potential derivatives of one state.
  void evaluate(const FlowState& st) {
    const std::size_t total = s_->grid.total;
    const int m = s_->m, d = s_->dim(), axes = s_->grid.axes();
    const std::size_t mm = static_cast<std::size_t>(m * m);
    const std::size_t dd = static_cast<std::size_t>(d * d);
    const std::size_t d3 = dd * static_cast<std::size_t>(d);
    resize_buffers();

    // e_cbar of both metric blocks.
    std::fill(egh_.begin(), egh_.end(), 0.0);
    std::fill(egv_.begin(), egv_.end(), 0.0);
    for (std::size_t c = 0; c < mm; ++c) {
      gather_metric(st.gh, c, comp_);
      for (int k = 0; k < axes; ++k) {
        derive_axis(s_->grid, comp_.data(), k, dcomp_.data());
        accumulate_frame(dcomp_, k, egh_, c, mm);
      }
      gather_metric(st.gv, c, comp_);
      for (int k = 0; k < axes; ++k) {
        derive_axis(s_->grid, comp_.data(), k, dcomp_.data());
        accumulate_frame(dcomp_, k, egv_, c, mm);
      }
    }

    // Connection coefficients.
    std::fill(gamma_.begin(), gamma_.end(), 0.0);
    if (mode_ == FlowMode::Canonical)
      assemble_canonical(st);
    else
      assemble_frame_koszul(st);

    // Contracted curvature of the active coefficients.
    std::fill(ric_.begin(), ric_.end(), 0.0);
    for (int ff = 0; ff < d; ++ff)
      for (std::size_t p = 0; p < total; ++p) {
        double t = 0.0;
        const double* gp = gamma_.data() + p * d3;
        for (int a = 0; a < d; ++a) t += gp[(a * d + ff) * d + a];
        tr_[static_cast<std::size_t>(ff) * total + p] = t;
      }
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
          bool any = false;
          for (int k = 0; k < axes; ++k) any = any || coef_nz_[static_cast<std::size_t>(a * axes + k)];
          if (!any) continue;
          const std::size_t off = static_cast<std::size_t>((a * d + b) * d + c);
          for (std::size_t p = 0; p < total; ++p) comp_[p] = gamma_[p * d3 + off];
          for (int k = 0; k < axes; ++k) {
            if (!coef_nz_[static_cast<std::size_t>(a * axes + k)]) continue;
            derive_axis(s_->grid, comp_.data(), k, dcomp_.data());
            const std::size_t ro = static_cast<std::size_t>(b * d + c);
            accumulate_coef(a, k, dcomp_, ric_, ro, dd, 1.0);
          }
        }
    for (int b = 0; b < d; ++b) {
      const double* trb = tr_.data() + static_cast<std::size_t>(b) * total;
      for (int k = 0; k < axes; ++k) {
        bool any = false;
        for (int c = 0; c < d; ++c) any = any || coef_nz_[static_cast<std::size_t>(c * axes + k)];
        if (!any) continue;
        derive_axis(s_->grid, trb, k, dcomp_.data());
        for (int c = 0; c < d; ++c) {
          if (!coef_nz_[static_cast<std::size_t>(c * axes + k)]) continue;
          accumulate_coef(c, k, dcomp_, ric_, static_cast<std::size_t>(b * d + c), dd, -1.0);
        }
      }
    }
    for (std::size_t p = 0; p < total; ++p) {
      const double* gp = gamma_.data() + p * d3;
      double* rp = ric_.data() + p * dd;
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
          double acc = 0.0;
          for (int ff = 0; ff < d; ++ff) {
            acc += gp[(ff * d + b) * d + c] * tr_[static_cast<std::size_t>(ff) * total + p];
            const double* gfb = gp + (ff * d + b) * d;
            for (int a = 0; a < d; ++a) acc -= gfb[a] * gp[(a * d + ff) * d + c];
          }
          rp[b * d + c] += acc;
        }
      if (s_->frame_coupling) {
        build_anholonomy(p);
        const double* w = wbuf_.data();
        for (int phi = 0; phi < d; ++phi)
          for (int c = 0; c < d; ++c)
            for (int a = 0; a < d; ++a) {
              const double val = w[(phi * d + c) * d + a];
              if (val == 0.0) continue;
              for (int b = 0; b < d; ++b) rp[b * d + c] += gp[(a * d + b) * d + phi] * val;
            }
      }
    }

    // Block inverses, scalar curvature, mixed monitor.
    max_sr_ = 0.0;
    max_mixed_ = 0.0;
    for (std::size_t p = 0; p < total; ++p) {
      luh_.factor(st.gh.data() + p * mm, m);
      luv_.factor(st.gv.data() + p * mm, m);
      luh_.inverse(ghinv_.data() + p * mm);
      luv_.inverse(gvinv_.data() + p * mm);
      const double* rp = ric_.data() + p * dd;
      double sr = 0.0;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          sr += ghinv_[p * mm + static_cast<std::size_t>(i * m + j)] * rp[i * d + j];
          sr += gvinv_[p * mm + static_cast<std::size_t>(i * m + j)] * rp[(m + i) * d + (m + j)];
        }
      sr_[p] = sr;
      if (std::fabs(sr) > max_sr_) max_sr_ = std::fabs(sr);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          const double a = std::fabs(rp[i * d + (m + j)]);
          const double b = std::fabs(rp[(m + i) * d + j]);
          if (a > max_mixed_) max_mixed_ = a;
          if (b > max_mixed_) max_mixed_ = b;
        }
    }

    // Frame derivatives of the potential.
    std::fill(ef_.begin(), ef_.end(), 0.0);
    for (int k = 0; k < axes; ++k) {
      derive_axis(s_->grid, st.f.data(), k, dcomp_.data());
      for (int b = 0; b < d; ++b) {
        if (!coef_nz_[static_cast<std::size_t>(b * axes + k)]) continue;
        accumulate_coef_flat(b, k, dcomp_, ef_, static_cast<std::size_t>(b) * total, 1.0);
      }
    }
    std::fill(hf_.begin(), hf_.end(), 0.0);
    for (int b = 0; b < d; ++b) {
      const double* efb = ef_.data() + static_cast<std::size_t>(b) * total;
      for (int k = 0; k < axes; ++k) {
        bool any = false;
        for (int a = 0; a < d; ++a) any = any || coef_nz_[static_cast<std::size_t>(a * axes + k)];
        if (!any) continue;
        derive_axis(s_->grid, efb, k, dcomp_.data());
        for (int a = 0; a < d; ++a) {
          if (!coef_nz_[static_cast<std::size_t>(a * axes + k)]) continue;
          accumulate_coef_flat(a, k, dcomp_, hf_,
                               static_cast<std::size_t>(a * d + b) * total, 1.0);
        }
      }
    }
    for (std::size_t p = 0; p < total; ++p) {
      double h2 = 0.0, v2 = 0.0;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          h2 += ghinv_[p * mm + static_cast<std::size_t>(i * m + j)] *
                ef_[static_cast<std::size_t>(i) * total + p] *
                ef_[static_cast<std::size_t>(j) * total + p];
          v2 += gvinv_[p * mm + static_cast<std::size_t>(i * m + j)] *
                ef_[static_cast<std::size_t>(m + i) * total + p] *
                ef_[static_cast<std::size_t>(m + j) * total + p];
        }
      dfh2_[p] = h2;
      dfv2_[p] = v2;
    }
  }

  const std::vector<double>& ricci() const { return ric_; }
  const std::vector<double>& scalar() const { return sr_; }

  void rhs(const FlowState& st, std::vector<double>& dgh, std::vector<double>& dgv,
           std::vector<double>& df) {
    evaluate(st);
    rhs_from_current(dgh, dgv, df);
  }

  Report report(const FlowState& st) {
    evaluate(st);
    return report_from_current(st);
  }

  // One RK4 step; returns the report of the pre-step state. tau drops by dchi.
  Report step(FlowState& st, double dchi) {
    if (!(dchi > 0.0)) throw FlowDomainError("dchi must be positive");
    const std::size_t total = s_->grid.total;
    const int m = s_->m;
    const std::size_t mm = static_cast<std::size_t>(m * m);

    evaluate(st);
    const Report rep = report_from_current(st);
    double hmin = s_->grid.spacing[0];
    for (double sp : s_->grid.spacing) hmin = std::min(hmin, sp);
    const double bound = 0.1 * hmin * hmin / (1.0 + rep.max_sr);
    if (dchi > bound)
      throw FlowDomainError("dchi " + std::to_string(dchi) + " exceeds stability bound " +
                            std::to_string(bound));
    if (!(st.tau - dchi > 0.0)) throw FlowDomainError("backward time would cross zero");

    rhs_from_current(k1h_, k1v_, k1f_);
    FlowState tmp;
    tmp.chi = st.chi;
    tmp.tau = st.tau;
    stage_state(st, k1h_, k1v_, k1f_, 0.5 * dchi, tmp);
    evaluate(tmp);
    rhs_from_current(k2h_, k2v_, k2f_);
    stage_state(st, k2h_, k2v_, k2f_, 0.5 * dchi, tmp);
    evaluate(tmp);
    rhs_from_current(k3h_, k3v_, k3f_);
    stage_state(st, k3h_, k3v_, k3f_, dchi, tmp);
    evaluate(tmp);
    rhs_from_current(k4h_, k4v_, k4f_);

    const double w = dchi / 6.0;
    for (std::size_t i = 0; i < st.gh.size(); ++i)
      st.gh[i] += w * (k1h_[i] + 2.0 * k2h_[i] + 2.0 * k3h_[i] + k4h_[i]);
    for (std::size_t i = 0; i < st.gv.size(); ++i)
      st.gv[i] += w * (k1v_[i] + 2.0 * k2v_[i] + 2.0 * k3v_[i] + k4v_[i]);
    for (std::size_t i = 0; i < st.f.size(); ++i)
      st.f[i] += w * (k1f_[i] + 2.0 * k2f_[i] + 2.0 * k3f_[i] + k4f_[i]);
    st.chi += dchi;
    st.tau -= dchi;
    for (std::size_t p = 0; p < total; ++p)
      if (!detail::positive_definite(st.gh.data() + p * mm, m) ||
          !detail::positive_definite(st.gv.data() + p * mm, m))
        throw FlowInvariantError("metric left the positive cone during a step");
    return rep;
  }

 private:
  void resize_buffers() {
    const std::size_t total = s_->grid.total;
    const int m = s_->m, d = s_->dim();
    const std::size_t mm = static_cast<std::size_t>(m * m);
    const std::size_t dd = static_cast<std::size_t>(d * d);
    const std::size_t d3 = dd * static_cast<std::size_t>(d);
    egh_.resize(static_cast<std::size_t>(d) * total * mm);
    egv_.resize(egh_.size());
    gamma_.resize(total * d3);
    ric_.resize(total * dd);
    tr_.resize(static_cast<std::size_t>(d) * total);
    sr_.resize(total);
    ghinv_.resize(total * mm);
    gvinv_.resize(total * mm);
    ef_.resize(static_cast<std::size_t>(d) * total);
    hf_.resize(dd * total);
    dfh2_.resize(total);
    dfv2_.resize(total);
    comp_.resize(total);
    dcomp_.resize(total);
    wbuf_.resize(d3);
  }

  void gather_metric(const std::vector<double>& g, std::size_t comp, std::vector<double>& out) {
    const std::size_t mm = static_cast<std::size_t>(s_->m * s_->m);
    const std::size_t total = s_->grid.total;
    for (std::size_t p = 0; p < total; ++p) out[p] = g[p * mm + comp];
  }

  // out[cbar block] += coef(cbar, axis) * src, for every frame leg cbar.
  void accumulate_frame(const std::vector<double>& src, int axis, std::vector<double>& out,
                        std::size_t comp, std::size_t mm) {
    const std::size_t total = s_->grid.total;
    const int d = s_->dim();
    for (int cb = 0; cb < d; ++cb) {
      if (!coef_nz_[static_cast<std::size_t>(cb * s_->grid.axes() + axis)]) continue;
      double* dst = out.data() + (static_cast<std::size_t>(cb) * total) * mm + comp;
      if (cb < s_->m) {
        if (axis < s_->n) {
          for (std::size_t p = 0; p < total; ++p)
            dst[p * mm] += s_->rho_at(p, cb, axis) * src[p];
        } else {
          for (std::size_t p = 0; p < total; ++p)
            dst[p * mm] -= s_->n_at(p, cb, axis - s_->n) * src[p];
        }
      } else {
        for (std::size_t p = 0; p < total; ++p) dst[p * mm] += src[p];
      }
    }
  }

  // out[p * rstride + roff] += sign * coef(a, axis, p) * src[p]
  void accumulate_coef(int a, int axis, const std::vector<double>& src, std::vector<double>& out,
                       std::size_t roff, std::size_t rstride, double sign) {
    const std::size_t total = s_->grid.total;
    if (a < s_->m) {
      if (axis < s_->n) {
        for (std::size_t p = 0; p < total; ++p)
          out[p * rstride + roff] += sign * s_->rho_at(p, a, axis) * src[p];
      } else {
        for (std::size_t p = 0; p < total; ++p)
          out[p * rstride + roff] -= sign * s_->n_at(p, a, axis - s_->n) * src[p];
      }
    } else {
      for (std::size_t p = 0; p < total; ++p) out[p * rstride + roff] += sign * src[p];
    }
  }

  // out[base + p] += sign * coef(a, axis, p) * src[p]
  void accumulate_coef_flat(int a, int axis, const std::vector<double>& src,
                            std::vector<double>& out, std::size_t base, double sign) {
    const std::size_t total = s_->grid.total;
    if (a < s_->m) {
      if (axis < s_->n) {
        for (std::size_t p = 0; p < total; ++p)
          out[base + p] += sign * s_->rho_at(p, a, axis) * src[p];
      } else {
        for (std::size_t p = 0; p < total; ++p)
          out[base + p] -= sign * s_->n_at(p, a, axis - s_->n) * src[p];
      }
    } else {
      for (std::size_t p = 0; p < total; ++p) out[base + p] += sign * src[p];
    }
  }

  double eg_at(std::size_t p, int cb, int b, int c) const {
    const std::size_t total = s_->grid.total;
    const int m = s_->m;
    const std::size_t mm = static_cast<std::size_t>(m * m);
    if (b < m && c < m)
      return egh_[(static_cast<std::size_t>(cb) * total + p) * mm +
                  static_cast<std::size_t>(b * m + c)];
    if (b >= m && c >= m)
      return egv_[(static_cast<std::size_t>(cb) * total + p) * mm +
                  static_cast<std::size_t>((b - m) * m + (c - m))];
    return 0.0;
  }

  double metric_at(const FlowState& st, std::size_t p, int b, int c) const {
    const int m = s_->m;
    const std::size_t mm = static_cast<std::size_t>(m * m);
    if (b < m && c < m) return st.gh[p * mm + static_cast<std::size_t>(b * m + c)];
    if (b >= m && c >= m) return st.gv[p * mm + static_cast<std::size_t>((b - m) * m + (c - m))];
    return 0.0;
  }

  void build_anholonomy(std::size_t p) {
    const int m = s_->m, d = s_->dim();
    std::fill(wbuf_.begin(), wbuf_.end(), 0.0);
    for (int al = 0; al < m; ++al)
      for (int be = 0; be < m; ++be) {
        for (int ga = 0; ga < m; ++ga)
          wbuf_[static_cast<std::size_t>((ga * d + al) * d + be)] = s_->c_at(p, al, be, ga);
        for (int A = 0; A < m; ++A)
          wbuf_[static_cast<std::size_t>(((m + A) * d + al) * d + be)] =
              s_->omega_at(p, al, be, A);
      }
    for (int al = 0; al < m; ++al)
      for (int C = 0; C < m; ++C)
        for (int B = 0; B < m; ++B) {
          const double v = s_->vn_at(p, al, C, B);
          wbuf_[static_cast<std::size_t>(((m + C) * d + al) * d + (m + B))] = v;
          wbuf_[static_cast<std::size_t>(((m + C) * d + (m + B)) * d + al)] = -v;
        }
  }

  void assemble_canonical(const FlowState& st) {
    const std::size_t total = s_->grid.total;
    const int m = s_->m, d = s_->dim();
    const std::size_t mm = static_cast<std::size_t>(m * m);
    const std::size_t d3 = static_cast<std::size_t>(d * d * d);
    double rhsv[detail::kMaxBlock], sol[detail::kMaxBlock];
    for (std::size_t p = 0; p < total; ++p) {
      luh_.factor(st.gh.data() + p * mm, m);
      luv_.factor(st.gv.data() + p * mm, m);
      double* gp = gamma_.data() + p * d3;
      // L^al_be_ga
      for (int be = 0; be < m; ++be)
        for (int ga = 0; ga < m; ++ga) {
          for (int ta = 0; ta < m; ++ta)
            rhsv[ta] = 0.5 * (eg_at(p, ga, be, ta) + eg_at(p, be, ga, ta) -
                              eg_at(p, ta, be, ga));
          luh_.solve(rhsv, sol);
          for (int al = 0; al < m; ++al) gp[(al * d + be) * d + ga] = sol[al];
        }
      // L^A_B_ga = V_B N_ga^A + solve
      for (int B = 0; B < m; ++B)
        for (int ga = 0; ga < m; ++ga) {
          for (int C = 0; C < m; ++C) {
            double t = eg_at(p, ga, m + B, m + C);
            for (int D = 0; D < m; ++D) {
              t -= st.gv[p * mm + static_cast<std::size_t>(D * m + C)] * s_->vn_at(p, ga, D, B);
              t -= st.gv[p * mm + static_cast<std::size_t>(D * m + B)] * s_->vn_at(p, ga, D, C);
            }
            rhsv[C] = 0.5 * t;
          }
          luv_.solve(rhsv, sol);
          for (int A = 0; A < m; ++A)
            gp[((m + A) * d + (m + B)) * d + ga] = s_->vn_at(p, ga, A, B) + sol[A];
        }
      // B^al_be_C
      for (int be = 0; be < m; ++be)
        for (int C = 0; C < m; ++C) {
          for (int ta = 0; ta < m; ++ta) rhsv[ta] = 0.5 * eg_at(p, m + C, be, ta);
          luh_.solve(rhsv, sol);
          for (int al = 0; al < m; ++al) gp[(al * d + be) * d + (m + C)] = sol[al];
        }
      // B^A_B_C
      for (int B = 0; B < m; ++B)
        for (int C = 0; C < m; ++C) {
          for (int D = 0; D < m; ++D)
            rhsv[D] = 0.5 * (eg_at(p, m + C, m + B, m + D) + eg_at(p, m + B, m + C, m + D) -
                             eg_at(p, m + D, m + B, m + C));
          luv_.solve(rhsv, sol);
          for (int A = 0; A < m; ++A) gp[((m + A) * d + (m + B)) * d + (m + C)] = sol[A];
        }
    }
  }

  // Metric frame coefficients of the anholonomic Koszul formula.
  void assemble_frame_koszul(const FlowState& st) {
    const std::size_t total = s_->grid.total;
    const int m = s_->m, d = s_->dim();
    const std::size_t mm = static_cast<std::size_t>(m * m);
    const std::size_t d3 = static_cast<std::size_t>(d * d * d);
    double rhsh[detail::kMaxBlock], rhsvv[detail::kMaxBlock], sol[detail::kMaxBlock];
    for (std::size_t p = 0; p < total; ++p) {
      luh_.factor(st.gh.data() + p * mm, m);
      luv_.factor(st.gv.data() + p * mm, m);
      build_anholonomy(p);
      const double* w = wbuf_.data();
      double* gp = gamma_.data() + p * d3;
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
          for (int ff = 0; ff < d; ++ff) {
            double t = eg_at(p, c, b, ff) + eg_at(p, b, c, ff) - eg_at(p, ff, b, c);
            for (int ta = 0; ta < d; ++ta) {
              t -= w[(ta * d + b) * d + c] * metric_at(st, p, ta, ff);
              t += w[(ta * d + ff) * d + b] * metric_at(st, p, ta, c);
              t += w[(ta * d + ff) * d + c] * metric_at(st, p, ta, b);
            }
            if (ff < m)
              rhsh[ff] = 0.5 * t;
            else
              rhsvv[ff - m] = 0.5 * t;
          }
          luh_.solve(rhsh, sol);
          for (int a = 0; a < m; ++a) gp[(a * d + b) * d + c] = sol[a];
          luv_.solve(rhsvv, sol);
          for (int a = 0; a < m; ++a) gp[((m + a) * d + b) * d + c] = sol[a];
        }
    }
  }

  double ddf_at(std::size_t p, int a, int b) const {
    const std::size_t total = s_->grid.total;
    const int d = s_->dim();
    const std::size_t d3 = static_cast<std::size_t>(d * d * d);
    double v = hf_[static_cast<std::size_t>(a * d + b) * total + p];
    const double* gp = gamma_.data() + p * d3;
    for (int ga = 0; ga < d; ++ga)
      v -= gp[(ga * d + b) * d + a] * ef_[static_cast<std::size_t>(ga) * total + p];
    return v;
  }

  void rhs_from_current(std::vector<double>& dgh, std::vector<double>& dgv,
                        std::vector<double>& df) {
    const std::size_t total = s_->grid.total;
    const int m = s_->m, d = s_->dim();
    const std::size_t mm = static_cast<std::size_t>(m * m);
    const std::size_t dd = static_cast<std::size_t>(d * d);
    dgh.resize(total * mm);
    dgv.resize(total * mm);
    df.resize(total);
    for (std::size_t p = 0; p < total; ++p) {
      const double* rp = ric_.data() + p * dd;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          dgh[p * mm + static_cast<std::size_t>(i * m + j)] =
              -(rp[i * d + j] + rp[j * d + i]);
          dgv[p * mm + static_cast<std::size_t>(i * m + j)] =
              -(rp[(m + i) * d + (m + j)] + rp[(m + j) * d + (m + i)]);
        }
      double lap = 0.0;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          lap += ghinv_[p * mm + static_cast<std::size_t>(i * m + j)] * ddf_at(p, i, j);
          lap += gvinv_[p * mm + static_cast<std::size_t>(i * m + j)] * ddf_at(p, m + i, m + j);
        }
      df[p] = -lap + dfh2_[p] + dfv2_[p] - sr_[p];
    }
  }

  Report report_from_current(const FlowState& st) {
    const std::size_t total = s_->grid.total;
    const int m = s_->m, d = s_->dim();
    const std::size_t mm = static_cast<std::size_t>(m * m);
    const std::size_t dd = static_cast<std::size_t>(d * d);
    const double cell = s_->grid.cell_volume();
    const double tau = st.tau;

    Report rep;
    rep.beta = 1.0 / tau;
    rep.max_sr = max_sr_;
    rep.max_mixed = max_mixed_;
    rep.min_eig = 0.0;

    dvw_.resize(total);
    double mineig = 0.0;
    bool first = true;
    detail::SmallLu lh, lv;
    for (std::size_t p = 0; p < total; ++p) {
      lh.factor(st.gh.data() + p * mm, m);
      lv.factor(st.gv.data() + p * mm, m);
      const double dpr = lh.det() * lv.det();
      if (!(dpr > 0.0)) throw FlowInvariantError("nonpositive metric volume element");
      dvw_[p] = std::sqrt(dpr) * cell;
      const double e1 = detail::min_eigenvalue(st.gh.data() + p * mm, m);
      const double e2 = detail::min_eigenvalue(st.gv.data() + p * mm, m);
      const double e = std::min(e1, e2);
      if (first || e < mineig) {
        mineig = e;
        first = false;
      }
    }
    rep.min_eig = mineig;

    const double pref = std::pow(4.0 * 3.14159265358979323846 * tau, -m);
    double fsum = 0.0, musum = 0.0;
    for (std::size_t p = 0; p < total; ++p) {
      const double grad2 = dfh2_[p] + dfv2_[p];
      const double ef = std::exp(-st.f[p]);
      fsum += (sr_[p] + grad2) * ef * dvw_[p];
      musum += pref * ef * dvw_[p];
    }
    rep.F = fsum;
    rep.mu_total = musum;

    // Measure-weighted quantities in the normalized gauge.
    const double shift = std::log(musum);
    double wsq = 0.0, wlit = 0.0, esum = 0.0, zsum = 0.0, ssum = 0.0;
    for (std::size_t p = 0; p < total; ++p) {
      const double ft = st.f[p] + shift;
      const double mu = pref * std::exp(-ft) * dvw_[p];
      const double grad2 = dfh2_[p] + dfv2_[p];
      const double base = tau * (sr_[p] + grad2) + ft - 2.0 * m;
      wsq += base * mu;
      const double gh1 = std::sqrt(std::max(dfh2_[p], 0.0));
      const double gv1 = std::sqrt(std::max(dfv2_[p], 0.0));
      const double lit = sr_[p] + gh1 + gv1;
      wlit += (tau * lit * lit + ft - 2.0 * m) * mu;
      esum += (sr_[p] + grad2 - m / tau) * mu;
      zsum += (-ft + m) * mu;

      const double* rp = ric_.data() + p * dd;
      const double* ih = ghinv_.data() + p * mm;
      const double* iv = gvinv_.data() + p * mm;
      double tb[2 * detail::kMaxBlock][2 * detail::kMaxBlock];
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          tb[a][b] = rp[a * d + b] + ddf_at(p, a, b) -
                     metric_at(st, p, a, b) / (2.0 * tau);
      double norm = 0.0;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          for (int c = 0; c < d; ++c)
            for (int e = 0; e < d; ++e) {
              double iac, ibe;
              if (a < m && c < m)
                iac = ih[a * m + c];
              else if (a >= m && c >= m)
                iac = iv[(a - m) * m + (c - m)];
              else
                continue;
              if (b < m && e < m)
                ibe = ih[b * m + e];
              else if (b >= m && e >= m)
                ibe = iv[(b - m) * m + (e - m)];
              else
                continue;
              norm += iac * ibe * tb[a][b] * tb[c][e];
            }
      ssum += norm * mu;
    }
    rep.W = grad_ == GradConvention::Squared ? wsq : wlit;
    rep.entropy = -wsq;
    rep.e_avg = -tau * tau * esum;
    rep.log_z = zsum;
    rep.sigma = 2.0 * tau * tau * tau * tau * ssum;
    return rep;
  }

  void stage_state(const FlowState& base, const std::vector<double>& kh,
                   const std::vector<double>& kv, const std::vector<double>& kf, double c,
                   FlowState& out) {
    out.gh.resize(base.gh.size());
    out.gv.resize(base.gv.size());
    out.f.resize(base.f.size());
    for (std::size_t i = 0; i < base.gh.size(); ++i) out.gh[i] = base.gh[i] + c * kh[i];
    for (std::size_t i = 0; i < base.gv.size(); ++i) out.gv[i] = base.gv[i] + c * kv[i];
    for (std::size_t i = 0; i < base.f.size(); ++i) out.f[i] = base.f[i] + c * kf[i];
  }

  const GridSample* s_;
  FlowMode mode_;
  GradConvention grad_;
  std::vector<char> coef_nz_;
  detail::SmallLu luh_, luv_;
  std::vector<double> egh_, egv_, gamma_, ric_, tr_, sr_;
  std::vector<double> ghinv_, gvinv_, ef_, hf_, dfh2_, dfv2_;
  std::vector<double> comp_, dcomp_, wbuf_, dvw_;
  std::vector<double> k1h_, k1v_, k1f_, k2h_, k2v_, k2f_, k3h_, k3v_, k3f_, k4h_, k4v_, k4f_;
  double max_sr_ = 0.0, max_mixed_ = 0.0;
};

struct FlowRow {
  double chi = 0.0;
  double tau = 0.0;
  FlowEngine::Report rep;
};

// Steps the state and collects one row per visited state, including the final
// one. The potential evolves unshifted; the measure-weighted report columns
// are computed in the normalized gauge inside the report itself.
inline std::vector<FlowRow> run_flow(FlowEngine& eng, FlowState& st, int steps, double dchi) {
  std::vector<FlowRow> rows;
  rows.reserve(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k < steps; ++k) {
    const double chi0 = st.chi, tau0 = st.tau;
    const FlowEngine::Report rep = eng.step(st, dchi);
    rows.push_back({chi0, tau0, rep});
  }
  rows.push_back({st.chi, st.tau, eng.report(st)});
  return rows;
}

}  // namespace algflow
