#pragma once

// Linear connections over the doubled adapted frame {delta_alpha, V_A}.
// Coefficients are stored direction-last: nabla_{e_c} e_b = Gamma^a_bc e_a,
// with barred indices [0,m) horizontal and [m,2m) vertical.
//
// Two constructions share the machinery:
//  * canonical: block coefficients determined by the metric blocks with the
//    prescribed torsion (h-h torsion equal to the structure functions,
//    vertical torsion zero); mixed-type coefficients vanish.
//  * frame Levi-Civita: Koszul formula in the anholonomic frame; zero
//    torsion, metric compatible, does not preserve the splitting.
//
// Curvature is the general-frame formula
//   R^a_bcd = e_d Gamma^a_bc - e_c Gamma^a_bd
//             + Gamma^f_bc Gamma^a_fd - Gamma^f_bd Gamma^a_fc
//             + Gamma^a_bf W^f_cd,
// the coefficient of R(e_d, e_c) e_b; Ricci is the straight contraction
// Ric_bc = R^a_bca.  Every inverse-metric contraction is a linear solve
// against the shared metric block.

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "algflow/field.hpp"
#include "algflow/geometry.hpp"
#include "algflow/linalg.hpp"

namespace algflow {

class FrameConnection {
 public:
  enum class Variant { Canonical, LeviCivita };

  static FrameConnection canonical(const LagrangeGeometry& geo, const MetricBlocks& mb) {
    return FrameConnection(geo, mb, Variant::Canonical);
  }
  static FrameConnection levi_civita(const LagrangeGeometry& geo, const MetricBlocks& mb) {
    return FrameConnection(geo, mb, Variant::LeviCivita);
  }

  Variant variant() const { return variant_; }
  int m() const { return m_; }
  int dim() const { return 2 * m_; }
  const LagrangeGeometry& geometry() const { return geo_; }
  const MetricBlocks& metric() const { return mb_; }

  // Metric over the doubled frame; off-blocks vanish.
  Field metric_at(int a, int b) const {
    const bool au = a >= m_, bu = b >= m_;
    if (au != bu) return field_const(0.0);
    if (au) return mb_.v->at(a - m_, b - m_);
    return mb_.h->at(a, b);
  }

  const Field& gamma(int a, int b, int c) const { return gamma_[idx3(a, b, c)]; }
  const Field& anholonomy(int c, int a, int b) const { return w_[idx3(c, a, b)]; }

  // T^a_bc = Gamma^a_bc - Gamma^a_cb + W^a_bc
  Field torsion(int a, int b, int c) const {
    return fadd(fsub(gamma(a, b, c), gamma(a, c, b)), anholonomy(a, b, c));
  }

  // D_c G_ab = e_c G_ab - Gamma^d_ac G_db - Gamma^d_bc G_ad
  Field metricity(int c, int a, int b) const {
    Field r = geo_.frame_derive(metric_at(a, b), c);
    for (int d = 0; d < dim(); ++d) {
      r = fsub(r, fmul(gamma(d, a, c), metric_at(d, b)));
      r = fsub(r, fmul(gamma(d, b, c), metric_at(a, d)));
    }
    return r;
  }

  const Field& riemann(int a, int b, int c, int d) const {
    ensure_curvature();
    return riem_[idx4(a, b, c, d)];
  }

  const Field& ricci(int b, int c) const {
    ensure_curvature();
    return ric_[static_cast<std::size_t>(b * dim() + c)];
  }

  // Pointwise metric block values.
  Mat metric_h_values(EvalContext& ctx) const { return block_values(ctx, *mb_.h); }
  Mat metric_v_values(EvalContext& ctx) const { return block_values(ctx, *mb_.v); }

  struct PointCurvature {
    Mat ricci;     // 2m x 2m
    double scalar = 0.0;
    Mat einstein;  // 2m x 2m
  };

  PointCurvature curvature_values(EvalContext& ctx) const {
    ensure_curvature();
    const int d = dim();
    PointCurvature out{Mat(d, d), 0.0, Mat(d, d)};
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c) out.ricci(b, c) = ctx.eval(ricci(b, c));
    const Mat gh = metric_h_values(ctx), gv = metric_v_values(ctx);
    out.scalar = block_inverse_trace(gh, out.ricci, 0) + block_inverse_trace(gv, out.ricci, m_);
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c) {
        double gbc = 0.0;
        if (b < m_ && c < m_) gbc = gh(b, c);
        if (b >= m_ && c >= m_) gbc = gv(b - m_, c - m_);
        out.einstein(b, c) = out.ricci(b, c) - 0.5 * gbc * out.scalar;
      }
    return out;
  }

 private:
  FrameConnection(const LagrangeGeometry& geo, const MetricBlocks& mb, Variant v)
      : geo_(geo), mb_(mb), variant_(v), m_(geo.alg().m()) {
    const int d = dim();
    w_.resize(static_cast<std::size_t>(d * d * d));
    for (int c = 0; c < d; ++c)
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) w_[idx3(c, a, b)] = geo_.anholonomy(c, a, b);
    gamma_.assign(static_cast<std::size_t>(d * d * d), field_const(0.0));
    if (v == Variant::Canonical)
      build_canonical();
    else
      build_levi_civita();
  }

  std::size_t idx3(int a, int b, int c) const {
    const int d = dim();
    return static_cast<std::size_t>((a * d + b) * d + c);
  }
  std::size_t idx4(int a, int b, int c, int e) const {
    const int d = dim();
    return static_cast<std::size_t>(((a * d + b) * d + c) * d + e);
  }

  Mat block_values(EvalContext& ctx, const MatrixField& mf) const {
    Mat g(mf.dim, mf.dim);
    for (int i = 0; i < mf.dim; ++i)
      for (int j = 0; j < mf.dim; ++j) g(i, j) = ctx.eval(mf.at(i, j));
    return g;
  }

  // tr(g^{-1} S_block) where the block of S starts at offset.
  static double block_inverse_trace(const Mat& g, const Mat& s, int offset) {
    const int k = g.rows();
    Mat rhs(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) rhs(i, j) = s(offset + i, offset + j);
    const Mat x = solve_mat(g, rhs);
    double tr = 0.0;
    for (int i = 0; i < k; ++i) tr += x(i, i);
    return tr;
  }

  void build_canonical() {
    const int m = m_;
    // delta_c g_ij and V_C g_ij for both blocks
    std::vector<Field> dgh(static_cast<std::size_t>(m * m * m)), vgh(dgh.size());
    std::vector<Field> dgv(dgh.size()), vgv(dgh.size());
    const auto id3 = [m](int a, int i, int j) {
      return static_cast<std::size_t>((a * m + i) * m + j);
    };
    for (int c = 0; c < m; ++c)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          dgh[id3(c, i, j)] = geo_.delta(mb_.h->at(i, j), c);
          vgh[id3(c, i, j)] = fdiff(mb_.h->at(i, j), geo_.coords().y_index(c));
          dgv[id3(c, i, j)] = geo_.delta(mb_.v->at(i, j), c);
          vgv[id3(c, i, j)] = fdiff(mb_.v->at(i, j), geo_.coords().y_index(c));
        }
    // L^al_bg: g_h solve of the horizontal Koszul combination.
    for (int be = 0; be < m; ++be)
      for (int ga = 0; ga < m; ++ga) {
        std::vector<Field> rhs(static_cast<std::size_t>(m));
        for (int ta = 0; ta < m; ++ta)
          rhs[static_cast<std::size_t>(ta)] = fscale(
              0.5, fsub(fadd(dgh[id3(ga, be, ta)], dgh[id3(be, ga, ta)]), dgh[id3(ta, be, ga)]));
        const auto sol = solve_fields(mb_.h, std::move(rhs));
        for (int al = 0; al < m; ++al) gamma_[idx3(al, be, ga)] = sol[static_cast<std::size_t>(al)];
      }

    // L^A_Bg = V_B N_g^A + g_v solve of (delta_g g_BC - g_DC V_B N_g^D - g_DB V_C N_g^D)/2.
    for (int B = 0; B < m; ++B)
      for (int ga = 0; ga < m; ++ga) {
        std::vector<Field> rhs(static_cast<std::size_t>(m));
        for (int C = 0; C < m; ++C) {
          Field t = dgv[id3(ga, B, C)];
          for (int D = 0; D < m; ++D) {
            t = fsub(t, fmul(mb_.v->at(D, C), fdiff(geo_.nconn(ga, D), geo_.coords().y_index(B))));
            t = fsub(t, fmul(mb_.v->at(D, B), fdiff(geo_.nconn(ga, D), geo_.coords().y_index(C))));
          }
          rhs[static_cast<std::size_t>(C)] = fscale(0.5, t);
        }
        const auto sol = solve_fields(mb_.v, std::move(rhs));
        for (int A = 0; A < m; ++A)
          gamma_[idx3(m + A, m + B, ga)] =
              fadd(fdiff(geo_.nconn(ga, A), geo_.coords().y_index(B)),
                   sol[static_cast<std::size_t>(A)]);
      }

    // B^al_bC = g_h solve of V_C g_b. / 2.
    for (int be = 0; be < m; ++be)
      for (int C = 0; C < m; ++C) {
        std::vector<Field> rhs(static_cast<std::size_t>(m));
        for (int ta = 0; ta < m; ++ta)
          rhs[static_cast<std::size_t>(ta)] = fscale(0.5, vgh[id3(C, be, ta)]);
        const auto sol = solve_fields(mb_.h, std::move(rhs));
        for (int al = 0; al < m; ++al) gamma_[idx3(al, be, m + C)] = sol[static_cast<std::size_t>(al)];
      }

    // B^A_BC = g_v solve of the vertical Koszul combination.
    for (int B = 0; B < m; ++B)
      for (int C = 0; C < m; ++C) {
        std::vector<Field> rhs(static_cast<std::size_t>(m));
        for (int D = 0; D < m; ++D)
          rhs[static_cast<std::size_t>(D)] = fscale(
              0.5, fsub(fadd(vgv[id3(C, B, D)], vgv[id3(B, C, D)]), vgv[id3(D, B, C)]));
        const auto sol = solve_fields(mb_.v, std::move(rhs));
        for (int A = 0; A < m; ++A)
          gamma_[idx3(m + A, m + B, m + C)] = sol[static_cast<std::size_t>(A)];
      }
  }

  void build_levi_civita() {
    const int d = dim();
    // K^a_bc = 1/2 G^af ( e_c G_bf + e_b G_cf - e_f G_bc
    //                     - W^t_bc G_tf + W^t_fb G_tc + W^t_fc G_tb )
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c) {
        std::vector<Field> rhs(static_cast<std::size_t>(d));
        for (int f = 0; f < d; ++f) {
          Field t = fadd(geo_.frame_derive(metric_at(b, f), c),
                         geo_.frame_derive(metric_at(c, f), b));
          t = fsub(t, geo_.frame_derive(metric_at(b, c), f));
          for (int tt = 0; tt < d; ++tt) {
            t = fsub(t, fmul(w_[idx3(tt, b, c)], metric_at(tt, f)));
            t = fadd(t, fmul(w_[idx3(tt, f, b)], metric_at(tt, c)));
            t = fadd(t, fmul(w_[idx3(tt, f, c)], metric_at(tt, b)));
          }
          rhs[static_cast<std::size_t>(f)] = fscale(0.5, t);
        }
        // Block-diagonal metric: the h rows solve against g_h, the v rows
        // against g_v.
        std::vector<Field> hrhs(rhs.begin(), rhs.begin() + m_);
        std::vector<Field> vrhs(rhs.begin() + m_, rhs.end());
        const auto hsol = solve_fields(mb_.h, std::move(hrhs));
        const auto vsol = solve_fields(mb_.v, std::move(vrhs));
        for (int a = 0; a < m_; ++a) gamma_[idx3(a, b, c)] = hsol[static_cast<std::size_t>(a)];
        for (int a = 0; a < m_; ++a)
          gamma_[idx3(m_ + a, b, c)] = vsol[static_cast<std::size_t>(a)];
      }
  }

  void ensure_curvature() const {
    if (!riem_.empty()) return;
    const int d = dim();
    riem_.resize(static_cast<std::size_t>(d) * d * d * d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
          riem_[idx4(a, b, c, c)] = field_const(0.0);
          for (int e = c + 1; e < d; ++e) {
            Field r = fsub(geo_.frame_derive(gamma(a, b, c), e),
                           geo_.frame_derive(gamma(a, b, e), c));
            for (int f = 0; f < d; ++f) {
              r = fadd(r, fmul(gamma(f, b, c), gamma(a, f, e)));
              r = fsub(r, fmul(gamma(f, b, e), gamma(a, f, c)));
              r = fadd(r, fmul(gamma(a, b, f), w_[idx3(f, c, e)]));
            }
            riem_[idx4(a, b, c, e)] = r;
            riem_[idx4(a, b, e, c)] = fneg(r);
          }
        }
    ric_.resize(static_cast<std::size_t>(d) * d);
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c) {
        Field r = field_const(0.0);
        for (int a = 0; a < d; ++a) r = fadd(r, riem_[idx4(a, b, c, a)]);
        ric_[static_cast<std::size_t>(b * d + c)] = r;
      }
  }

  LagrangeGeometry geo_;
  MetricBlocks mb_;
  Variant variant_;
  int m_;
  std::vector<Field> gamma_;
  std::vector<Field> w_;
  mutable std::vector<Field> riem_;
  mutable std::vector<Field> ric_;
};

// Distortion Z^a_bc = K^a_bc - Gamma^a_bc between the frame Levi-Civita
// connection and the canonical one over the same metric.
inline std::vector<Field> distortion(const FrameConnection& can, const FrameConnection& lc) {
  const int d = can.dim();
  if (lc.dim() != d) throw std::runtime_error("distortion requires matching dimensions");
  std::vector<Field> z(static_cast<std::size_t>(d) * d * d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      for (int c = 0; c < d; ++c)
        z[static_cast<std::size_t>((a * d + b) * d + c)] =
            fsub(lc.gamma(a, b, c), can.gamma(a, b, c));
  return z;
}

// Ricci contribution of a distortion Z added to the canonical connection:
// contracting the curvature of (Gamma + Z) minus the curvature of Gamma.
inline std::vector<Field> distortion_ricci(const FrameConnection& can,
                                           const std::vector<Field>& z) {
  const int d = can.dim();
  const auto zat = [&](int a, int b, int c) -> const Field& {
    return z[static_cast<std::size_t>((a * d + b) * d + c)];
  };
  const LagrangeGeometry& geo = can.geometry();
  std::vector<Field> out(static_cast<std::size_t>(d) * d);
  for (int b = 0; b < d; ++b) {
    Field ztr = field_const(0.0);
    for (int e = 0; e < d; ++e) ztr = fadd(ztr, zat(e, b, e));
    for (int c = 0; c < d; ++c) {
      Field r = fneg(geo.frame_derive(ztr, c));
      for (int a = 0; a < d; ++a) {
        r = fadd(r, geo.frame_derive(zat(a, b, c), a));
        for (int f = 0; f < d; ++f) {
          r = fadd(r, fmul(zat(f, b, c), zat(a, f, a)));
          r = fsub(r, fmul(zat(f, b, a), zat(a, f, c)));
          r = fadd(r, fmul(can.gamma(f, b, c), zat(a, f, a)));
          r = fsub(r, fmul(can.gamma(f, b, a), zat(a, f, c)));
          r = fadd(r, fmul(zat(f, b, c), can.gamma(a, f, a)));
          r = fsub(r, fmul(zat(f, b, a), can.gamma(a, f, c)));
          r = fadd(r, fmul(zat(a, b, f), can.anholonomy(f, c, a)));
        }
      }
      out[static_cast<std::size_t>(b * d + c)] = r;
    }
  }
  return out;
}

// The closed-form distortion table, assembled from the canonical torsion
// blocks and the N-connection curvature; every inverse-metric factor is a
// solve.  Returned in the same dim^3 layout as `distortion`.  The table and
// the subtraction K - Gamma agree block-by-block only where the closed-form
// algebra is consistent; compare_distortions reports the deviation per block
// without correcting either side.
inline std::vector<Field> literal_distortion_table(const FrameConnection& can) {
  const int m = can.m();
  const int d = can.dim();
  const LagrangeGeometry& geo = can.geometry();
  const MetricBlocks& mb = can.metric();
  std::vector<Field> z(static_cast<std::size_t>(d) * d * d, field_const(0.0));
  const auto put = [&](int a, int b, int c, Field f) {
    z[static_cast<std::size_t>((a * d + b) * d + c)] = std::move(f);
  };
  const auto yix = [&](int B) { return geo.coords().y_index(B); };
  const auto omega = [&](int be, int ga, int A) { return geo.curvature_of_nconn(be, ga, A); };
  // torsion with horizontal first leg and vertical second leg:
  // T^C_(h ga)(v D) = L^C_Dga - V_D N_ga^C
  const auto thv = [&](int C, int ga, int D) {
    return fsub(can.gamma(m + C, m + D, ga), fdiff(geo.nconn(ga, C), yix(D)));
  };
  const auto bh = [&](int al, int be, int C) { return can.gamma(al, be, m + C); };

  // Z^A_(h be)(h ga) = - B^al_(be)B g_(al ga) g^{AB} - Omega^A_(be ga) / 2
  for (int be = 0; be < m; ++be)
    for (int ga = 0; ga < m; ++ga) {
      std::vector<Field> rhs(static_cast<std::size_t>(m));
      for (int B = 0; B < m; ++B) {
        Field t = field_const(0.0);
        for (int al = 0; al < m; ++al) t = fadd(t, fmul(bh(al, be, B), mb.h->at(al, ga)));
        rhs[static_cast<std::size_t>(B)] = t;
      }
      const auto sol = solve_fields(mb.v, std::move(rhs));
      for (int A = 0; A < m; ++A)
        put(m + A, be, ga,
            fsub(fneg(sol[static_cast<std::size_t>(A)]), fscale(0.5, omega(be, ga, A))));
    }

  // Shared pieces for the two mixed horizontal rows at fixed (ga, B):
  //   S1^al = g^{al be} Omega^C_(be ga) g_CB / 2
  //   XiB^al = B^al_(ga)B / 2 - g^{al ta} ( g_(be ga) B^be_(ta)B ) / 2
  // Z^al_(v B)(h ga) = S1 - XiB,  Z^al_(h ga)(v B) = S1 + XiB.
  for (int ga = 0; ga < m; ++ga)
    for (int B = 0; B < m; ++B) {
      std::vector<Field> r1(static_cast<std::size_t>(m)), r2(static_cast<std::size_t>(m));
      for (int ta = 0; ta < m; ++ta) {
        Field t1 = field_const(0.0), t2 = field_const(0.0);
        for (int C = 0; C < m; ++C) t1 = fadd(t1, fmul(omega(ta, ga, C), mb.v->at(C, B)));
        for (int be = 0; be < m; ++be) t2 = fadd(t2, fmul(mb.h->at(be, ga), bh(be, ta, B)));
        r1[static_cast<std::size_t>(ta)] = fscale(0.5, t1);
        r2[static_cast<std::size_t>(ta)] = fscale(0.5, t2);
      }
      const auto s1 = solve_fields(mb.h, std::move(r1));
      const auto s2 = solve_fields(mb.h, std::move(r2));
      for (int al = 0; al < m; ++al) {
        const Field xib = fsub(fscale(0.5, bh(al, ga, B)), s2[static_cast<std::size_t>(al)]);
        put(al, m + B, ga, fsub(s1[static_cast<std::size_t>(al)], xib));
        put(al, ga, m + B, fadd(s1[static_cast<std::size_t>(al)], xib));
      }
    }

  // Shared pieces for the two mixed vertical rows at fixed (be, B):
  //   Q^A = g^{AD} ( g_CB T^C_(be)D ) / 2
  // Z^A_(v B)(h be) = T^A_(be)B / 2 + Q,  Z^A_(h be)(v B) = -T^A_(be)B / 2 + Q.
  for (int be = 0; be < m; ++be)
    for (int B = 0; B < m; ++B) {
      std::vector<Field> rhs(static_cast<std::size_t>(m));
      for (int D = 0; D < m; ++D) {
        Field t = field_const(0.0);
        for (int C = 0; C < m; ++C) t = fadd(t, fmul(mb.v->at(C, B), thv(C, be, D)));
        rhs[static_cast<std::size_t>(D)] = fscale(0.5, t);
      }
      const auto q = solve_fields(mb.v, std::move(rhs));
      for (int A = 0; A < m; ++A) {
        const Field half = fscale(0.5, thv(A, be, B));
        put(m + A, m + B, be, fadd(half, q[static_cast<std::size_t>(A)]));
        put(m + A, be, m + B, fadd(fneg(half), q[static_cast<std::size_t>(A)]));
      }
    }

  // Z^al_(v A)(v B) = - g^{al be} ( T^C_(be)A g_CB + T^C_(be)B g_CA ) / 2
  for (int A = 0; A < m; ++A)
    for (int B = 0; B < m; ++B) {
      std::vector<Field> rhs(static_cast<std::size_t>(m));
      for (int be = 0; be < m; ++be) {
        Field t = field_const(0.0);
        for (int C = 0; C < m; ++C) {
          t = fadd(t, fmul(thv(C, be, A), mb.v->at(C, B)));
          t = fadd(t, fmul(thv(C, be, B), mb.v->at(C, A)));
        }
        rhs[static_cast<std::size_t>(be)] = fscale(0.5, t);
      }
      const auto sol = solve_fields(mb.h, std::move(rhs));
      for (int al = 0; al < m; ++al) put(al, m + A, m + B, fneg(sol[static_cast<std::size_t>(al)]));
    }

  // Z^al_(h be)(h ga) and Z^A_(v B)(v C) stay zero.
  return z;
}

// Maximum absolute deviation between two dim^3 coefficient arrays, split by
// the h/v pattern of (upper, lower, lower) indices.
struct DistortionComparison {
  std::array<double, 8> max_abs_dev{};
  static int block_of(bool av, bool bv, bool cv) {
    return (av ? 4 : 0) + (bv ? 2 : 0) + (cv ? 1 : 0);
  }
  static std::string block_name(int k) {
    const char* u = (k & 4) ? "v" : "h";
    const char* b = (k & 2) ? "v" : "h";
    const char* c = (k & 1) ? "v" : "h";
    return std::string("Z^") + u + "_" + b + c;
  }
};

// Blockwise curvature assembly for a splitting-preserving connection: the
// horizontal/vertical coefficient blocks combined through covariantized
// derivatives and torsion contractions, instead of the raw general-frame
// formula.  Index layout per block matches the assembly order written in
// each builder; agreement with `riemann` is the dual-route consistency
// check.
struct RouteTwoBlocks {
  int m = 0;
  std::vector<Field> hhhh;  // [al][ep][be][ga]
  std::vector<Field> vvhh;  // [A][B][be][ga]
  std::vector<Field> hhhv;  // [al][ep][be][A]
  std::vector<Field> vvhv;  // [C][B][ga][A]
  std::vector<Field> hhvv;  // [al][be][A][B]
  std::vector<Field> vvvv;  // [A][B][C][E]
  std::size_t at(int a, int b, int c, int d) const {
    return static_cast<std::size_t>(((a * m + b) * m + c) * m + d);
  }
};

inline RouteTwoBlocks route_two_blocks(const FrameConnection& can) {
  const int m = can.m();
  const LagrangeGeometry& geo = can.geometry();
  RouteTwoBlocks rb;
  rb.m = m;
  const std::size_t sz = static_cast<std::size_t>(m) * m * m * m;
  rb.hhhh.resize(sz);
  rb.vvhh.resize(sz);
  rb.hhhv.resize(sz);
  rb.vvhv.resize(sz);
  rb.hhvv.resize(sz);
  rb.vvvv.resize(sz);
  const auto L = [&](int a, int b, int c) { return can.gamma(a, b, c); };
  const auto Lv = [&](int A, int B, int g) { return can.gamma(m + A, m + B, g); };
  const auto Bh = [&](int a, int b, int C) { return can.gamma(a, b, m + C); };
  const auto Bv = [&](int A, int B, int C) { return can.gamma(m + A, m + B, m + C); };
  const auto yix = [&](int A) { return geo.coords().y_index(A); };
  const auto tmix = [&](int B, int be, int A) {
    // T^B_(be)A = V_A N_be^B - L^B_A(be)
    return fsub(fdiff(geo.nconn(be, B), yix(A)), Lv(B, A, be));
  };
  const Algebroid& alg = geo.alg();

  for (int al = 0; al < m; ++al)
    for (int ep = 0; ep < m; ++ep)
      for (int be = 0; be < m; ++be)
        for (int ga = 0; ga < m; ++ga) {
          Field r = fsub(geo.delta(L(al, ep, be), ga), geo.delta(L(al, ep, ga), be));
          for (int mu = 0; mu < m; ++mu) {
            r = fadd(r, fmul(L(mu, ep, be), L(al, mu, ga)));
            r = fsub(r, fmul(L(mu, ep, ga), L(al, mu, be)));
            r = fadd(r, fmul(L(al, ep, mu), field_expr(alg.c_at(be, ga, mu))));
          }
          for (int A = 0; A < m; ++A)
            r = fsub(r, fmul(Bh(al, ep, A), geo.curvature_of_nconn(ga, be, A)));
          rb.hhhh[rb.at(al, ep, be, ga)] = r;
        }

  for (int A = 0; A < m; ++A)
    for (int B = 0; B < m; ++B)
      for (int be = 0; be < m; ++be)
        for (int ga = 0; ga < m; ++ga) {
          Field r = fsub(geo.delta(Lv(A, B, be), ga), geo.delta(Lv(A, B, ga), be));
          for (int C = 0; C < m; ++C) {
            r = fadd(r, fmul(Lv(C, B, be), Lv(A, C, ga)));
            r = fsub(r, fmul(Lv(C, B, ga), Lv(A, C, be)));
            r = fadd(r, fmul(Lv(A, B, C), field_expr(alg.c_at(be, ga, C))));
            r = fsub(r, fmul(Bv(A, B, C), geo.curvature_of_nconn(ga, be, C)));
          }
          rb.vvhh[rb.at(A, B, be, ga)] = r;
        }

  for (int al = 0; al < m; ++al)
    for (int ep = 0; ep < m; ++ep)
      for (int be = 0; be < m; ++be)
        for (int A = 0; A < m; ++A) {
          // covariant delta_be of B^al_(ep)A across all three index types
          Field dcov = geo.delta(Bh(al, ep, A), be);
          for (int ph = 0; ph < m; ++ph) {
            dcov = fadd(dcov, fmul(L(al, ph, be), Bh(ph, ep, A)));
            dcov = fsub(dcov, fmul(L(ph, ep, be), Bh(al, ph, A)));
            dcov = fsub(dcov, fmul(Lv(ph, A, be), Bh(al, ep, ph)));
          }
          Field r = fsub(fdiff(L(al, ep, be), yix(A)), dcov);
          for (int B = 0; B < m; ++B) r = fadd(r, fmul(Bh(al, ep, B), tmix(B, be, A)));
          rb.hhhv[rb.at(al, ep, be, A)] = r;
        }

  for (int C = 0; C < m; ++C)
    for (int B = 0; B < m; ++B)
      for (int ga = 0; ga < m; ++ga)
        for (int A = 0; A < m; ++A) {
          Field dcov = geo.delta(Bv(C, B, A), ga);
          for (int D = 0; D < m; ++D) {
            dcov = fadd(dcov, fmul(Lv(C, D, ga), Bv(D, B, A)));
            dcov = fsub(dcov, fmul(Lv(D, B, ga), Bv(C, D, A)));
            dcov = fsub(dcov, fmul(Lv(D, A, ga), Bv(C, B, D)));
          }
          Field r = fsub(fdiff(Lv(C, B, ga), yix(A)), dcov);
          for (int D = 0; D < m; ++D) r = fadd(r, fmul(Bv(C, B, D), tmix(D, ga, A)));
          rb.vvhv[rb.at(C, B, ga, A)] = r;
        }

  for (int al = 0; al < m; ++al)
    for (int be = 0; be < m; ++be)
      for (int A = 0; A < m; ++A)
        for (int B = 0; B < m; ++B) {
          Field r = fsub(fdiff(Bh(al, be, B), yix(A)), fdiff(Bh(al, be, A), yix(B)));
          for (int ta = 0; ta < m; ++ta) {
            r = fadd(r, fmul(Bh(ta, be, B), Bh(al, ta, A)));
            r = fsub(r, fmul(Bh(ta, be, A), Bh(al, ta, B)));
          }
          rb.hhvv[rb.at(al, be, A, B)] = r;
        }

  for (int A = 0; A < m; ++A)
    for (int B = 0; B < m; ++B)
      for (int C = 0; C < m; ++C)
        for (int E = 0; E < m; ++E) {
          Field r = fsub(fdiff(Bv(A, B, C), yix(E)), fdiff(Bv(A, B, E), yix(C)));
          for (int F = 0; F < m; ++F) {
            r = fadd(r, fmul(Bv(F, B, C), Bv(A, F, E)));
            r = fsub(r, fmul(Bv(F, B, E), Bv(A, F, C)));
          }
          rb.vvvv[rb.at(A, B, C, E)] = r;
        }
  return rb;
}

// Max abs deviation between the blockwise assembly and the general-frame
// curvature at one point, over all six blocks.
inline double route_agreement_max_dev(const FrameConnection& can, const RouteTwoBlocks& rb,
                                      EvalContext& ctx) {
  const int m = can.m();
  double worst = 0.0;
  const auto upd = [&](const Field& lhs, const Field& rhs) {
    const double dev = std::abs(ctx.eval(lhs) - ctx.eval(rhs));
    if (dev > worst) worst = dev;
  };
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      for (int c = 0; c < m; ++c)
        for (int e = 0; e < m; ++e) {
          upd(rb.hhhh[rb.at(a, b, c, e)], can.riemann(a, b, c, e));
          upd(rb.vvhh[rb.at(a, b, c, e)], can.riemann(m + a, m + b, c, e));
          upd(rb.hhhv[rb.at(a, b, c, e)], can.riemann(a, b, c, m + e));
          upd(rb.vvhv[rb.at(a, b, c, e)], can.riemann(m + a, m + b, c, m + e));
          // the mixed vertical pair is assembled with its derivative along the
          // first listed index, the general-frame form along the last
          upd(rb.hhvv[rb.at(a, b, c, e)], can.riemann(a, b, m + e, m + c));
          upd(rb.vvvv[rb.at(a, b, c, e)], can.riemann(m + a, m + b, m + c, m + e));
        }
  return worst;
}

inline DistortionComparison compare_distortions(const FrameConnection& can,
                                                const std::vector<Field>& lhs,
                                                const std::vector<Field>& rhs,
                                                const std::vector<std::vector<double>>& pts) {
  const int d = can.dim();
  const int m = can.m();
  DistortionComparison rep;
  for (const auto& p : pts) {
    EvalContext ctx(p);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
          const std::size_t k = static_cast<std::size_t>((a * d + b) * d + c);
          const double dev = std::abs(ctx.eval(lhs[k]) - ctx.eval(rhs[k]));
          const int blk = DistortionComparison::block_of(a >= m, b >= m, c >= m);
          if (dev > rep.max_abs_dev[static_cast<std::size_t>(blk)])
            rep.max_abs_dev[static_cast<std::size_t>(blk)] = dev;
        }
  }
  return rep;
}

}  // namespace algflow
