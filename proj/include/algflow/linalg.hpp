#pragma once

// Small dense matrices for pointwise tensor algebra.  Inverse-metric
// contractions are always LU solves with partial pivoting; no routine here
// forms a symbolic or explicit inverse unless asked for the full matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace algflow {

struct SingularMatrixError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(static_cast<std::size_t>(rows) * cols, fill) {}

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * cols_ + j]; }

  double max_abs() const {
    double m = 0.0;
    for (double v : a_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> a_;
};

// Compact LU factorization (Doolittle, partial pivoting) of a square matrix.
struct Lu {
  Mat lu;
  std::vector<int> perm;
  int sign = 1;
  bool singular = false;
};

inline Lu lu_factor(Mat a) {
  const int n = a.rows();
  Lu f{std::move(a), std::vector<int>(n), 1, false};
  for (int i = 0; i < n; ++i) f.perm[i] = i;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    double best = std::abs(f.lu(k, k));
    for (int i = k + 1; i < n; ++i) {
      const double v = std::abs(f.lu(i, k));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (best == 0.0) {
      f.singular = true;
      continue;
    }
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(f.lu(k, j), f.lu(piv, j));
      std::swap(f.perm[k], f.perm[piv]);
      f.sign = -f.sign;
    }
    const double inv = 1.0 / f.lu(k, k);
    for (int i = k + 1; i < n; ++i) {
      const double m = f.lu(i, k) * inv;
      f.lu(i, k) = m;
      for (int j = k + 1; j < n; ++j) f.lu(i, j) -= m * f.lu(k, j);
    }
  }
  return f;
}

inline double lu_det(const Lu& f) {
  double d = f.sign;
  for (int i = 0; i < f.lu.rows(); ++i) d *= f.lu(i, i);
  return f.singular ? 0.0 : d;
}

inline std::vector<double> lu_solve(const Lu& f, const std::vector<double>& b) {
  const int n = f.lu.rows();
  if (f.singular) throw SingularMatrixError("singular matrix in linear solve");
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = b[f.perm[i]];
  for (int i = 1; i < n; ++i)
    for (int j = 0; j < i; ++j) x[i] -= f.lu(i, j) * x[j];
  for (int i = n - 1; i >= 0; --i) {
    for (int j = i + 1; j < n; ++j) x[i] -= f.lu(i, j) * x[j];
    x[i] /= f.lu(i, i);
  }
  return x;
}

inline std::vector<double> solve(const Mat& a, const std::vector<double>& b) {
  return lu_solve(lu_factor(a), b);
}

// X with A X = B, column by column.
inline Mat solve_mat(const Mat& a, const Mat& b) {
  const Lu f = lu_factor(a);
  Mat x(b.rows(), b.cols());
  std::vector<double> col(b.rows());
  for (int j = 0; j < b.cols(); ++j) {
    for (int i = 0; i < b.rows(); ++i) col[i] = b(i, j);
    auto sol = lu_solve(f, col);
    for (int i = 0; i < b.rows(); ++i) x(i, j) = sol[i];
  }
  return x;
}

inline double det(const Mat& a) { return lu_det(lu_factor(a)); }

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations; input is
// symmetrized first.  Adequate for the small block sizes used here.
inline std::vector<double> sym_eigenvalues(const Mat& a_in) {
  const int n = a_in.rows();
  Mat a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = 0.5 * (a_in(i, j) + a_in(j, i));
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

inline double min_sym_eigenvalue(const Mat& a) { return sym_eigenvalues(a).front(); }

}  // namespace algflow
