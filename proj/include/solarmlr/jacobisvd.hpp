#pragma once

// Jacobi singular value decompositions.
//
// svd_jacobi: two-sided cyclic Jacobi on a small square matrix (the R factor
// of the distributed QR). Every step diagonalises one 2x2 block with a left
// and a right plane rotation; sweeps visit the pairs (p, q) in row-cyclic
// order. Dimensions must be even; pad_even supplies the zero row and column.
//
// svd_one_sided: Hestenes one-sided Jacobi on a tall matrix, used by the
// centralized least-squares path.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "solarmlr/linalg.hpp"

namespace solarmlr {

inline constexpr double kOffRelTolerance = 1e-12;
inline constexpr int kMaxSweeps = 30;

struct SvdResult {
  Matrix u;
  Vector sigma;  // non-negative, descending
  Matrix v;
  int sweeps = 0;
  double off_norm = 0.0;  // off-diagonal Frobenius norm at exit
};

/// Appends a zero row and column to an odd-dimension square matrix.
inline Matrix pad_even(const Matrix& r) {
  if (r.rows() != r.cols()) throw Error(ErrorCode::InvalidArgument, "pad_even needs a square matrix");
  if (r.rows() % 2 == 0) throw Error(ErrorCode::InvalidArgument, "pad_even needs an odd dimension");
  Matrix out(r.rows() + 1, r.cols() + 1);
  for (std::size_t c = 0; c < r.cols(); ++c)
    for (std::size_t i = 0; i < r.rows(); ++i) out(i, c) = r(i, c);
  return out;
}

namespace detail {

inline double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c)
    for (std::size_t i = 0; i < a.rows(); ++i)
      if (i != c) s += a(i, c) * a(i, c);
  return std::sqrt(s);
}

// Applies [c s; -s c] from the right to columns p, q of m.
inline void rotate_columns(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
  auto cp = m.col(p);
  auto cq = m.col(q);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double x = cp[i];
    const double y = cq[i];
    cp[i] = c * x - s * y;
    cq[i] = s * x + c * y;
  }
  ops::add(4 * m.rows());
}

// Applies [c s; -s c]^T from the left to rows p, q of m.
inline void rotate_rows(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
  for (std::size_t j = 0; j < m.cols(); ++j) {
    const double x = m(p, j);
    const double y = m(q, j);
    m(p, j) = c * x - s * y;
    m(q, j) = s * x + c * y;
  }
  ops::add(4 * m.cols());
}

// Symmetric 2x2 Jacobi rotation [c s; -s c] zeroing the off-diagonal of
// [[a, b], [b, d]].
inline void symmetric_schur(double a, double b, double d, double& c, double& s) {
  if (b == 0.0) {
    c = 1.0;
    s = 0.0;
    return;
  }
  const double zeta = (d - a) / (2.0 * b);
  const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
  c = 1.0 / std::sqrt(1.0 + t * t);
  s = t * c;
  ops::add(9);
}

// Runs two-sided sweeps in place until the off-diagonal mass is small.
// Pairs whose off-diagonal entries are both exactly zero are left untouched,
// so a zero padding row/column stays exactly zero and keeps its index.
inline void two_sided_sweeps(Matrix& a, Matrix& u, Matrix& v, double threshold, int& sweeps, double& off) {
  const std::size_t n = a.rows();
  sweeps = 0;
  off = off_diagonal_norm(a);
  while (off > threshold) {
    if (sweeps == kMaxSweeps) {
      throw Error(ErrorCode::NoConvergence,
                  "Jacobi SVD did not converge in " + std::to_string(kMaxSweeps) + " sweeps, off-diagonal norm " +
                      std::to_string(off));
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double w = a(p, p), x = a(p, q), y = a(q, p), z = a(q, q);
        if (x == 0.0 && y == 0.0) continue;
        // Left rotation that symmetrises the block.
        const double phi = std::atan2(x - y, w + z);
        const double c1 = std::cos(phi), s1 = std::sin(phi);
        const double sa = c1 * w - s1 * y;
        const double sb = c1 * x - s1 * z;
        const double sd = s1 * x + c1 * z;
        ops::add(10);
        double c2 = 1.0, s2 = 0.0;
        symmetric_schur(sa, sb, sd, c2, s2);
        const double cl = c1 * c2 - s1 * s2;
        const double sl = s1 * c2 + c1 * s2;
        ops::add(4);
        rotate_rows(a, p, q, cl, sl);
        rotate_columns(a, p, q, c2, s2);
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        rotate_columns(u, p, q, cl, sl);
        rotate_columns(v, p, q, c2, s2);
      }
    }
    ++sweeps;
    off = off_diagonal_norm(a);
    ops::add(n * n);
  }
}

// Makes the diagonal non-negative (flipping U columns) and orders everything
// by descending singular value, stable on ties.
inline SvdResult finish(const Matrix& a, const Matrix& u, const Matrix& v, int sweeps, double off) {
  const std::size_t n = a.cols();
  std::vector<double> sig(n);
  std::vector<double> sign(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    sig[i] = std::abs(a(i, i));
    if (a(i, i) < 0.0) sign[i] = -1.0;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return sig[l] > sig[r]; });

  SvdResult out{Matrix(u.rows(), n), Vector(n), Matrix(v.rows(), n), sweeps, off};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.sigma[k] = sig[src];
    for (std::size_t i = 0; i < u.rows(); ++i) out.u(i, k) = sign[src] * u(i, src);
    for (std::size_t i = 0; i < v.rows(); ++i) out.v(i, k) = v(i, src);
  }
  return out;
}

}  // namespace detail

/// Two-sided cyclic Jacobi SVD of an even-dimension square matrix.
/// Converges when the off-diagonal Frobenius norm is <= 1e-12 * ||r||_F.
inline SvdResult svd_jacobi(const Matrix& r) {
  if (r.rows() != r.cols()) throw Error(ErrorCode::InvalidArgument, "svd_jacobi needs a square matrix");
  if (r.rows() % 2 != 0) throw Error(ErrorCode::InvalidArgument, "svd_jacobi needs an even dimension; call pad_even");
  Matrix a = r;
  Matrix u = Matrix::identity(r.rows());
  Matrix v = Matrix::identity(r.rows());
  int sweeps = 0;
  double off = 0.0;
  detail::two_sided_sweeps(a, u, v, kOffRelTolerance * frobenius_norm(r), sweeps, off);
  return detail::finish(a, u, v, sweeps, off);
}

/// SVD of any square matrix. Odd dimensions are padded with a zero row and
/// column; the padding index is never rotated, so it is stripped exactly.
inline SvdResult svd_square(const Matrix& r) {
  if (r.rows() != r.cols()) throw Error(ErrorCode::InvalidArgument, "svd_square needs a square matrix");
  if (r.rows() % 2 == 0) return svd_jacobi(r);

  const std::size_t n = r.rows();
  Matrix a = pad_even(r);
  Matrix u = Matrix::identity(n + 1);
  Matrix v = Matrix::identity(n + 1);
  int sweeps = 0;
  double off = 0.0;
  detail::two_sided_sweeps(a, u, v, kOffRelTolerance * frobenius_norm(r), sweeps, off);

  Matrix as(n, n), us(n, n), vs(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      as(i, c) = a(i, c);
      us(i, c) = u(i, c);
      vs(i, c) = v(i, c);
    }
  }
  return detail::finish(as, us, vs, sweeps, off);
}

/// One-sided (Hestenes) Jacobi SVD of a tall matrix, thin form: U is m x n.
/// Columns of U belonging to zero singular values are left as zero.
inline SvdResult svd_one_sided(const Matrix& a) {
  if (a.rows() < a.cols()) throw Error(ErrorCode::InvalidArgument, "svd_one_sided needs rows >= cols");
  const std::size_t n = a.cols();
  Matrix w = a;
  Matrix v = Matrix::identity(n);
  constexpr double kPairTolerance = 1e-15;
  int sweeps = 0;
  bool rotated = true;
  while (rotated) {
    if (sweeps == kMaxSweeps)
      throw Error(ErrorCode::NoConvergence, "one-sided Jacobi did not converge");
    rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot(w.col(p), w.col(p));
        const double beta = dot(w.col(q), w.col(q));
        const double gamma = dot(w.col(p), w.col(q));
        if (std::abs(gamma) <= kPairTolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        double c = 1.0, s = 0.0;
        detail::symmetric_schur(alpha, gamma, beta, c, s);
        detail::rotate_columns(w, p, q, c, s);
        detail::rotate_columns(v, p, q, c, s);
      }
    }
    ++sweeps;
  }

  Matrix u(a.rows(), n);
  Matrix diag(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double s = l2_norm(w.col(j));
    diag(j, j) = s;
    if (s > 0.0) {
      for (std::size_t i = 0; i < a.rows(); ++i) u(i, j) = w(i, j) / s;
    }
  }
  return detail::finish(diag, u, v, sweeps, 0.0);
}

}  // namespace solarmlr
