#pragma once

// Dense row-major matrices, jittered Cholesky factorization, triangular solves
// and the Gaussian KL divergence. All routines are templates over the scalar
// type so they can run on doubles or on autodiff variables.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cnmgp/autodiff.hpp"
#include "cnmgp/errors.hpp"

namespace cnmgp {

template <class T>
using Vec = std::vector<T>;

template <class T>
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, T fill = T(0.0)) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<T> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw DimensionMismatch("Mat: entry count does not match shape");
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1.0);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = Mat<double>;
using Vector = Vec<double>;

template <class T>
Mat<T> transpose(const Mat<T>& a) {
  Mat<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
Matrix values_of(const Mat<T>& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.size(); ++k) out.data()[k] = value(a.data()[k]);
  return out;
}

template <class T>
Vector values_of(const Vec<T>& a) {
  Vector out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = value(a[k]);
  return out;
}

/// Plain product; only used off the hot path.
template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  const Mat<T> bt = transpose(b);
  Mat<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) = dot(a.row(i), bt.row(j));
  return c;
}

/// L·Lᵀ for a lower-triangular L.
template <class T>
Mat<T> outer_lower(const Mat<T>& l) {
  const std::size_t n = l.rows();
  Mat<T> a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      a(i, j) = dot(l.row(i).first(j + 1), l.row(j).first(j + 1));
      a(j, i) = a(i, j);
    }
  return a;
}

template <class T>
double frobenius_norm(const Mat<T>& a) {
  double s = 0.0;
  for (const T& x : a.data()) s += value(x) * value(x);
  return std::sqrt(s);
}

template <class T>
struct CholFactor {
  Mat<T> L;
  double jitter_used = 0.0;
  T log_det = T(0.0);

  std::size_t dim() const noexcept { return L.rows(); }

  /// Wraps an existing lower-triangular factor with positive diagonal.
  static CholFactor from_lower(Mat<T> l) {
    if (l.rows() != l.cols()) throw DimensionMismatch("CholFactor: factor must be square");
    CholFactor f;
    T acc = T(0.0);
    for (std::size_t i = 0; i < l.rows(); ++i) {
      if (!(value(l(i, i)) > 0.0)) throw NotPositiveDefinite("CholFactor: non-positive diagonal");
      using std::log;
      acc += log(l(i, i));
    }
    f.log_det = T(2.0) * acc;
    f.L = std::move(l);
    return f;
  }
};

namespace detail {

inline bool is_symmetric(const Matrix& a, double rel_tol) {
  double scale = 0.0;
  for (double x : a.data()) scale = std::max(scale, std::abs(x));
  const double tol = rel_tol * std::max(scale, 1e-300);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

/// Cholesky of the lower triangle of `a` (already symmetrized) plus jitter·I.
template <class T>
bool try_cholesky(const Mat<T>& a, double jitter, Mat<T>& l) {
  using std::sqrt;
  const std::size_t n = a.rows();
  l = Mat<T>(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = j; i < n; ++i) {
      const T base = (i == j) ? a(i, i) + T(jitter) : a(i, j);
      const T s = dot_sub(base, std::span<const T>(l.row(i).first(j)), std::span<const T>(l.row(j).first(j)));
      if (i == j) {
        const double sv = value(s);
        if (!(sv > 0.0) || !std::isfinite(sv)) return false;
        l(j, j) = sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return true;
}

template <class T>
Mat<T> symmetrized(const Mat<T>& a) {
  Mat<T> s(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    s(i, i) = a(i, i);
    for (std::size_t j = 0; j < i; ++j) {
      // Exactly symmetric entries pass through untouched, keeping the tape small.
      s(i, j) = value(a(i, j)) == value(a(j, i)) ? a(i, j) : (a(i, j) + a(j, i)) * T(0.5);
      s(j, i) = s(i, j);
    }
  }
  return s;
}

}  // namespace detail

inline constexpr int kJitterAttempts = 7;

/// Factor A + j·I, where j is the first of {0, base·10^k·mean(diag A), k = 0..6}
/// that yields a positive pivot sequence. For autodiff scalars the jitter is
/// chosen on values and then held constant.
template <class T>
CholFactor<T> cholesky_jittered(const Mat<T>& a, double base_jitter = 1e-6) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky_jittered: matrix is not square");
  const Matrix av = values_of(a);
  if (!detail::is_symmetric(av, 1e-8)) throw DimensionMismatch("cholesky_jittered: matrix is not symmetric");
  const std::size_t n = a.rows();
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_diag += av(i, i);
  mean_diag = n > 0 ? mean_diag / static_cast<double>(n) : 0.0;
  if (!(mean_diag > 0.0)) mean_diag = 1.0;

  const Mat<T> sym = detail::symmetrized(a);
  const Matrix sym_v = values_of(sym);
  double jitter = 0.0;
  for (int attempt = 0; attempt <= kJitterAttempts; ++attempt) {
    jitter = attempt == 0 ? 0.0 : base_jitter * std::pow(10.0, attempt - 1) * mean_diag;
    CholFactor<T> f;
    f.jitter_used = jitter;
    bool ok = false;
    if constexpr (is_var_v<T>) {
      Matrix probe;
      ok = detail::try_cholesky(sym_v, jitter, probe);
      if (ok) ok = detail::try_cholesky(sym, jitter, f.L);
    } else {
      ok = detail::try_cholesky(sym, jitter, f.L);
    }
    if (!ok) continue;
    using std::log;
    T acc = T(0.0);
    for (std::size_t i = 0; i < n; ++i) acc += log(f.L(i, i));
    f.log_det = T(2.0) * acc;
    return f;
  }
  throw NotPositiveDefinite("cholesky_jittered: factorization failed with jitter up to " + std::to_string(jitter));
}

/// Solves L·x = b for lower-triangular L.
template <class T, class B>
Vec<promote_t<T, B>> solve_lower(const Mat<T>& l, std::span<const B> b) {
  using R = promote_t<T, B>;
  const std::size_t n = l.rows();
  if (b.size() != n) throw DimensionMismatch("solve_lower: right-hand side length differs");
  Vec<R> x(n);
  if constexpr (std::is_same_v<R, T>) {
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = dot_sub(R(b[i]), std::span<const R>(l.row(i).first(i)), std::span<const R>(x.data(), i)) / l(i, i);
    }
  } else {
    Mat<R> lr(n, n);
    for (std::size_t k = 0; k < l.size(); ++k) lr.data()[k] = R(l.data()[k]);
    return solve_lower<R, B>(lr, b);
  }
  return x;
}

/// Solves U·x = b where `u` is upper-triangular (typically the transpose of a
/// Cholesky factor, stored row-major).
template <class T, class B>
Vec<promote_t<T, B>> solve_upper(const Mat<T>& u, std::span<const B> b) {
  using R = promote_t<T, B>;
  const std::size_t n = u.rows();
  if (b.size() != n) throw DimensionMismatch("solve_upper: right-hand side length differs");
  Vec<R> x(n);
  if constexpr (std::is_same_v<R, T>) {
    for (std::size_t ii = n; ii-- > 0;) {
      const std::size_t tail = n - ii - 1;
      x[ii] = dot_sub(R(b[ii]), std::span<const R>(u.row(ii).subspan(ii + 1, tail)),
                      std::span<const R>(x.data() + ii + 1, tail)) /
              u(ii, ii);
    }
  } else {
    Mat<R> ur(n, n);
    for (std::size_t k = 0; k < u.size(); ++k) ur.data()[k] = R(u.data()[k]);
    return solve_upper<R, B>(ur, b);
  }
  return x;
}

/// X with L·X = B, or Lᵀ·X = B when `transpose` is set.
template <class T>
Mat<T> tri_solve(const CholFactor<T>& chol, const Mat<T>& b, bool transpose_factor = false) {
  const std::size_t n = chol.dim();
  if (b.rows() != n) throw DimensionMismatch("tri_solve: row count differs from factor dimension");
  const Mat<T> bt = transpose(b);
  Mat<T> xt(b.cols(), n);
  const Mat<T> u = transpose_factor ? transpose(chol.L) : Mat<T>();
  for (std::size_t c = 0; c < b.cols(); ++c) {
    const Vec<T> col = transpose_factor ? solve_upper<T, T>(u, bt.row(c)) : solve_lower<T, T>(chol.L, bt.row(c));
    std::copy(col.begin(), col.end(), xt.row(c).begin());
  }
  return transpose(xt);
}

/// KL( N(m, S·Sᵀ) || N(0, K·Kᵀ) ) where S and K are Cholesky factors.
template <class T>
T gauss_kl(std::span<const T> m, const CholFactor<T>& s, const CholFactor<T>& k) {
  const std::size_t n = k.dim();
  if (m.size() != n || s.dim() != n) throw DimensionMismatch("gauss_kl: dimensions differ");
  // tr(K⁻¹SSᵀ) = ‖L_K⁻¹ S‖_F², column by column; column j of S is zero above row j.
  const Mat<T> st = transpose(s.L);
  T trace = T(0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t len = n - j;
    Mat<T> lk_sub(len, len);
    // The trailing block of L_K solves the nonzero part of column j.
    for (std::size_t a = 0; a < len; ++a)
      for (std::size_t b = 0; b <= a; ++b) lk_sub(a, b) = k.L(j + a, j + b);
    // Leading zeros of the column make the first j entries of the solution zero.
    const Vec<T> sol = solve_lower<T, T>(lk_sub, st.row(j).subspan(j, len));
    trace += sum_squares(std::span<const T>(sol));
  }
  const Vec<T> alpha = solve_lower<T, T>(k.L, m);
  const T maha = sum_squares(std::span<const T>(alpha));
  return T(0.5) * (trace + maha - T(static_cast<double>(n)) + k.log_det - s.log_det);
}

}  // namespace cnmgp
