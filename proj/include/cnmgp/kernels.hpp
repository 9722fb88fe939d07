#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cnmgp/numcore.hpp"

namespace cnmgp {

/// Stationary squared-exponential covariance: variance · exp(−r² / (2·lengthscale²)).
template <class T = double>
struct BasicRbfKernel {
  T variance = T(1.0);
  T lengthscale = T(1.0);
};

using RbfKernel = BasicRbfKernel<double>;

namespace detail {

template <class TA, class TB>
promote_t<TA, TB> squared_distance(std::span<const TA> a, std::span<const TB> b) {
  using R = promote_t<TA, TB>;
  R s = R(0.0);
  for (std::size_t k = 0; k < a.size(); ++k) {
    const R d = R(a[k]) - R(b[k]);
    s += d * d;
  }
  return s;
}

template <class T>
void check_rbf(const BasicRbfKernel<T>& k) {
  if (!std::isfinite(value(k.variance)) || !std::isfinite(value(k.lengthscale)))
    throw NonFinite("RbfKernel: variance and lengthscale must be finite");
  if (!(value(k.variance) > 0.0) || !(value(k.lengthscale) > 0.0))
    throw ConfigError("RbfKernel: variance and lengthscale must be positive");
}

}  // namespace detail

template <class TA, class TB, class TK>
Mat<promote_t<TA, TB, TK>> rbf_matrix(const Mat<TA>& x, const Mat<TB>& x2, const BasicRbfKernel<TK>& k) {
  using R = promote_t<TA, TB, TK>;
  using std::exp;
  if (x.cols() != x2.cols()) throw DimensionMismatch("rbf_matrix: input dimensions differ");
  detail::check_rbf(k);
  const R variance = R(k.variance);
  const R ls = R(k.lengthscale);
  const R two_ls2 = R(2.0) * ls * ls;
  Mat<R> out(x.rows(), x2.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x2.rows(); ++j) {
      const R d2 = detail::squared_distance(x.row(i), x2.row(j));
      out(i, j) = variance * exp(-d2 / two_ls2);
    }
  return out;
}

/// Symmetric RBF Gram matrix of one point set; only the lower triangle is evaluated.
template <class TA, class TK>
Mat<promote_t<TA, TK>> rbf_gram(const Mat<TA>& x, const BasicRbfKernel<TK>& k) {
  using R = promote_t<TA, TK>;
  using std::exp;
  detail::check_rbf(k);
  const R variance = R(k.variance);
  const R ls = R(k.lengthscale);
  const R two_ls2 = R(2.0) * ls * ls;
  Mat<R> out(x.rows(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out(i, i) = variance;
    for (std::size_t j = 0; j < i; ++j) {
      const R d2 = detail::squared_distance(x.row(i), x.row(j));
      out(i, j) = variance * exp(-d2 / two_ls2);
      out(j, i) = out(i, j);
    }
  }
  return out;
}

/// Point sets with a positive lengthscale per point, for the Gibbs kernel.
template <class TA = double, class TB = double, class TL = double>
struct GibbsEval {
  const Mat<TA>& inputs_a;
  std::span<const TL> lengthscales_a;
  const Mat<TB>& inputs_b;
  std::span<const TL> lengthscales_b;
};

namespace detail {

/// sqrt(2·la·lb / (la² + lb²)) · exp(−r² / (la² + lb²))
template <class R>
R gibbs_entry(const R& d2, const R& la, const R& lb) {
  using std::exp;
  using std::sqrt;
  const R sum_sq = la * la + lb * lb;
  return sqrt(R(2.0) * la * lb / sum_sq) * exp(-d2 / sum_sq);
}

template <class TL>
void check_lengthscales(std::span<const TL> ls) {
  for (const TL& l : ls)
    if (!(value(l) > 0.0) || !std::isfinite(value(l)))
      throw NonPositiveLengthscale("gibbs_matrix: lengthscales must be positive and finite");
}

}  // namespace detail

template <class TA, class TB, class TL>
Mat<promote_t<TA, TB, TL>> gibbs_matrix(const GibbsEval<TA, TB, TL>& e) {
  using R = promote_t<TA, TB, TL>;
  if (e.inputs_a.cols() != e.inputs_b.cols()) throw DimensionMismatch("gibbs_matrix: input dimensions differ");
  if (e.lengthscales_a.size() != e.inputs_a.rows() || e.lengthscales_b.size() != e.inputs_b.rows())
    throw DimensionMismatch("gibbs_matrix: lengthscale count differs from point count");
  detail::check_lengthscales(e.lengthscales_a);
  detail::check_lengthscales(e.lengthscales_b);
  Mat<R> out(e.inputs_a.rows(), e.inputs_b.rows());
  for (std::size_t i = 0; i < e.inputs_a.rows(); ++i)
    for (std::size_t j = 0; j < e.inputs_b.rows(); ++j) {
      const R d2 = detail::squared_distance(e.inputs_a.row(i), e.inputs_b.row(j));
      out(i, j) = detail::gibbs_entry(d2, R(e.lengthscales_a[i]), R(e.lengthscales_b[j]));
    }
  return out;
}

/// Gibbs Gram matrix of one point set: unit diagonal, lower triangle mirrored.
template <class TA, class TL>
Mat<promote_t<TA, TL>> gibbs_gram(const Mat<TA>& x, std::span<const TL> ls) {
  using R = promote_t<TA, TL>;
  if (ls.size() != x.rows()) throw DimensionMismatch("gibbs_gram: lengthscale count differs from point count");
  detail::check_lengthscales(ls);
  Mat<R> out(x.rows(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out(i, i) = R(1.0);
    for (std::size_t j = 0; j < i; ++j) {
      const R d2 = detail::squared_distance(x.row(i), x.row(j));
      out(i, j) = detail::gibbs_entry(d2, R(ls[i]), R(ls[j]));
      out(j, i) = out(i, j);
    }
  }
  return out;
}

}  // namespace cnmgp
