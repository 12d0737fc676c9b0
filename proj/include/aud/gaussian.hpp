// aud/gaussian.hpp
//
// Closed-form diagonal-Gaussian quantities shared by both VAEs.

#ifndef AUD_GAUSSIAN_HPP_
#define AUD_GAUSSIAN_HPP_

#include "aud/common.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace aud {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

// KL(N(mean, exp(log_var)) || N(0, I)), summed over dimensions.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar kl_to_standard_normal(const Eigen::MatrixBase<DerivedA>& mean,
                                                const Eigen::MatrixBase<DerivedB>& log_var) {
  return 0.5 * (mean.array().square() + log_var.array().exp() - 1.0 - log_var.array()).sum();
}

// KL(N(mq, exp(lq)) || N(mp, exp(lp))) for diagonal covariances.
template <typename D1, typename D2, typename D3, typename D4>
typename D1::Scalar kl_diagonal(const Eigen::MatrixBase<D1>& mean_q, const Eigen::MatrixBase<D2>& log_var_q,
                                const Eigen::MatrixBase<D3>& mean_p, const Eigen::MatrixBase<D4>& log_var_p) {
  const auto var_ratio = (log_var_q.array() - log_var_p.array()).exp();
  const auto mahal = (mean_q.array() - mean_p.array()).square() * (-log_var_p.array()).exp();
  return 0.5 * (var_ratio + mahal - 1.0 - (log_var_q.array() - log_var_p.array())).sum();
}

// log N(x; mean, diag(exp(log_var))).
template <typename D1, typename D2, typename D3>
typename D1::Scalar log_normal_diagonal(const Eigen::MatrixBase<D1>& x, const Eigen::MatrixBase<D2>& mean,
                                        const Eigen::MatrixBase<D3>& log_var) {
  using Scalar = typename D1::Scalar;
  const Scalar log_2pi = std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
  return Scalar(-0.5) * ((x.array() - mean.array()).square() * (-log_var.array()).exp() + log_var.array() + log_2pi).sum();
}

}  // namespace aud

#endif  // AUD_GAUSSIAN_HPP_
