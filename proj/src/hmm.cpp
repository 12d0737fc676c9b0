// src/hmm.cpp

#include "aud/hmm.hpp"

#include <cmath>

namespace aud {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Log-softmax of `logits` restricted to `mask`.
template <typename Logits, typename Mask>
VectorXd masked_log_softmax(const Logits& logits, const Mask& mask) {
  double m = kNegInf;
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (mask(j)) m = std::max(m, logits(j));
  VectorXd out = VectorXd::Constant(logits.size(), kNegInf);
  if (m == kNegInf) return out;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (mask(j)) sum += std::exp(logits(j) - m);
  const double lse = m + std::log(sum);
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (mask(j)) out(j) = logits(j) - lse;
  return out;
}

}  // namespace

HmmParameters::HmmParameters(int num_units, int latent_dim, int states_per_unit, std::mt19937_64& rng,
                             double mean_scale)
    : num_units_(num_units), states_per_unit_(states_per_unit) {
  if (num_units < 1 || states_per_unit < 1 || latent_dim < 1) throw Error("hmm: invalid dimensions");
  const int n = num_states();
  transition_mask_.setConstant(n, n, false);
  initial_mask_.setConstant(n, false);
  for (int u = 0; u < num_units; ++u) {
    const int first = u * states_per_unit;
    initial_mask_(first) = true;
    for (int k = 0; k < states_per_unit; ++k) {
      const int s = first + k;
      transition_mask_(s, s) = true;
      if (k + 1 < states_per_unit) {
        transition_mask_(s, s + 1) = true;
      } else {
        for (int v = 0; v < num_units; ++v) transition_mask_(s, v * states_per_unit) = true;
      }
    }
  }
  transition_logits_ = {"hmm.transition_logits", MatrixXd::Zero(n, n), {}};
  initial_logits_ = {"hmm.initial_logits", MatrixXd::Zero(n, 1), {}};
  std::normal_distribution<double> normal(0.0, mean_scale);
  MatrixXd means(n, latent_dim);
  for (Eigen::Index r = 0; r < means.rows(); ++r)
    for (Eigen::Index c = 0; c < means.cols(); ++c) means(r, c) = normal(rng);
  means_ = {"hmm.means", std::move(means), {}};
  log_variances_ = {"hmm.log_variances", MatrixXd::Zero(n, latent_dim), {}};
  for (auto* p : parameters()) p->zero_grad();
}

MatrixXd HmmParameters::log_transition() const {
  const int n = num_states();
  MatrixXd out(n, n);
  for (int i = 0; i < n; ++i)
    out.row(i) = masked_log_softmax(transition_logits_.value.row(i), transition_mask_.row(i)).transpose();
  return out;
}

VectorXd HmmParameters::log_initial() const {
  return masked_log_softmax(initial_logits_.value.col(0), initial_mask_);
}

MatrixXd HmmParameters::emission_log_likelihood(const MatrixXd& points) const {
  if (points.cols() != latent_dim()) throw Error("hmm: latent dimension mismatch");
  MatrixXd out(points.rows(), num_states());
  for (int k = 0; k < num_states(); ++k)
    for (Eigen::Index t = 0; t < points.rows(); ++t)
      out(t, k) = log_normal_diagonal(points.row(t), means_.value.row(k), log_variances_.value.row(k));
  return out;
}

MatrixXd HmmParameters::expected_emission_log_likelihood(const MatrixXd& mean, const MatrixXd& log_var) const {
  MatrixXd out = emission_log_likelihood(mean);
  const MatrixXd var = log_var.array().exp().matrix();
  const MatrixXd inv_state_var = (-log_variances_.value.array()).exp().matrix();  // N x D
  out -= 0.5 * var * inv_state_var.transpose();
  return out;
}

double HmmParameters::path_neg_log_prob(const std::vector<int>& states) const {
  if (states.empty()) return 0.0;
  const MatrixXd log_a = log_transition();
  const VectorXd log_pi = log_initial();
  double total = -log_pi(states[0]);
  for (std::size_t t = 1; t < states.size(); ++t) total -= log_a(states[t - 1], states[t]);
  return total;
}

void HmmParameters::accumulate_path_gradient(const std::vector<int>& states, double scale) {
  if (states.empty()) return;
  const VectorXd pi = log_initial().unaryExpr([](double v) { return std::exp(v); });
  initial_logits_.grad.col(0) += scale * pi;
  initial_logits_.grad(states[0], 0) -= scale;
  const MatrixXd a = transition();
  // Count transitions per source row, then apply softmax Jacobians once per row.
  MatrixXd counts = MatrixXd::Zero(num_states(), num_states());
  for (std::size_t t = 1; t < states.size(); ++t) counts(states[t - 1], states[t]) += 1.0;
  const VectorXd row_totals = counts.rowwise().sum();
  for (int i = 0; i < num_states(); ++i) {
    if (row_totals(i) == 0.0) continue;
    transition_logits_.grad.row(i) += scale * (row_totals(i) * a.row(i) - counts.row(i));
  }
}

bool HmmParameters::valid_path(const std::vector<int>& states) const {
  if (states.empty()) return false;
  for (const int s : states)
    if (s < 0 || s >= num_states()) return false;
  if (!initial_mask_(states[0])) return false;
  for (std::size_t t = 1; t < states.size(); ++t)
    if (!transition_mask_(states[t - 1], states[t])) return false;
  return true;
}

nn::ParameterList HmmParameters::parameters() {
  return {&transition_logits_, &initial_logits_, &means_, &log_variances_};
}

void HmmParameters::mask_gradients() {
  const int n = num_states();
  for (int i = 0; i < n; ++i) {
    const bool unit_exit = (i % states_per_unit_) == states_per_unit_ - 1;
    for (int j = 0; j < n; ++j) {
      const bool frozen = !learn_unit_transitions_ && unit_exit && j != i;
      if (!transition_mask_(i, j) || frozen) transition_logits_.grad(i, j) = 0.0;
    }
    if (!initial_mask_(i)) initial_logits_.grad(i, 0) = 0.0;
  }
  if (!learn_unit_transitions_) initial_logits_.grad.setZero();
}

}  // namespace aud
