// aud/hmm.hpp
//
// HMM latent prior for unit discovery: 3-state left-to-right units with
// self-loops; the last state of every unit may enter the first state of any
// unit. Transition and initial weights are softmax-parametrized over the
// allowed entries and state variances are log-parametrized, so every
// gradient step keeps a valid model.

#ifndef AUD_HMM_HPP_
#define AUD_HMM_HPP_

#include "aud/common.hpp"
#include "aud/gaussian.hpp"
#include "aud/nn.hpp"

#include <limits>
#include <random>
#include <vector>

namespace aud {

template <typename Scalar>
struct ViterbiResult {
  std::vector<int> states;
  Scalar log_prob = -std::numeric_limits<Scalar>::infinity();
};

// Max-probability state path in the log domain. log_emission is T x N,
// log_initial has N entries, log_transition is N x N (row = from state).
// Ties resolve to the lowest state index.
template <typename Scalar>
ViterbiResult<Scalar> viterbi(const Matrix<Scalar>& log_emission, const Vector<Scalar>& log_initial,
                              const Matrix<Scalar>& log_transition) {
  const Eigen::Index frames = log_emission.rows();
  const Eigen::Index n = log_emission.cols();
  if (frames < 1) throw Error("viterbi: empty observation sequence");
  if (log_initial.size() != n || log_transition.rows() != n || log_transition.cols() != n)
    throw Error("viterbi: state count mismatch");
  if (log_emission.array().isNaN().any()) throw NumericError("viterbi: NaN emission score");
  if ((log_emission.array() == std::numeric_limits<Scalar>::infinity()).any())
    throw NumericError("viterbi: infinite emission score");

  const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  Matrix<Scalar> score(frames, n);
  Eigen::MatrixXi back(frames, n);
  score.row(0) = (log_initial + log_emission.row(0).transpose()).transpose();
  back.row(0).setConstant(-1);
  for (Eigen::Index t = 1; t < frames; ++t) {
    for (Eigen::Index j = 0; j < n; ++j) {
      Scalar best = neg_inf;
      int arg = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar s = score(t - 1, i) + log_transition(i, j);
        if (s > best) {
          best = s;
          arg = static_cast<int>(i);
        }
      }
      score(t, j) = best + log_emission(t, j);
      back(t, j) = arg;
    }
  }
  ViterbiResult<Scalar> result;
  Eigen::Index last = 0;
  result.log_prob = score.row(frames - 1).maxCoeff(&last);
  if (!(result.log_prob > neg_inf)) throw NumericError("viterbi: no path with non-zero probability");
  result.states.assign(static_cast<std::size_t>(frames), 0);
  result.states.back() = static_cast<int>(last);
  for (Eigen::Index t = frames - 1; t > 0; --t)
    result.states[static_cast<std::size_t>(t - 1)] = back(t, result.states[static_cast<std::size_t>(t)]);
  return result;
}

struct StateAlignment {
  std::vector<int> states;
};

class HmmParameters {
 public:
  HmmParameters() = default;
  HmmParameters(int num_units, int latent_dim, int states_per_unit, std::mt19937_64& rng,
                double mean_scale = 1.0);

  int num_units() const { return num_units_; }
  int states_per_unit() const { return states_per_unit_; }
  int num_states() const { return num_units_ * states_per_unit_; }
  int latent_dim() const { return static_cast<int>(means_.value.cols()); }

  // Log probabilities; disallowed entries are -inf. Rows sum to one.
  MatrixXd log_transition() const;
  VectorXd log_initial() const;
  MatrixXd transition() const {
    return log_transition().unaryExpr([](double v) { return std::exp(v); });
  }

  bool transition_allowed(int from, int to) const { return transition_mask_(from, to); }
  bool initial_allowed(int state) const { return initial_mask_(state); }

  const MatrixXd& means() const { return means_.value; }
  const MatrixXd& log_variances() const { return log_variances_.value; }
  MatrixXd& mutable_means() { return means_.value; }
  MatrixXd& mutable_log_variances() { return log_variances_.value; }
  MatrixXd& mutable_transition_logits() { return transition_logits_.value; }
  VectorXd initial_logits() const { return initial_logits_.value.col(0); }
  MatrixXd& mutable_initial_logits() { return initial_logits_.value; }

  // log N(x_t; mu_k, Sigma_k) for every frame and state, T x N.
  MatrixXd emission_log_likelihood(const MatrixXd& points) const;
  // E_q[log N(x_t; mu_k, Sigma_k)] for q = N(mean_t, diag(exp(log_var_t))).
  MatrixXd expected_emission_log_likelihood(const MatrixXd& mean, const MatrixXd& log_var) const;

  // Adds d(-sum log transition/initial weights along `states`) * scale to the
  // logit gradients.
  void accumulate_path_gradient(const std::vector<int>& states, double scale);
  // -log pi(z_0) - sum log A(z_{t-1}, z_t)
  double path_neg_log_prob(const std::vector<int>& states) const;

  bool valid_path(const std::vector<int>& states) const;

  // Freezes the unit-to-unit exit weights at uniform.
  void set_learn_unit_transitions(bool learn) { learn_unit_transitions_ = learn; }
  bool learn_unit_transitions() const { return learn_unit_transitions_; }

  nn::ParameterList parameters();
  nn::Parameter& means_parameter() { return means_; }
  nn::Parameter& log_variances_parameter() { return log_variances_; }
  nn::Parameter& transition_parameter() { return transition_logits_; }
  nn::Parameter& initial_parameter() { return initial_logits_; }

  // Zeroes gradients of disallowed (or frozen) entries.
  void mask_gradients();

 private:
  int num_units_ = 0;
  int states_per_unit_ = 3;
  bool learn_unit_transitions_ = true;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> transition_mask_;
  Eigen::Array<bool, Eigen::Dynamic, 1> initial_mask_;
  nn::Parameter transition_logits_;  // N x N
  nn::Parameter initial_logits_;     // N x 1
  nn::Parameter means_;              // N x D
  nn::Parameter log_variances_;      // N x D
};

}  // namespace aud

#endif  // AUD_HMM_HPP_
