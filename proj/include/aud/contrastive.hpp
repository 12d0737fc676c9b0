// aud/contrastive.hpp
//
// InfoNCE over a batch of embedding sequences. For every utterance b and
// frame t >= lookahead the anchor h_b[t - lookahead] scores the time-t
// embeddings of all utterances long enough to have one; the positive is the
// utterance's own h_b[t]. The loss is the mean negative log-softmax of the
// positive. Frames with fewer than two candidates contribute nothing.

#ifndef AUD_CONTRASTIVE_HPP_
#define AUD_CONTRASTIVE_HPP_

#include "aud/common.hpp"
#include "aud/gaussian.hpp"

#include <algorithm>
#include <limits>
#include <span>
#include <vector>

namespace aud {

template <typename Scalar>
struct InfoNceResult {
  Scalar loss = std::numeric_limits<Scalar>::quiet_NaN();
  std::size_t terms = 0;
  // d loss / d h_b, same shapes as the inputs; empty unless requested.
  std::vector<Matrix<Scalar>> grads;

  bool valid() const { return terms > 0; }
};

template <typename Scalar>
InfoNceResult<Scalar> info_nce(std::span<const Matrix<Scalar>> embeddings, Eigen::Index lookahead,
                               bool want_grad) {
  if (lookahead < 1) throw Error("contrastive lookahead must be at least one frame");
  InfoNceResult<Scalar> result;
  const std::size_t batch = embeddings.size();
  if (want_grad) {
    result.grads.reserve(batch);
    for (const auto& h : embeddings) result.grads.push_back(Matrix<Scalar>::Zero(h.rows(), h.cols()));
  }
  Eigen::Index longest = 0;
  for (const auto& h : embeddings) longest = std::max(longest, h.rows());

  Scalar total = 0;
  std::vector<std::size_t> candidates;
  Vector<Scalar> scores;
  for (Eigen::Index t = lookahead; t < longest; ++t) {
    candidates.clear();
    for (std::size_t b = 0; b < batch; ++b)
      if (embeddings[b].rows() > t) candidates.push_back(b);
    if (candidates.size() < 2) continue;
    scores.resize(static_cast<Eigen::Index>(candidates.size()));
    for (const std::size_t b : candidates) {
      const auto anchor = embeddings[b].row(t - lookahead);
      Eigen::Index positive = -1;
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        scores[c] = embeddings[candidates[c]].row(t).dot(anchor);
        if (candidates[c] == b) positive = static_cast<Eigen::Index>(c);
      }
      const Scalar lse = log_sum_exp(scores);
      total += lse - scores[positive];
      ++result.terms;
      if (want_grad) {
        Vector<Scalar> dscore = (scores.array() - lse).exp().matrix();
        dscore[positive] -= 1;
        for (std::size_t c = 0; c < candidates.size(); ++c) {
          const auto cb = candidates[c];
          result.grads[cb].row(t) += dscore[c] * anchor;
          result.grads[b].row(t - lookahead) += dscore[c] * embeddings[cb].row(t);
        }
      }
    }
  }
  if (result.terms > 0) {
    const Scalar scale = Scalar(1) / static_cast<Scalar>(result.terms);
    result.loss = total * scale;
    for (auto& g : result.grads) g *= scale;
  }
  return result;
}

}  // namespace aud

#endif  // AUD_CONTRASTIVE_HPP_
