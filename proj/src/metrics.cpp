// src/metrics.cpp

#include "aud/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aud {

namespace {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

// Absorbs rounding in times read from two-decimal segment files.
constexpr double kTimeEpsilon = 1e-9;

void check_nonempty(const ConfusionMatrix& cm, const char* what) {
  if (cm.total() <= 0) throw Error(std::string(what) + ": empty confusion matrix");
}

double entropy(const Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>& marginal, double n) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < marginal.size(); ++i) {
    if (marginal(i) == 0) continue;
    const double p = static_cast<double>(marginal(i)) / n;
    h -= p * std::log(p);
  }
  return h;
}

void check_sorted(const BoundarySet& set) {
  for (std::size_t i = 1; i < set.times.size(); ++i)
    if (!(set.times[i] > set.times[i - 1]))
      throw Error("boundaries of " + set.utterance_id + " are not strictly increasing");
}

std::vector<double> drop_edges(const std::vector<double>& times) {
  if (times.size() <= 2) return {};
  return {times.begin() + 1, times.end() - 1};
}

BoundaryScore score_from_counts(std::int64_t matches, std::int64_t num_hyp, std::int64_t num_ref) {
  BoundaryScore s;
  s.matches = matches;
  s.num_hyp = num_hyp;
  s.num_ref = num_ref;
  s.precision = num_hyp > 0 ? static_cast<double>(matches) / static_cast<double>(num_hyp) : 0.0;
  s.recall = num_ref > 0 ? static_cast<double>(matches) / static_cast<double>(num_ref) : 0.0;
  const double denom = s.precision + s.recall;
  s.fscore = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

Eigen::Index frames_covered(const std::vector<TimedSegment>& segments, double hop) {
  double end = 0.0;
  for (const auto& s : segments) end = std::max(end, s.end());
  return static_cast<Eigen::Index>(std::llround(end / hop));
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(Eigen::Index num_hyp, Eigen::Index num_ref)
    : counts_(CountMatrix::Zero(num_hyp, num_ref)) {}

ConfusionMatrix::ConfusionMatrix(CountMatrix counts) : counts_(std::move(counts)) {
  if ((counts_.array() < 0).any()) throw Error("confusion matrix counts must be non-negative");
  total_ = counts_.sum();
}

void ConfusionMatrix::add(int hyp, int ref, std::int64_t count) {
  if (hyp < 0 || ref < 0) throw Error("frame labels must be non-negative");
  if (count < 0) throw Error("confusion matrix counts must be non-negative");
  if (hyp >= counts_.rows() || ref >= counts_.cols()) {
    CountMatrix grown = CountMatrix::Zero(std::max<Eigen::Index>(counts_.rows(), hyp + 1),
                                          std::max<Eigen::Index>(counts_.cols(), ref + 1));
    grown.topLeftCorner(counts_.rows(), counts_.cols()) = counts_;
    counts_ = std::move(grown);
  }
  counts_(hyp, ref) += count;
  total_ += count;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  for (Eigen::Index u = 0; u < other.counts_.rows(); ++u)
    for (Eigen::Index p = 0; p < other.counts_.cols(); ++p)
      if (other.counts_(u, p) != 0) add(static_cast<int>(u), static_cast<int>(p), other.counts_(u, p));
}

ConfusionMatrix frame_confusion(const FrameLabelSequence& hyp, const FrameLabelSequence& ref) {
  const auto nh = static_cast<std::ptrdiff_t>(hyp.labels.size());
  const auto nr = static_cast<std::ptrdiff_t>(ref.labels.size());
  if (std::abs(nh - nr) > kMaxFrameMismatch)
    throw Error("utterance " + ref.utterance_id + ": hypothesis has " + std::to_string(nh) +
                " frames, reference has " + std::to_string(nr));
  ConfusionMatrix cm;
  const auto n = std::min(nh, nr);
  for (std::ptrdiff_t t = 0; t < n; ++t)
    cm.add(hyp.labels[static_cast<std::size_t>(t)], ref.labels[static_cast<std::size_t>(t)]);
  return cm;
}

ConfusionMatrix frame_confusion(const FrameLabelSequences& hyp, const FrameLabelSequences& ref) {
  ConfusionMatrix cm;
  for (const auto& [id, r] : ref) {
    const auto it = hyp.find(id);
    if (it == hyp.end()) throw Error("utterance " + id + " has no hypothesis transcription");
    cm.merge(frame_confusion(it->second, r));
  }
  return cm;
}

double nmi(const ConfusionMatrix& cm) {
  check_nonempty(cm, "nmi");
  const auto& c = cm.counts();
  const double n = static_cast<double>(cm.total());
  const double hu = entropy(c.rowwise().sum(), n);
  const double hp = entropy(c.colwise().sum().transpose(), n);
  const double denom = hu + hp;
  if (denom <= 0.0) return 100.0;
  const auto row = c.rowwise().sum();
  const auto col = c.colwise().sum();
  double mi = 0.0;
  for (Eigen::Index u = 0; u < c.rows(); ++u) {
    for (Eigen::Index p = 0; p < c.cols(); ++p) {
      if (c(u, p) == 0) continue;
      const double joint = static_cast<double>(c(u, p)) / n;
      mi += joint * std::log(static_cast<double>(c(u, p)) * n /
                             (static_cast<double>(row(u)) * static_cast<double>(col(p))));
    }
  }
  return std::clamp(200.0 * mi / denom, 0.0, 100.0);
}

double cluster_purity(const ConfusionMatrix& cm) {
  check_nonempty(cm, "cluster_purity");
  return static_cast<double>(cm.counts().rowwise().maxCoeff().sum()) / static_cast<double>(cm.total());
}

BoundarySet boundaries_from_segments(const std::vector<TimedSegment>& segments, const std::string& utterance_id,
                                     bool include_edges) {
  BoundarySet out;
  out.utterance_id = utterance_id;
  out.includes_edges = include_edges;
  if (segments.empty()) return out;
  std::vector<double> times;
  for (const auto& s : segments) {
    times.push_back(s.start);
    times.push_back(s.end());
  }
  std::sort(times.begin(), times.end());
  const double first = times.front();
  const double last = times.back();
  for (const double t : times) {
    if (!include_edges && (t - first <= kTimeEpsilon || last - t <= kTimeEpsilon)) continue;
    if (!out.times.empty() && t - out.times.back() <= kTimeEpsilon) continue;
    out.times.push_back(t);
  }
  return out;
}

std::int64_t count_boundary_matches(const std::vector<double>& hyp, const std::vector<double>& ref, double collar,
                                    BoundaryMatching matching) {
  const double tol = collar + kTimeEpsilon;
  std::int64_t matches = 0;
  if (matching == BoundaryMatching::kMaximal) {
    std::size_t i = 0, j = 0;
    while (i < hyp.size() && j < ref.size()) {
      if (std::abs(hyp[i] - ref[j]) <= tol) {
        ++matches;
        ++i;
        ++j;
      } else if (hyp[i] < ref[j]) {
        ++i;
      } else {
        ++j;
      }
    }
    return matches;
  }
  std::vector<bool> used(ref.size(), false);
  for (const double h : hyp) {
    std::size_t best = ref.size();
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < ref.size(); ++j) {
      const double d = std::abs(h - ref[j]);
      if (!used[j] && d <= tol && d < best_dist) {
        best = j;
        best_dist = d;
      }
    }
    if (best < ref.size()) {
      used[best] = true;
      ++matches;
    }
  }
  return matches;
}

BoundaryScore boundary_fscore(const BoundarySet& hyp, const BoundarySet& ref, const BoundaryOptions& options) {
  check_sorted(hyp);
  check_sorted(ref);
  std::vector<double> h = hyp.times;
  std::vector<double> r = ref.times;
  if (!options.include_edges) {
    if (hyp.includes_edges) h = drop_edges(h);
    if (ref.includes_edges) r = drop_edges(r);
  }
  const auto m = count_boundary_matches(h, r, options.collar, options.matching);
  return score_from_counts(m, static_cast<std::int64_t>(h.size()), static_cast<std::int64_t>(r.size()));
}

BoundaryScore boundary_fscore(const BoundarySets& hyp, const BoundarySets& ref, const BoundaryOptions& options) {
  std::int64_t matches = 0, nh = 0, nr = 0;
  for (const auto& [id, r] : ref) {
    const auto it = hyp.find(id);
    if (it == hyp.end()) throw Error("utterance " + id + " has no hypothesis boundaries");
    const auto s = boundary_fscore(it->second, r, options);
    matches += s.matches;
    nh += s.num_hyp;
    nr += s.num_ref;
  }
  return score_from_counts(matches, nh, nr);
}

int LabelVocabulary::intern(const std::string& label) {
  const auto [it, inserted] = ids_.emplace(label, static_cast<int>(ids_.size()));
  return it->second;
}

FrameLabelSequence frame_labels_from_segments(const std::vector<TimedSegment>& segments,
                                              const std::string& utterance_id, Eigen::Index num_frames,
                                              LabelVocabulary& vocab, double hop_seconds,
                                              const std::string& gap_label) {
  FrameLabelSequence out;
  out.utterance_id = utterance_id;
  out.hop_seconds = hop_seconds;
  out.labels.reserve(static_cast<std::size_t>(num_frames));
  std::size_t k = 0;
  for (Eigen::Index t = 0; t < num_frames; ++t) {
    const double centre = (static_cast<double>(t) + 0.5) * hop_seconds;
    while (k < segments.size() && segments[k].end() <= centre) ++k;
    if (k < segments.size() && segments[k].start <= centre)
      out.labels.push_back(vocab.intern(segments[k].label));
    else
      out.labels.push_back(vocab.intern(gap_label));
  }
  return out;
}

EvaluationResult evaluate_transcriptions(const SegmentTable& hyp, const SegmentTable& ref,
                                         const BoundaryOptions& options) {
  if (ref.empty()) throw Error("evaluation: empty reference");
  LabelVocabulary hyp_vocab, ref_vocab;
  FrameLabelSequences hyp_frames, ref_frames;
  BoundarySets hyp_bounds, ref_bounds;
  for (const auto& [id, r] : ref) {
    const auto it = hyp.find(id);
    if (it == hyp.end()) throw Error("utterance " + id + " has no hypothesis transcription");
    ref_frames[id] = frame_labels_from_segments(r, id, frames_covered(r, kHopSeconds), ref_vocab);
    hyp_frames[id] = frame_labels_from_segments(it->second, id, frames_covered(it->second, kHopSeconds), hyp_vocab);
    ref_bounds[id] = boundaries_from_segments(r, id, options.include_edges);
    hyp_bounds[id] = boundaries_from_segments(it->second, id, options.include_edges);
  }
  const auto cm = frame_confusion(hyp_frames, ref_frames);
  EvaluationResult out;
  out.nmi = nmi(cm);
  out.purity = cluster_purity(cm);
  out.frames = cm.total();
  out.boundary = boundary_fscore(hyp_bounds, ref_bounds, options);
  return out;
}

}  // namespace aud
