// aud/metrics.hpp
//
// Frame-level clustering scores (NMI, cluster purity) and boundary F-score
// for discovered unit transcriptions against reference phone alignments.

#ifndef AUD_METRICS_HPP_
#define AUD_METRICS_HPP_

#include "aud/common.hpp"
#include "aud/segments.hpp"

#include <map>
#include <string>
#include <vector>

namespace aud {

struct FrameLabelSequence {
  std::vector<int> labels;
  double hop_seconds = kHopSeconds;
  std::string utterance_id;
};

using FrameLabelSequences = std::map<std::string, FrameLabelSequence>;

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  ConfusionMatrix(Eigen::Index num_hyp, Eigen::Index num_ref);
  explicit ConfusionMatrix(Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts);

  // Grows the matrix when a label is out of range.
  void add(int hyp, int ref, std::int64_t count = 1);
  void merge(const ConfusionMatrix& other);

  const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>& counts() const { return counts_; }
  std::int64_t total() const { return total_; }

 private:
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts_;
  std::int64_t total_ = 0;
};

inline constexpr int kMaxFrameMismatch = 2;

// Pools frame counts over every utterance of `ref`; each must be present in
// `hyp`. Lengths may differ by up to kMaxFrameMismatch frames.
ConfusionMatrix frame_confusion(const FrameLabelSequences& hyp, const FrameLabelSequences& ref);
ConfusionMatrix frame_confusion(const FrameLabelSequence& hyp, const FrameLabelSequence& ref);

// Symmetric NMI in percent: 200 I(U;P) / (H(U) + H(P)).
double nmi(const ConfusionMatrix& cm);

double cluster_purity(const ConfusionMatrix& cm);

struct BoundarySet {
  std::vector<double> times;  // seconds, strictly increasing
  std::string utterance_id;
  bool includes_edges = false;
};

using BoundarySets = std::map<std::string, BoundarySet>;

enum class BoundaryMatching {
  kMaximal,  // earliest feasible partner first; a maximum matching
  kNearest,  // each hypothesis takes the nearest unmatched reference
};

struct BoundaryOptions {
  double collar = 0.02;
  BoundaryMatching matching = BoundaryMatching::kMaximal;
  bool include_edges = false;
};

struct BoundaryScore {
  double precision = 0.0;
  double recall = 0.0;
  double fscore = 0.0;
  std::int64_t matches = 0;
  std::int64_t num_hyp = 0;
  std::int64_t num_ref = 0;
};

// Segment starts and ends, deduplicated. The first start and last end are
// kept only with include_edges.
BoundarySet boundaries_from_segments(const std::vector<TimedSegment>& segments, const std::string& utterance_id,
                                     bool include_edges = false);

std::int64_t count_boundary_matches(const std::vector<double>& hyp, const std::vector<double>& ref, double collar,
                                    BoundaryMatching matching);

BoundaryScore boundary_fscore(const BoundarySet& hyp, const BoundarySet& ref, const BoundaryOptions& options = {});
// Pools matches and counts over the utterances of `ref`.
BoundaryScore boundary_fscore(const BoundarySets& hyp, const BoundarySets& ref, const BoundaryOptions& options = {});

// Assigns dense integer ids to string labels.
class LabelVocabulary {
 public:
  int intern(const std::string& label);
  int size() const { return static_cast<int>(ids_.size()); }

 private:
  std::map<std::string, int> ids_;
};

// Label active at each frame centre (t + 0.5) * hop. Frames outside every
// segment take `gap_label`.
FrameLabelSequence frame_labels_from_segments(const std::vector<TimedSegment>& segments,
                                              const std::string& utterance_id, Eigen::Index num_frames,
                                              LabelVocabulary& vocab, double hop_seconds = kHopSeconds,
                                              const std::string& gap_label = "sil");

struct EvaluationResult {
  double nmi = 0.0;
  double purity = 0.0;
  BoundaryScore boundary;
  std::int64_t frames = 0;
};

// Frame counts per utterance come from the reference: the frame of the last
// reference segment end.
EvaluationResult evaluate_transcriptions(const SegmentTable& hyp, const SegmentTable& ref,
                                         const BoundaryOptions& options = {});

}  // namespace aud

#endif  // AUD_METRICS_HPP_
