// aud/segments.hpp
//
// Time-marked segment files, one segment per line:
//
//   utterance_id start_seconds duration_seconds label
//
// Used for discovered unit transcriptions and for reference phone alignments.

#ifndef AUD_SEGMENTS_HPP_
#define AUD_SEGMENTS_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace aud {

struct TimedSegment {
  double start = 0.0;
  double duration = 0.0;
  std::string label;

  double end() const { return start + duration; }
};

// Segments per utterance, in time order.
using SegmentTable = std::map<std::string, std::vector<TimedSegment>>;

SegmentTable read_segments(const std::filesystem::path& path);
void write_segments(const SegmentTable& table, const std::filesystem::path& path);

}  // namespace aud

#endif  // AUD_SEGMENTS_HPP_
