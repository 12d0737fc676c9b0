// src/segments.cpp

#include "aud/segments.hpp"

#include "aud/common.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace aud {

SegmentTable read_segments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open segment file " + path.string());
  SegmentTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string id;
    if (!(ss >> id) || id[0] == '#') continue;
    TimedSegment seg;
    if (!(ss >> seg.start >> seg.duration >> seg.label))
      throw ParseError(path.string(), line_no, "expected: utterance_id start duration label");
    if (seg.duration < 0.0 || seg.start < 0.0)
      throw ParseError(path.string(), line_no, "negative start or duration");
    table[id].push_back(std::move(seg));
  }
  for (auto& [id, segs] : table)
    std::stable_sort(segs.begin(), segs.end(),
                     [](const TimedSegment& a, const TimedSegment& b) { return a.start < b.start; });
  return table;
}

void write_segments(const SegmentTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write segment file " + path.string());
  out << std::fixed << std::setprecision(2);
  for (const auto& [id, segs] : table)
    for (const auto& s : segs) out << id << ' ' << s.start << ' ' << s.duration << ' ' << s.label << '\n';
}

}  // namespace aud
