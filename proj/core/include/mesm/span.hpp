#pragma once

// 1-D temporal interval algebra shared by every other module.
// All interval math is double precision regardless of model precision.

#include <stdexcept>
#include <string>

namespace mesm {

enum class SpanUnit { kSeconds, kNormalized };

/// Closed interval [start, end] on a video timeline.
struct TemporalSpan {
  double start = 0.0;
  double end = 0.0;
  SpanUnit unit = SpanUnit::kSeconds;

  double length() const { return end - start; }

  static TemporalSpan seconds(double s, double e) { return make(s, e, SpanUnit::kSeconds); }
  static TemporalSpan normalized(double s, double e) { return make(s, e, SpanUnit::kNormalized); }

  /// Throws std::invalid_argument when start > end or a normalized span leaves [0,1].
  static TemporalSpan make(double s, double e, SpanUnit unit);
};

/// Normalized (center, width) form used by the decoder.
struct CenterWidthSpan {
  double center = 0.5;
  double width = 1.0;
};

/// Inclusive frame-feature indices [first, last]; covers last + 1 - first frames.
struct FrameIndexSpan {
  int first = 0;
  int last = 0;

  int frame_count() const { return last + 1 - first; }
  bool contains(int j) const { return j >= first && j <= last; }
};

/// Smallest width a normalized span may have.
inline constexpr double kMinNormalizedWidth = 1e-4;

class SpanError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

double iou_1d(const TemporalSpan& a, const TemporalSpan& b);

/// IoU minus the fraction of the enclosing span not covered by either input.
/// Two coincident zero-length spans return 1.
double giou_1d(const TemporalSpan& a, const TemporalSpan& b);

CenterWidthSpan to_center_width(const TemporalSpan& s, double duration);
TemporalSpan from_center_width(const CenterWidthSpan& cw, double duration);

/// Second-valued span to inclusive frame indices on a grid of `num_frames`
/// equal cells over [0, duration].
FrameIndexSpan to_frame_span(const TemporalSpan& s, double duration, int num_frames);

std::string to_string(const TemporalSpan& s);

}  // namespace mesm
