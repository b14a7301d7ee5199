#include "mesm/span.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mesm {

TemporalSpan TemporalSpan::make(double s, double e, SpanUnit unit) {
  if (!std::isfinite(s) || !std::isfinite(e)) throw SpanError("span endpoints must be finite");
  if (s > e) throw SpanError("span start exceeds end: " + std::to_string(s) + " > " + std::to_string(e));
  if (unit == SpanUnit::kNormalized && (s < 0.0 || e > 1.0)) {
    throw SpanError("normalized span outside [0,1]");
  }
  return TemporalSpan{s, e, unit};
}

namespace {

void require_same_unit(const TemporalSpan& a, const TemporalSpan& b) {
  if (a.unit != b.unit) throw SpanError("span unit mismatch");
}

}  // namespace

double iou_1d(const TemporalSpan& a, const TemporalSpan& b) {
  require_same_unit(a, b);
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou_1d(const TemporalSpan& a, const TemporalSpan& b) {
  require_same_unit(a, b);
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  const double hull = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (hull <= 0.0) return 1.0;
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  return iou - (hull - uni) / hull;
}

CenterWidthSpan to_center_width(const TemporalSpan& s, double duration) {
  if (!(duration > 0.0)) throw SpanError("duration must be positive");
  if (s.unit == SpanUnit::kNormalized) {
    return {(s.start + s.end) / 2.0, std::max(s.end - s.start, kMinNormalizedWidth)};
  }
  if (s.start < 0.0 || s.end > duration) throw SpanError("span exceeds duration: " + to_string(s));
  return {(s.start + s.end) / (2.0 * duration), std::max((s.end - s.start) / duration, kMinNormalizedWidth)};
}

TemporalSpan from_center_width(const CenterWidthSpan& cw, double duration) {
  if (!(duration > 0.0)) throw SpanError("duration must be positive");
  const double half = cw.width / 2.0;
  return TemporalSpan{(cw.center - half) * duration, (cw.center + half) * duration, SpanUnit::kSeconds};
}

FrameIndexSpan to_frame_span(const TemporalSpan& s, double duration, int num_frames) {
  if (num_frames < 1) throw SpanError("num_frames must be >= 1");
  if (!(duration > 0.0)) throw SpanError("duration must be positive");
  const double scale = s.unit == SpanUnit::kSeconds ? static_cast<double>(num_frames) / duration
                                                    : static_cast<double>(num_frames);
  // Tolerance absorbs round-off when endpoints sit exactly on frame boundaries.
  constexpr double kSnap = 1e-9;
  int first = static_cast<int>(std::floor(s.start * scale + kSnap));
  int last = std::min(num_frames - 1, static_cast<int>(std::ceil(s.end * scale - kSnap)) - 1);
  first = std::clamp(first, 0, num_frames - 1);
  last = std::max(last, first);
  return {first, last};
}

std::string to_string(const TemporalSpan& s) {
  std::ostringstream os;
  os << "(" << s.start << ", " << s.end << (s.unit == SpanUnit::kSeconds ? " s)" : " norm)");
  return os.str();
}

}  // namespace mesm
