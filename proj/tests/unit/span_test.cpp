#include <gtest/gtest.h>

#include <random>

#include "mesm/span.hpp"
#include "mesm_checks/oracles.hpp"

namespace mesm {
namespace {

using S = TemporalSpan;

TEST(Iou, HandExamples) {
  EXPECT_DOUBLE_EQ(iou_1d(S::seconds(2, 6), S::seconds(2, 6)), 1.0);
  EXPECT_DOUBLE_EQ(iou_1d(S::seconds(0, 1), S::seconds(2, 3)), 0.0);
  EXPECT_NEAR(iou_1d(S::seconds(2, 6), S::seconds(4, 8)), 2.0 / 6.0, 1e-15);
}

TEST(Iou, ZeroLengthUnionIsZero) {
  EXPECT_EQ(iou_1d(S::seconds(3, 3), S::seconds(3, 3)), 0.0);
}

TEST(Iou, UnitMismatchThrows) {
  EXPECT_THROW(iou_1d(S::seconds(0, 1), S::normalized(0, 1)), std::invalid_argument);
  EXPECT_THROW(giou_1d(S::seconds(0, 1), S::normalized(0, 1)), std::invalid_argument);
}

TEST(Giou, HandExamples) {
  EXPECT_DOUBLE_EQ(giou_1d(S::seconds(2, 6), S::seconds(2, 6)), 1.0);
  EXPECT_DOUBLE_EQ(giou_1d(S::seconds(0, 1), S::seconds(1, 2)), 0.0);
  EXPECT_NEAR(giou_1d(S::seconds(0, 1), S::seconds(2, 3)), -1.0 / 3.0, 1e-15);
}

TEST(Giou, CoincidentPointsReturnOne) {
  EXPECT_EQ(giou_1d(S::seconds(4, 4), S::seconds(4, 4)), 1.0);
}

TEST(Span, RejectsInvertedAndOutOfRange) {
  EXPECT_THROW(S::seconds(5, 4), SpanError);
  EXPECT_THROW(S::normalized(0.2, 1.5), SpanError);
  EXPECT_THROW(S::normalized(-0.1, 0.5), SpanError);
}

TEST(Geometry, MatchesRasterOnRandomPairs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  for (int k = 0; k < 300; ++k) {
    double a0 = u(rng), a1 = u(rng), b0 = u(rng), b1 = u(rng);
    if (a0 > a1) std::swap(a0, a1);
    if (b0 > b1) std::swap(b0, b1);
    const auto r = checks::raster_overlap(S::seconds(a0, a1), S::seconds(b0, b1));
    EXPECT_NEAR(iou_1d(S::seconds(a0, a1), S::seconds(b0, b1)), r.iou, 2e-4);
    EXPECT_NEAR(giou_1d(S::seconds(a0, a1), S::seconds(b0, b1)), r.giou, 2e-4);
  }
}

TEST(Geometry, SymmetricAndBounded) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int k = 0; k < 500; ++k) {
    double a0 = u(rng), a1 = u(rng), b0 = u(rng), b1 = u(rng);
    if (a0 > a1) std::swap(a0, a1);
    if (b0 > b1) std::swap(b0, b1);
    const S a = S::seconds(a0, a1), b = S::seconds(b0, b1);
    EXPECT_EQ(iou_1d(a, b), iou_1d(b, a));
    EXPECT_EQ(giou_1d(a, b), giou_1d(b, a));
    EXPECT_GE(iou_1d(a, b), 0.0);
    EXPECT_LE(iou_1d(a, b), 1.0);
    EXPECT_LE(giou_1d(a, b), iou_1d(a, b) + 1e-15);
    EXPECT_GE(giou_1d(a, b), -1.0);
  }
}

TEST(CenterWidth, Examples) {
  const auto full = to_center_width(S::seconds(0, 10), 10);
  EXPECT_DOUBLE_EQ(full.center, 0.5);
  EXPECT_DOUBLE_EQ(full.width, 1.0);
  const auto cw = to_center_width(S::seconds(2, 6), 10);
  EXPECT_NEAR(cw.center, 0.4, 1e-15);
  EXPECT_NEAR(cw.width, 0.4, 1e-15);
}

TEST(CenterWidth, RoundTrip) {
  const auto back = from_center_width(to_center_width(S::seconds(3.7, 8.1), 12), 12);
  EXPECT_NEAR(back.start, 3.7, 1e-9);
  EXPECT_NEAR(back.end, 8.1, 1e-9);
}

TEST(CenterWidth, ZeroWidthIsClamped) {
  EXPECT_GE(to_center_width(S::seconds(4, 4), 10).width, kMinNormalizedWidth);
}

TEST(CenterWidth, RejectsBadDuration) {
  EXPECT_THROW(to_center_width(S::seconds(0, 1), 0.0), std::invalid_argument);
  EXPECT_THROW(to_center_width(S::seconds(0, 11), 10.0), std::invalid_argument);
}

TEST(FrameSpan, Rounding) {
  // floor of the start, ceil of the end minus one.
  const auto f = to_frame_span(S::seconds(2.0, 6.0), 10.0, 10);
  EXPECT_EQ(f.first, 2);
  EXPECT_EQ(f.last, 5);
  const auto g = to_frame_span(S::seconds(2.5, 6.1), 10.0, 10);
  EXPECT_EQ(g.first, 2);
  EXPECT_EQ(g.last, 6);
  const auto whole = to_frame_span(S::seconds(0, 10), 10.0, 7);
  EXPECT_EQ(whole.first, 0);
  EXPECT_EQ(whole.last, 6);
}

TEST(FrameSpan, AlwaysNonEmpty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int k = 0; k < 1000; ++k) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    const int n = 1 + static_cast<int>(rng() % 40);
    const auto f = to_frame_span(S::seconds(a, b), 30.0, n);
    EXPECT_LE(f.first, f.last);
    EXPECT_GE(f.first, 0);
    EXPECT_LT(f.last, n);
  }
}

}  // namespace
}  // namespace mesm
