#pragma once

// Brute-force references.

#include <vector>

#include <Eigen/Dense>

#include "mesm/span.hpp"

namespace mesm::checks {

struct RasterOverlap {
  double iou = 0.0;
  double giou = 0.0;
};

/// IoU and gIoU by counting cell centers on a grid of `cells` cells laid
/// over the smallest interval enclosing both spans.
RasterOverlap raster_overlap(const TemporalSpan& a, const TemporalSpan& b, int cells = 10000);

/// Minimum over all injections of rows into columns, enumerated as column
/// subsets times their permutations. Returns the best total; `assignment`
/// receives the lexicographically smallest minimizer. At most 31 columns.
double brute_force_assignment(const Eigen::MatrixXd& cost, std::vector<int>* assignment = nullptr);

}  // namespace mesm::checks
