#pragma once

// One-to-one assignment between predicted spans and ground-truth moments.

#include <vector>

#include <Eigen/Dense>

#include "mesm/span.hpp"

namespace mesm {

struct MatchWeights {
  double l1 = 10.0;
  double iou = 1.0;
  double ce = 4.0;
};

/// cost(g, p) = l1 * |p - g|_1 over (center, width)
///            + iou * (1 - giou(p, g)) - ce * fg_prob(p).
/// Rows are ground truths, columns predictions.
Eigen::MatrixXd matching_cost(const std::vector<CenterWidthSpan>& predictions, const std::vector<double>& fg_prob,
                              const std::vector<CenterWidthSpan>& truths, const MatchWeights& weights);

/// Minimum-cost injection of rows into columns by enumeration. Among equal
/// totals the lexicographically smallest column vector wins.
std::vector<int> assign_exhaustive(const Eigen::MatrixXd& cost);

/// Minimum-cost injection of rows into columns with the Hungarian method
/// (shortest augmenting paths with potentials), O(rows^2 * cols).
std::vector<int> assign_hungarian(const Eigen::MatrixXd& cost);

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& assignment);

/// Enumeration below 6 ground truths, Hungarian otherwise. Returns the
/// prediction index for each ground truth. Throws when there are more
/// ground truths than predictions. Non-finite costs are treated as worse
/// than every finite one, so the result is always a full injection.
std::vector<int> match(const Eigen::MatrixXd& cost);

inline constexpr int kExhaustiveMatchLimit = 6;

}  // namespace mesm
