#include "mesm/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mesm {

namespace {

TemporalSpan as_interval(const CenterWidthSpan& cw) {
  return TemporalSpan{cw.center - cw.width / 2.0, cw.center + cw.width / 2.0, SpanUnit::kNormalized};
}

void check_shape(const Eigen::MatrixXd& cost) {
  if (cost.rows() > cost.cols()) {
    throw std::invalid_argument("match: " + std::to_string(cost.rows()) + " ground truths but only " +
                                std::to_string(cost.cols()) + " predictions");
  }
}

}  // namespace

Eigen::MatrixXd matching_cost(const std::vector<CenterWidthSpan>& predictions, const std::vector<double>& fg_prob,
                              const std::vector<CenterWidthSpan>& truths, const MatchWeights& weights) {
  if (predictions.size() != fg_prob.size()) throw std::invalid_argument("matching_cost: one probability per span");
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(truths.size()), static_cast<Eigen::Index>(predictions.size()));
  for (std::size_t g = 0; g < truths.size(); ++g) {
    for (std::size_t p = 0; p < predictions.size(); ++p) {
      const double l1 = std::abs(predictions[p].center - truths[g].center) +
                        std::abs(predictions[p].width - truths[g].width);
      const double giou = giou_1d(as_interval(predictions[p]), as_interval(truths[g]));
      cost(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(p)) =
          weights.l1 * l1 + weights.iou * (1.0 - giou) - weights.ce * fg_prob[p];
    }
  }
  return cost;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& assignment) {
  double total = 0.0;
  for (std::size_t g = 0; g < assignment.size(); ++g) total += cost(static_cast<Eigen::Index>(g), assignment[g]);
  return total;
}

std::vector<int> assign_exhaustive(const Eigen::MatrixXd& cost) {
  check_shape(cost);
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  std::vector<int> best;
  double best_total = std::numeric_limits<double>::infinity();
  std::vector<int> current(static_cast<std::size_t>(rows), -1);
  std::vector<char> used(static_cast<std::size_t>(cols), 0);

  auto search = [&](auto&& self, int row, double total) -> void {
    if (row == rows) {
      if (total < best_total) {
        best_total = total;
        best = current;
      }
      return;
    }
    for (int c = 0; c < cols; ++c) {
      if (used[static_cast<std::size_t>(c)]) continue;
      used[static_cast<std::size_t>(c)] = 1;
      current[static_cast<std::size_t>(row)] = c;
      self(self, row + 1, total + cost(row, c));
      used[static_cast<std::size_t>(c)] = 0;
    }
  };
  search(search, 0, 0.0);
  return best;
}

std::vector<int> assign_hungarian(const Eigen::MatrixXd& cost) {
  check_shape(cost);
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<double> v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> row_of_col(static_cast<std::size_t>(m + 1), 0);
  std::vector<int> way(static_cast<std::size_t>(m + 1), 0);
  for (int i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = row_of_col[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(row_of_col[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (row_of_col[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      row_of_col[static_cast<std::size_t>(j0)] = row_of_col[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    const int r = row_of_col[static_cast<std::size_t>(j)];
    if (r != 0) assignment[static_cast<std::size_t>(r - 1)] = j - 1;
  }
  return assignment;
}

std::vector<int> match(const Eigen::MatrixXd& cost) {
  check_shape(cost);
  if (!cost.allFinite()) {
    // NaN predictions still get a complete assignment; the loss then goes
    // non-finite and the caller reports it.
    double worst = 0.0;
    for (Eigen::Index i = 0; i < cost.size(); ++i)
      if (std::isfinite(cost.data()[i])) worst = std::max(worst, std::abs(cost.data()[i]));
    const Eigen::MatrixXd safe = cost.unaryExpr([&](double c) { return std::isfinite(c) ? c : 2.0 * worst + 1.0; });
    return match(safe);
  }
  return cost.rows() < kExhaustiveMatchLimit ? assign_exhaustive(cost) : assign_hungarian(cost);
}

}  // namespace mesm
