#include "mesm_checks/oracles.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <numeric>

namespace mesm::checks {

RasterOverlap raster_overlap(const TemporalSpan& a, const TemporalSpan& b, int cells) {
  const double lo = std::min(a.start, b.start);
  const double hi = std::max(a.end, b.end);
  RasterOverlap out;
  if (hi <= lo) {
    out.iou = 0.0;
    out.giou = 1.0;
    return out;
  }
  const double h = (hi - lo) / cells;
  long in_a = 0, in_b = 0, both = 0, either = 0;
  for (int k = 0; k < cells; ++k) {
    const double x = lo + (k + 0.5) * h;
    const bool ia = x >= a.start && x <= a.end;
    const bool ib = x >= b.start && x <= b.end;
    in_a += ia;
    in_b += ib;
    both += ia && ib;
    either += ia || ib;
  }
  out.iou = either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
  out.giou = out.iou - static_cast<double>(cells - either) / cells;
  return out;
}

double brute_force_assignment(const Eigen::MatrixXd& cost, std::vector<int>* assignment) {
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_choice;
  // Every column subset of size `rows`, then every ordering of it.
  for (unsigned mask = 0; mask < (1u << cols); ++mask) {
    if (std::popcount(mask) != rows) continue;
    std::vector<int> chosen;
    for (int c = 0; c < cols; ++c)
      if (mask & (1u << c)) chosen.push_back(c);
    do {
      double total = 0.0;
      for (int r = 0; r < rows; ++r) total += cost(r, chosen[static_cast<std::size_t>(r)]);
      if (total < best || (total == best && chosen < best_choice)) {
        best = total;
        best_choice = chosen;
      }
    } while (std::next_permutation(chosen.begin(), chosen.end()));
  }
  if (assignment != nullptr) *assignment = best_choice;
  return best;
}

}  // namespace mesm::checks
