#pragma once

// Top-1 recall, mean IoU and average precision over ranked span lists.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mesm/span.hpp"

namespace mesm {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScoredSpan {
  TemporalSpan span;
  double score = 0.0;  // NaN marks an unscored prediction
};

/// Predictions in any order; they are ranked by score, ties by position.
struct QueryPrediction {
  std::string qid;
  std::vector<ScoredSpan> spans;
};

struct QueryTruth {
  std::string qid;
  std::vector<TemporalSpan> spans;
};

struct QueryDiagnostics {
  std::string qid;
  TemporalSpan top1;
  double top1_iou = 0.0;
  double ap_avg = 0.0;
};

struct EvalReport {
  std::vector<double> recall_thresholds;
  std::vector<double> recall;
  std::vector<double> map_thresholds;
  std::vector<double> map;
  double map_avg = 0.0;
  double miou = 0.0;
  std::vector<QueryDiagnostics> per_query;

  /// R1 at `mu`; throws when `mu` was not requested.
  double recall_at(double mu) const;
  double map_at(double mu) const;
};

/// 0.50, 0.55, ..., 0.95.
std::vector<double> map_thresholds();
inline const std::vector<double> kDefaultRecallThresholds = {0.3, 0.5, 0.7};

/// Indices of `q.spans` ordered by descending score, ties by index. Throws
/// on an unscored prediction.
std::vector<std::size_t> rank_order(const QueryPrediction& q);

double recall_at(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths, double mu);
double miou(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths);

/// Greedy claiming down the ranked list, all-point interpolated area under
/// the precision-recall curve.
double average_precision(const QueryPrediction& prediction, const QueryTruth& truth, double mu);
double map_at(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths, double mu);
double map_avg(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths);

/// Predictions and truths are paired by position and must agree on qid.
EvalReport evaluate(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths,
                    const std::vector<double>& recall_thresholds = kDefaultRecallThresholds);

/// Brute-force evaluator written independently of the functions above.
/// Limited to 20 queries of at most 20 predictions.
EvalReport oracle_evaluate(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths,
                           const std::vector<double>& recall_thresholds = kDefaultRecallThresholds);

/// JSON with a fixed key order.
std::string report_to_json(const EvalReport& report, bool include_per_query = false);

/// One JSON object per line: {"qid": ..., "spans": [[start_s, end_s, score], ...]}.
void write_predictions(const std::filesystem::path& path, const std::vector<QueryPrediction>& predictions);
std::vector<QueryPrediction> read_predictions(const std::filesystem::path& path);

}  // namespace mesm
