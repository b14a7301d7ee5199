// Independent evaluator. Deliberately shares no code with metrics.cpp: its
// own overlap arithmetic, ranking by repeated selection, and AP as the mean
// over hits of the best precision at or after each hit.

#include <cmath>
#include <string>
#include <vector>

#include "mesm/metrics.hpp"

namespace mesm {

namespace {

constexpr std::size_t kOracleMaxQueries = 20;
constexpr std::size_t kOracleMaxPredictions = 20;

double overlap_ratio(double a0, double a1, double b0, double b1) {
  const double lo = a0 > b0 ? a0 : b0;
  const double hi = a1 < b1 ? a1 : b1;
  const double inter = hi > lo ? hi - lo : 0.0;
  const double uni = (a1 - a0) + (b1 - b0) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Highest score first; among equal scores the earliest entry.
std::vector<std::size_t> selection_rank(const std::vector<ScoredSpan>& spans) {
  std::vector<std::size_t> out;
  std::vector<bool> taken(spans.size(), false);
  for (std::size_t round = 0; round < spans.size(); ++round) {
    std::size_t pick = spans.size();
    for (std::size_t i = 0; i < spans.size(); ++i) {
      if (taken[i]) continue;
      if (pick == spans.size() || spans[i].score > spans[pick].score) pick = i;
    }
    taken[pick] = true;
    out.push_back(pick);
  }
  return out;
}

double oracle_ap(const std::vector<ScoredSpan>& spans, const std::vector<std::size_t>& rank,
                 const std::vector<TemporalSpan>& gts, double mu) {
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> hit(rank.size(), false);
  for (std::size_t k = 0; k < rank.size(); ++k) {
    const ScoredSpan& p = spans[rank[k]];
    int choice = -1;
    double choice_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double v = overlap_ratio(p.span.start, p.span.end, gts[g].start, gts[g].end);
      if (choice < 0 || v > choice_iou) {
        choice = static_cast<int>(g);
        choice_iou = v;
      }
    }
    if (choice >= 0 && choice_iou >= mu) {
      used[static_cast<std::size_t>(choice)] = true;
      hit[k] = true;
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < rank.size(); ++k) {
    if (!hit[k]) continue;
    double best_precision = 0.0;
    for (std::size_t j = k; j < rank.size(); ++j) {
      std::size_t hits_to_j = 0;
      for (std::size_t t = 0; t <= j; ++t) hits_to_j += hit[t] ? 1 : 0;
      const double precision = static_cast<double>(hits_to_j) / static_cast<double>(j + 1);
      if (precision > best_precision) best_precision = precision;
    }
    total += best_precision;
  }
  return total / static_cast<double>(gts.size());
}

}  // namespace

EvalReport oracle_evaluate(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths,
                           const std::vector<double>& recall_thresholds) {
  if (truths.empty()) throw MetricsError("oracle: empty query set");
  if (truths.size() > kOracleMaxQueries) throw MetricsError("oracle: more than 20 queries");
  if (predictions.size() != truths.size()) throw MetricsError("oracle: predictions and queries differ in count");

  EvalReport r;
  r.recall_thresholds = recall_thresholds;
  for (int step = 0; step < 10; ++step) r.map_thresholds.push_back((50.0 + 5.0 * step) / 100.0);
  r.recall = std::vector<double>(recall_thresholds.size(), 0.0);
  r.map = std::vector<double>(r.map_thresholds.size(), 0.0);

  const double n = static_cast<double>(truths.size());
  for (std::size_t q = 0; q < truths.size(); ++q) {
    const auto& pred = predictions[q];
    const auto& gts = truths[q].spans;
    if (pred.qid != truths[q].qid) throw MetricsError("oracle: qid mismatch at query " + std::to_string(q));
    if (pred.spans.empty() || gts.empty()) throw MetricsError("oracle: query " + pred.qid + " is empty");
    if (pred.spans.size() > kOracleMaxPredictions) throw MetricsError("oracle: more than 20 predictions");
    for (const auto& s : pred.spans)
      if (std::isnan(s.score) || std::isinf(s.score)) throw MetricsError("oracle: unscored prediction");

    const auto rank = selection_rank(pred.spans);
    const ScoredSpan& top = pred.spans[rank[0]];
    double top_iou = 0.0;
    for (const auto& g : gts) {
      const double v = overlap_ratio(top.span.start, top.span.end, g.start, g.end);
      if (v > top_iou) top_iou = v;
    }

    QueryDiagnostics d;
    d.qid = pred.qid;
    d.top1 = top.span;
    d.top1_iou = top_iou;
    for (std::size_t t = 0; t < recall_thresholds.size(); ++t)
      if (top_iou >= recall_thresholds[t]) r.recall[t] += 1.0 / n;
    for (std::size_t t = 0; t < r.map_thresholds.size(); ++t) {
      const double ap = oracle_ap(pred.spans, rank, gts, r.map_thresholds[t]);
      r.map[t] += ap / n;
      d.ap_avg += ap / 10.0;
    }
    r.miou += top_iou / n;
    r.per_query.push_back(d);
  }
  double sum = 0.0;
  for (double v : r.map) sum += v;
  r.map_avg = sum / 10.0;
  return r;
}

}  // namespace mesm
