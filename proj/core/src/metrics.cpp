#include "mesm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace mesm {

namespace {

void check_pairing(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths) {
  if (predictions.empty()) throw MetricsError("empty query set");
  if (predictions.size() != truths.size())
    throw MetricsError("got " + std::to_string(predictions.size()) + " predictions for " +
                       std::to_string(truths.size()) + " queries");
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (predictions[i].qid != truths[i].qid)
      throw MetricsError("query " + std::to_string(i) + ": qid " + predictions[i].qid + " vs " + truths[i].qid);
    if (predictions[i].spans.empty()) throw MetricsError("query " + truths[i].qid + " has no prediction");
    if (truths[i].spans.empty()) throw MetricsError("query " + truths[i].qid + " has no ground truth");
  }
}

double best_iou(const TemporalSpan& s, const std::vector<TemporalSpan>& gts) {
  double best = 0.0;
  for (const auto& g : gts) best = std::max(best, iou_1d(s, g));
  return best;
}

double top1_iou(const QueryPrediction& p, const QueryTruth& t) {
  return best_iou(p.spans[rank_order(p).front()].span, t.spans);
}

std::size_t threshold_index(const std::vector<double>& grid, double mu) {
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (std::abs(grid[i] - mu) < 1e-9) return i;
  throw MetricsError("threshold " + std::to_string(mu) + " not in report");
}

}  // namespace

std::vector<double> map_thresholds() {
  std::vector<double> mus;
  for (int i = 0; i < 10; ++i) mus.push_back((50 + 5 * i) / 100.0);
  return mus;
}

double EvalReport::recall_at(double mu) const { return recall[threshold_index(recall_thresholds, mu)]; }
double EvalReport::map_at(double mu) const { return map[threshold_index(map_thresholds, mu)]; }

std::vector<std::size_t> rank_order(const QueryPrediction& q) {
  for (const auto& s : q.spans)
    if (!std::isfinite(s.score)) throw MetricsError("query " + q.qid + " has an unscored prediction");
  std::vector<std::size_t> order(q.spans.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return q.spans[a].score > q.spans[b].score; });
  return order;
}

double recall_at(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths, double mu) {
  check_pairing(predictions, truths);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) hits += top1_iou(predictions[i], truths[i]) >= mu ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truths.size());
}

double miou(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths) {
  check_pairing(predictions, truths);
  double sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) sum += top1_iou(predictions[i], truths[i]);
  return sum / static_cast<double>(truths.size());
}

double average_precision(const QueryPrediction& prediction, const QueryTruth& truth, double mu) {
  if (truth.spans.empty()) throw MetricsError("query " + truth.qid + " has no ground truth");
  const auto order = rank_order(prediction);
  std::vector<char> claimed(truth.spans.size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const TemporalSpan& s = prediction.spans[order[k]].span;
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < truth.spans.size(); ++g) {
      if (claimed[g]) continue;
      const double iou = iou_1d(s, truth.spans[g]);
      if (iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best >= mu) {
      claimed[best_g] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(truth.spans.size()));
  }
  // Precision envelope from the right, then area over recall steps.
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

double map_at(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths, double mu) {
  check_pairing(predictions, truths);
  double sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) sum += average_precision(predictions[i], truths[i], mu);
  return sum / static_cast<double>(truths.size());
}

double map_avg(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths) {
  double sum = 0.0;
  const auto mus = map_thresholds();
  for (double mu : mus) sum += map_at(predictions, truths, mu);
  return sum / static_cast<double>(mus.size());
}

EvalReport evaluate(const std::vector<QueryPrediction>& predictions, const std::vector<QueryTruth>& truths,
                    const std::vector<double>& recall_thresholds) {
  check_pairing(predictions, truths);
  EvalReport r;
  r.recall_thresholds = recall_thresholds;
  r.map_thresholds = map_thresholds();
  const double n = static_cast<double>(truths.size());
  r.recall.assign(recall_thresholds.size(), 0.0);
  r.map.assign(r.map_thresholds.size(), 0.0);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto order = rank_order(predictions[i]);
    QueryDiagnostics diag;
    diag.qid = truths[i].qid;
    diag.top1 = predictions[i].spans[order.front()].span;
    diag.top1_iou = best_iou(diag.top1, truths[i].spans);
    for (std::size_t t = 0; t < recall_thresholds.size(); ++t)
      r.recall[t] += diag.top1_iou >= recall_thresholds[t] ? 1.0 : 0.0;
    for (std::size_t t = 0; t < r.map_thresholds.size(); ++t) {
      const double ap = average_precision(predictions[i], truths[i], r.map_thresholds[t]);
      r.map[t] += ap;
      diag.ap_avg += ap / static_cast<double>(r.map_thresholds.size());
    }
    r.miou += diag.top1_iou;
    r.per_query.push_back(std::move(diag));
  }
  for (double& v : r.recall) v /= n;
  for (double& v : r.map) v /= n;
  r.miou /= n;
  r.map_avg = std::accumulate(r.map.begin(), r.map.end(), 0.0) / static_cast<double>(r.map.size());
  return r;
}

namespace {

std::string threshold_key(const char* prefix, double mu) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s@%.2f", prefix, mu);
  return buf;
}

}  // namespace

std::string report_to_json(const EvalReport& report, bool include_per_query) {
  nlohmann::ordered_json j;
  for (std::size_t t = 0; t < report.recall_thresholds.size(); ++t)
    j[threshold_key("R1", report.recall_thresholds[t])] = report.recall[t];
  for (std::size_t t = 0; t < report.map_thresholds.size(); ++t)
    j[threshold_key("mAP", report.map_thresholds[t])] = report.map[t];
  j["mAP_avg"] = report.map_avg;
  j["mIoU"] = report.miou;
  j["num_queries"] = report.per_query.size();
  if (include_per_query) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& d : report.per_query) {
      nlohmann::ordered_json row;
      row["qid"] = d.qid;
      row["top1"] = {d.top1.start, d.top1.end};
      row["top1_iou"] = d.top1_iou;
      row["ap_avg"] = d.ap_avg;
      rows.push_back(std::move(row));
    }
    j["per_query"] = std::move(rows);
  }
  return j.dump(2);
}

void write_predictions(const std::filesystem::path& path, const std::vector<QueryPrediction>& predictions) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& q : predictions) {
    nlohmann::ordered_json j;
    j["qid"] = q.qid;
    nlohmann::ordered_json spans = nlohmann::ordered_json::array();
    for (const auto& s : q.spans) spans.push_back({s.span.start, s.span.end, s.score});
    j["spans"] = std::move(spans);
    out << j.dump() << '\n';
  }
}

std::vector<QueryPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<QueryPrediction> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      QueryPrediction q;
      q.qid = j.at("qid").get<std::string>();
      for (const auto& s : j.at("spans")) {
        if (s.size() != 3) throw MetricsError("span entries need [start, end, score]");
        q.spans.push_back({TemporalSpan::seconds(s[0].get<double>(), s[1].get<double>()), s[2].get<double>()});
      }
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw MetricsError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mesm
