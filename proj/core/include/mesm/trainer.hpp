#pragma once

// Training loop, evaluation, and run artifacts.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mesm/checkpoint.hpp"
#include "mesm/config.hpp"
#include "mesm/data.hpp"
#include "mesm/metrics.hpp"
#include "mesm/model.hpp"

namespace mesm {

/// A loss went non-finite. `component` names it; `qids` lists the batch.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::string component, std::int64_t step, std::vector<std::string> qids);
  const std::string& component() const { return component_; }
  std::int64_t step() const { return step_; }
  const std::vector<std::string>& qids() const { return qids_; }

 private:
  std::string component_;
  std::int64_t step_;
  std::vector<std::string> qids_;
};

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  double l_fw = 0.0;
  double l_ss = 0.0;
  double l_enc = 0.0;
  double l_vmr = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct EpochEval {
  int epoch = 0;
  std::int64_t step = 0;
  EvalReport report;
};

struct TrainOptions {
  /// Artifacts go here when set: metrics.jsonl, eval.jsonl, config.txt,
  /// last.ckpt and, with a validation set, best.ckpt.
  std::optional<std::filesystem::path> out_dir;
  const data::Dataset* validation = nullptr;
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EpochEval&)> on_eval;
  /// Stop once this evaluation (on `validation`) is reached; useful for the
  /// memorization check. Checked after every eval pass.
  std::function<bool(const EvalReport&)> stop_when;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::vector<EpochEval> evals;
  std::optional<EpochEval> best;
  std::vector<std::string> never_updated;  // parameters whose gradient was always zero
  std::unique_ptr<MesmModel<float>> model;
  AdamState<float> optimizer;
};

ModelDims dims_of(const data::Dataset& dataset);

/// Deterministic for fixed (config, dataset); single-threaded.
TrainResult train(const RunConfig& config, const data::Dataset& dataset, const TrainOptions& options = {});

struct EvalOutput {
  EvalReport report;
  std::vector<QueryPrediction> predictions;  // seconds
  std::vector<QueryTruth> truths;
};

/// Dropout off, gradients off. Throws on an empty dataset or when feature
/// dims differ from the model's.
EvalOutput evaluate(const MesmModel<float>& model, const data::Dataset& dataset, int batch_size = 16);

/// Writes the prediction file and report JSON into `dir`.
void write_eval_artifacts(const std::filesystem::path& dir, const EvalOutput& out);

std::string step_log_json(const StepLog& s);

}  // namespace mesm
