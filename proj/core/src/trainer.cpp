#include "mesm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "mesm/optimizer.hpp"

namespace mesm {

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << line << '\n';
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 29;
  return x;
}

void check_dims(const MesmModel<float>& model, const data::Dataset& dataset) {
  const ModelDims& d = model.dims();
  if (dataset.video_dim != d.video_dim || dataset.text_dim != d.text_dim)
    throw std::invalid_argument("dataset features are " + std::to_string(dataset.video_dim) + "/" +
                                std::to_string(dataset.text_dim) + " wide, model expects " +
                                std::to_string(d.video_dim) + "/" + std::to_string(d.text_dim));
  if (dataset.vocab_size > d.vocab_size && model.config().use_fw && model.config().use_mlm)
    throw std::invalid_argument("dataset vocabulary is larger than the model's");
}

}  // namespace

TrainingAborted::TrainingAborted(std::string component, std::int64_t step, std::vector<std::string> qids)
    : std::runtime_error("non-finite " + component + " at step " + std::to_string(step) + " (batch " + join(qids) +
                         ")"),
      component_(std::move(component)),
      step_(step),
      qids_(std::move(qids)) {}

ModelDims dims_of(const data::Dataset& dataset) {
  return ModelDims{dataset.video_dim, dataset.text_dim, dataset.vocab_size};
}

std::string step_log_json(const StepLog& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["l_fw"] = s.l_fw;
  j["l_ss"] = s.l_ss;
  j["l_enc"] = s.l_enc;
  j["l_vmr"] = s.l_vmr;
  j["total"] = s.total;
  j["lr"] = s.lr;
  return j.dump();
}

TrainResult train(const RunConfig& config, const data::Dataset& dataset, const TrainOptions& options) {
  config.validate();
  if (dataset.samples.empty()) throw std::invalid_argument("training set is empty");
  if (options.validation != nullptr && options.validation->samples.empty())
    throw std::invalid_argument("validation split is empty");

  TrainResult result;
  result.model = std::make_unique<MesmModel<float>>(config, dims_of(dataset), config.seed);
  MesmModel<float>& model = *result.model;
  auto& store = model.params();
  AdamW<float> optimizer(store, AdamOptions{config.lr, config.beta1, config.beta2, config.adam_eps,
                                            config.weight_decay});
  std::vector<char> updated(store.size(), 0);

  std::mt19937_64 shuffle_rng(mix(config.seed, 1));
  std::mt19937_64 dropout_rng(mix(config.seed, 2));
  const nn::Context<float> train_ctx{true, static_cast<float>(config.dropout), &dropout_rng};

  std::optional<std::filesystem::path> dir = options.out_dir;
  if (dir) {
    std::filesystem::create_directories(*dir);
    config.save(*dir / "config.txt");
    std::filesystem::remove(*dir / "metrics.jsonl");
    std::filesystem::remove(*dir / "eval.jsonl");
  }

  std::vector<std::size_t> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  std::int64_t step = 0;
  bool stop = false;

  for (int epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t begin = 0; begin < order.size() && !stop; begin += bs) {
      std::vector<data::Sample> samples;
      for (std::size_t k = begin; k < std::min(order.size(), begin + bs); ++k)
        samples.push_back(dataset.samples[order[k]]);
      const data::Batch batch =
          data::make_batch(samples, data::BatchOptions{config.mask_ratio, mix(config.seed, 1000 + step)});

      auto abort = [&](const std::string& component) {
        if (dir) {
          nlohmann::ordered_json dump;
          dump["step"] = step + 1;
          dump["component"] = component;
          dump["qids"] = batch.qids;
          std::ofstream(*dir / "nan_batch.json") << dump.dump(2) << '\n';
        }
        return TrainingAborted(component, step + 1, batch.qids);
      };

      store.zero_grad();
      ForwardResult<float> fwd;
      try {
        fwd = model.forward(batch, train_ctx);
      } catch (const NonFiniteLoss& e) {
        throw abort(e.component());
      }
      ad::backward(fwd.total);

      for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& p = store.entries()[i].second;
        if (!updated[i] && p.has_grad() && p.grad().cwiseAbs().maxCoeff() > 0.0f) updated[i] = 1;
      }
      StepLog s;
      s.step = step + 1;
      s.epoch = epoch;
      s.l_fw = fwd.losses.l_fw.item();
      s.l_ss = fwd.losses.l_ss.item();
      s.l_enc = fwd.losses.l_enc.item();
      s.l_vmr = fwd.losses.l_vmr.item();
      s.total = fwd.total.item();
      s.lr = config.lr;
      s.grad_norm = clip_grad_norm(store, config.grad_clip);
      if (!std::isfinite(s.grad_norm)) throw abort("gradient");
      optimizer.step(store);
      ++step;

      result.log.push_back(s);
      if (dir) append_line(*dir / "metrics.jsonl", step_log_json(s));
      if (options.on_step) options.on_step(s);
      if (config.max_steps > 0 && step >= config.max_steps) stop = true;
    }

    const bool eval_now = options.validation != nullptr &&
                          (epoch % config.eval_every == 0 || epoch == config.epochs || stop);
    if (eval_now) {
      EpochEval ev{epoch, step, evaluate(model, *options.validation, config.batch_size).report};
      result.evals.push_back(ev);
      if (dir) {
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(report_to_json(ev.report));
        j["epoch"] = epoch;
        j["step"] = step;
        append_line(*dir / "eval.jsonl", j.dump());
      }
      if (options.on_eval) options.on_eval(ev);
      if (!result.best || ev.report.map_avg > result.best->report.map_avg) {
        result.best = ev;
        if (dir) save_checkpoint(*dir / "best.ckpt", model, optimizer.state());
      }
      if (options.stop_when && options.stop_when(ev.report)) stop = true;
    }
  }

  for (std::size_t i = 0; i < store.size(); ++i)
    if (!updated[i]) result.never_updated.push_back(store.entries()[i].first);
  result.optimizer = optimizer.state();
  if (dir) save_checkpoint(*dir / "last.ckpt", model, result.optimizer);
  return result;
}

EvalOutput evaluate(const MesmModel<float>& model, const data::Dataset& dataset, int batch_size) {
  if (dataset.samples.empty()) throw std::invalid_argument("evaluation split is empty");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  check_dims(model, dataset);
  ad::NoGradGuard no_grad;
  const nn::Context<float> ctx{false, 0.0f, nullptr};
  EvalOutput out;
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  for (std::size_t begin = 0; begin < dataset.samples.size(); begin += bs) {
    const std::vector<data::Sample> samples(
        dataset.samples.begin() + static_cast<std::ptrdiff_t>(begin),
        dataset.samples.begin() + static_cast<std::ptrdiff_t>(std::min(dataset.samples.size(), begin + bs)));
    const data::Batch batch = data::make_batch(samples);
    const ForwardResult<float> fwd = model.forward(batch, ctx, ForwardOptions{false, false});
    for (int b = 0; b < batch.size(); ++b) {
      const auto bi = static_cast<std::size_t>(b);
      QueryPrediction q;
      q.qid = batch.qids[bi];
      for (const auto& r : model.predictions(fwd, b))
        q.spans.push_back({TemporalSpan{r.span.start * batch.duration[bi], r.span.end * batch.duration[bi],
                                        SpanUnit::kSeconds},
                           r.score});
      out.predictions.push_back(std::move(q));
      out.truths.push_back({batch.qids[bi], batch.gt_seconds[bi]});
    }
  }
  out.report = mesm::evaluate(out.predictions, out.truths);
  return out;
}

void write_eval_artifacts(const std::filesystem::path& dir, const EvalOutput& out) {
  std::filesystem::create_directories(dir);
  write_predictions(dir / "predictions.jsonl", out.predictions);
  std::ofstream(dir / "report.json") << report_to_json(out.report, true) << '\n';
}

}  // namespace mesm
