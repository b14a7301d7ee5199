// Hot paths: masked attention, one optimizer step of the full model,
// span matching, metric evaluation and the subspace probe.

#include <benchmark/benchmark.h>

#include <random>

#include "mesm/analysis.hpp"
#include "mesm/autograd.hpp"
#include "mesm/matching.hpp"
#include "mesm/metrics.hpp"
#include "mesm/model.hpp"
#include "mesm/optimizer.hpp"
#include "mesm_checks/criteria.hpp"
#include "mesm_checks/fixtures.hpp"

namespace {

using namespace mesm;

ad::Matrix<float> randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<float> n;
  ad::Matrix<float> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Lq = Lk = range(0), width 256, 8 heads; every 4th key masked.
void BM_AttentionForward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto n = state.range(0);
  const ad::Var<float> q(randn(rng, n, 256)), k(randn(rng, n, 256)), v(randn(rng, n, 256));
  std::vector<bool> mask(static_cast<std::size_t>(n), true);
  for (std::size_t i = 3; i < mask.size(); i += 4) mask[i] = false;
  ad::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ad::attention(q, k, v, 8, &mask).value().data());
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_AttentionForward)->Arg(32)->Arg(75)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_AttentionBackward(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto n = state.range(0);
  const ad::Var<float> q(randn(rng, n, 256), true), k(randn(rng, n, 256), true), v(randn(rng, n, 256), true);
  for (auto _ : state) {
    ad::backward(ad::sum_all(ad::attention(q, k, v, 8, nullptr)));
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(32)->Arg(75)->Unit(benchmark::kMicrosecond);

// Forward, backward and AdamW on one batch of the generalization data shape
// (32 frames, 4 sentences per video), desk width.
void BM_TrainStep(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const int hidden = static_cast<int>(state.range(0));
  const data::Dataset ds = checks::random_dataset(rng, 4, checks::RandomShape{32, 32, 6, 12, 4, 4}, 64, 64, 100);
  RunConfig c = checks::generalization_config();
  c.hidden_dim = hidden;
  c.ffn_dim = 4 * hidden;
  MesmModel<float> model(c, ModelDims{64, 64, 100}, 1);
  AdamW<float> opt(model.params(), AdamOptions{});
  std::vector<data::Sample> samples(ds.samples.begin(), ds.samples.begin() + 16);
  const data::Batch batch = data::make_batch(samples, data::BatchOptions{c.mask_ratio, 1});
  std::mt19937_64 drop_rng(4);
  const nn::Context<float> ctx{true, 0.1f, &drop_rng};
  for (auto _ : state) {
    model.params().zero_grad();
    const auto r = model.forward(batch, ctx);
    ad::backward(r.total);
    clip_grad_norm(model.params(), c.grad_clip);
    opt.step(model.params());
  }
  state.SetItemsProcessed(state.iterations() * batch.size());
}
BENCHMARK(BM_TrainStep)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Hungarian(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const auto n = state.range(0);
  const Eigen::MatrixXd cost = randn(rng, n, 2 * n).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(assign_hungarian(cost).data());
}
BENCHMARK(BM_Hungarian)->Arg(6)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_Exhaustive(benchmark::State& state) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd cost = randn(rng, state.range(0), 10).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(assign_exhaustive(cost).data());
}
BENCHMARK(BM_Exhaustive)->DenseRange(1, 5)->Unit(benchmark::kMicrosecond);

// range(0) queries, 10 ranked predictions and 1-3 truths each.
void BM_Evaluate(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  std::vector<QueryPrediction> preds;
  std::vector<QueryTruth> truths;
  for (int q = 0; q < state.range(0); ++q) {
    const std::string id = "q" + std::to_string(q);
    QueryPrediction p{id, {}};
    for (int k = 0; k < 10; ++k) {
      const double a = u(rng), b = u(rng);
      p.spans.push_back({TemporalSpan{std::min(a, b), std::max(a, b) + 0.1, SpanUnit::kSeconds}, u(rng)});
    }
    QueryTruth t{id, {}};
    for (int g = 0; g < 1 + q % 3; ++g) {
      const double a = u(rng), b = u(rng);
      t.spans.push_back(TemporalSpan{std::min(a, b), std::max(a, b) + 0.1, SpanUnit::kSeconds});
    }
    preds.push_back(std::move(p));
    truths.push_back(std::move(t));
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(preds, truths).map_avg);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Evaluate)->Arg(100)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_SubspaceProbe(benchmark::State& state) {
  std::mt19937_64 rng(8);
  const auto d = state.range(0);
  const Eigen::MatrixXd t = randn(rng, 12, d).cast<double>(), te = randn(rng, 13, d).cast<double>();
  const Eigen::MatrixXd f = randn(rng, 75, d).cast<double>(), fe = randn(rng, 75, d).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(subspace_probe("q", t, te, f, fe, {10, 40}).curves.size());
}
BENCHMARK(BM_SubspaceProbe)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
