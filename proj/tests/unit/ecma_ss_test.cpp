#include <gtest/gtest.h>

#include <random>

#include "mesm/ecma_ss.hpp"
#include "mesm_checks/gradcheck.hpp"

namespace mesm {
namespace {

using MatD = ad::Matrix<double>;
using VarD = ad::Var<double>;

MatD randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

PositiveSet self_only(int n) {
  PositiveSet p;
  for (int i = 0; i < n; ++i) p.members.push_back({i});
  return p;
}

TEST(PoolSentences, MeansOfValidRows) {
  const MatD c = MatD::Constant(3, 4, 2.5);
  MatD uv(2, 4);
  uv << 1, 2, 3, 4, 3, 2, 1, 0;
  const MatD pooled = pool_sentences<double>({VarD(c), VarD(uv)}).value();
  EXPECT_EQ(pooled.row(0), c.row(0));
  EXPECT_TRUE(pooled.row(1).isApprox((uv.row(0) + uv.row(1)) / 2));

  MatD padded(4, 4);
  padded << uv, MatD::Constant(2, 4, std::numeric_limits<double>::quiet_NaN());
  const std::vector<std::vector<bool>> masks = {{true, true, true}, {true, true, false, false}};
  EXPECT_EQ(pool_sentences<double>({VarD(c), VarD(padded)}, &masks).value(), pooled);
}

TEST(PoolSentences, EmptySentenceThrows) {
  const std::vector<std::vector<bool>> masks = {{false, false}};
  EXPECT_THROW(pool_sentences<double>({VarD(MatD::Ones(2, 3))}, &masks), std::invalid_argument);
}

TEST(GenerateComplement, SingleSentenceIsVideoPlusMaskToken) {
  std::mt19937_64 rng(1);
  nn::ParamStore<double> store(1);
  SegmentSentenceMesm<double> ss(store, "ss", 8, 2, 16, 4);
  const VarD frames(randn(rng, 6, 8));
  // With K = 1 the sentence content is replaced entirely, so it cannot matter.
  const MatD a = ss.generate_complement(VarD(randn(rng, 1, 8)), 0, frames, nullptr, {}).value();
  const MatD b = ss.generate_complement(VarD(randn(rng, 1, 8)), 0, frames, nullptr, {}).value();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rows(), 1);
  EXPECT_EQ(ss.blocks().size(), 4u);
}

TEST(GenerateComplement, ZeroOutputProjectionsReturnMaskToken) {
  std::mt19937_64 rng(2);
  nn::ParamStore<double> store(2);
  SegmentSentenceMesm<double> ss(store, "ss", 8, 2, 16, 2);
  for (const auto& [name, p] : store.entries()) {
    if (name.find(".o.") != std::string::npos || name.find("ffn.fc2") != std::string::npos) {
      VarD v = p;
      v.mutable_value().setZero();
    }
  }
  const MatD out = ss.generate_complement(VarD(randn(rng, 3, 8)), 1, VarD(randn(rng, 5, 8)), nullptr, {}).value();
  EXPECT_EQ(out, ss.mask_token().value());
}

TEST(GenerateComplement, IndexOutOfRangeThrows) {
  nn::ParamStore<double> store(3);
  SegmentSentenceMesm<double> ss(store, "ss", 8, 2, 16, 1);
  EXPECT_THROW(ss.generate_complement(VarD(MatD::Ones(2, 8)), 2, VarD(MatD::Ones(3, 8)), nullptr, {}),
               std::out_of_range);
}

TEST(ConcatComplement, PrependsToken) {
  std::mt19937_64 rng(4);
  const MatD comp = randn(rng, 1, 6), words = randn(rng, 5, 6);
  const MatD out = concat_complement(VarD(comp), VarD(words)).value();
  EXPECT_EQ(out.rows(), 6);
  EXPECT_EQ(out.row(0), comp.row(0));
  EXPECT_EQ(out.bottomRows(5), words);
  const auto mask = extend_mask({true, true, true, false});
  EXPECT_EQ(mask.size(), 5u);
  EXPECT_EQ(std::count(mask.begin(), mask.end(), true), 4);
  EXPECT_TRUE(mask.front());
}

TEST(PoolSegment, Examples) {
  std::mt19937_64 rng(5);
  const MatD f = randn(rng, 5, 3);
  EXPECT_EQ(pool_segment(VarD(f), {2, 2}).value().row(0), f.row(2));
  EXPECT_TRUE(pool_segment(VarD(f), {0, 4}).value().isApprox(f.colwise().mean()));
  const MatD axes = MatD::Identity(3, 3);
  MatD want(1, 3);
  want << 0.5, 0.5, 0.0;
  EXPECT_TRUE(pool_segment(VarD(axes), {0, 1}).value().isApprox(want));
  EXPECT_THROW(pool_segment(VarD(axes), {1, 3}), std::out_of_range);
}

TEST(PoolSegment, FramesOutsideTheSpanDoNotMatter) {
  std::mt19937_64 rng(6);
  MatD f = randn(rng, 8, 4);
  const MatD s = pool_segment(VarD(f), {2, 5}).value();
  f.row(0).swap(f.row(7));
  f.row(1).setConstant(100.0);
  EXPECT_EQ(pool_segment(VarD(f), {2, 5}).value(), s);
}

TEST(PositiveSet, Examples) {
  const auto near = build_positive_set({TemporalSpan::seconds(0, 10), TemporalSpan::seconds(0.5, 10)}, {"v", "v"}, 0.9);
  EXPECT_TRUE(near.contains(0, 1));
  EXPECT_TRUE(near.contains(1, 0));
  const auto apart = build_positive_set({TemporalSpan::seconds(0, 10), TemporalSpan::seconds(0, 10)}, {"v", "w"}, 0.9);
  EXPECT_FALSE(apart.contains(0, 1));
  const auto crossed =
      build_positive_set({TemporalSpan::seconds(0, 10), TemporalSpan::seconds(0, 10)}, {"v", "w"}, 0.9, true);
  EXPECT_TRUE(crossed.contains(0, 1));
  const auto one = build_positive_set({TemporalSpan::seconds(1, 2)}, {"v"}, 0.9);
  EXPECT_EQ(one.members, std::vector<std::vector<int>>{{0}});
}

TEST(PositiveSet, SelfIncludedAndSymmetricWithinVideo) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 20);
  std::vector<TemporalSpan> gt;
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    gt.push_back(TemporalSpan::seconds(a, b));
    ids.push_back(i % 3 == 0 ? "x" : "y");
  }
  const auto ps = build_positive_set(gt, ids, 0.2);
  for (int i = 0; i < 30; ++i) {
    EXPECT_TRUE(ps.contains(i, i));
    for (int j = 0; j < 30; ++j) EXPECT_EQ(ps.contains(i, j), ps.contains(j, i));
  }
}

TEST(LossSs, AllPositiveAndSingletonAreZero) {
  std::mt19937_64 rng(8);
  PositiveSet all;
  for (int i = 0; i < 3; ++i) all.members.push_back({0, 1, 2});
  EXPECT_NEAR(loss_ss_from_similarities(VarD(randn(rng, 3, 3)), all).item(), 0.0, 1e-12);
  EXPECT_NEAR(loss_ss<double>({VarD(randn(rng, 4, 5))}, {VarD(randn(rng, 1, 5))}, self_only(1), {}).item(), 0.0,
              1e-12);
}

TEST(LossSs, HandExample) {
  MatD sims(2, 2);
  sims << 2, 0, 0, 2;
  EXPECT_NEAR(loss_ss_from_similarities(VarD(sims), self_only(2)).item(), -std::log(std::exp(2.0) / (std::exp(2.0) + 1)),
              1e-12);
}

TEST(LossSs, NonNegativeAndShiftInvariant) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 50; ++k) {
    const MatD sims = 5.0 * randn(rng, 4, 4);
    const double base = loss_ss_from_similarities(VarD(sims), self_only(4)).item();
    EXPECT_GE(base, 0.0);
    MatD shifted = sims;
    for (int i = 0; i < 4; ++i) shifted.row(i).array() += (i % 2 ? 1e4 : -1e4) * (k + 1) / 50.0;
    EXPECT_NEAR(loss_ss_from_similarities(VarD(shifted), self_only(4)).item(), base, 1e-9);
  }
}

TEST(LossSs, RejectsNonPositiveTau) {
  EXPECT_THROW(loss_ss<double>({VarD(MatD::Ones(1, 2))}, {VarD(MatD::Ones(1, 2))}, self_only(1),
                               ContrastiveOptions{0.0, true, true}),
               std::invalid_argument);
}

TEST(LossSs, SharpensAsTemperatureDrops) {
  std::mt19937_64 rng(10);
  std::vector<VarD> q, s;
  for (int i = 0; i < 3; ++i) {
    const MatD seg = randn(rng, 1, 6);
    s.push_back(VarD(seg));
    q.push_back(VarD(seg.replicate(2, 1) + 0.1 * randn(rng, 2, 6)));
  }
  // Each query sits closest to its own segment.
  const MatD sims = contrastive_similarities(q, s, ContrastiveOptions{1.0, true, true}).value();
  for (int i = 0; i < 3; ++i) {
    Eigen::Index arg;
    sims.row(i).maxCoeff(&arg);
    ASSERT_EQ(arg, i);
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double tau : {2.0, 1.0, 0.5, 0.2, 0.1, 0.07, 0.03}) {
    const double l = loss_ss(q, s, self_only(3), ContrastiveOptions{tau, true, true}).item();
    EXPECT_LE(l, prev + 1e-12) << tau;
    prev = l;
  }
}

TEST(LossSs, MeanAndSumAggregation) {
  std::mt19937_64 rng(11);
  const std::vector<VarD> q = {VarD(randn(rng, 3, 4)), VarD(randn(rng, 5, 4))};
  const std::vector<VarD> s = {VarD(randn(rng, 1, 4)), VarD(randn(rng, 1, 4))};
  const MatD mean = contrastive_similarities(q, s, ContrastiveOptions{1.0, true, true}).value();
  const MatD sum = contrastive_similarities(q, s, ContrastiveOptions{1.0, true, false}).value();
  EXPECT_TRUE(sum.row(0).isApprox(3 * mean.row(0)));
  EXPECT_TRUE(sum.row(1).isApprox(5 * mean.row(1)));
}

TEST(LossSs, GradientThroughComplement) {
  std::mt19937_64 rng(12);
  nn::ParamStore<double> store(12);
  SegmentSentenceMesm<double> ss(store, "ss", 8, 2, 16, 2);
  for (const auto& [name, p] : store.entries()) {
    VarD v = p;
    v.mutable_value() += 0.3 * randn(rng, v.rows(), v.cols());
  }
  const VarD pooled(randn(rng, 3, 8), true), frames(randn(rng, 6, 8), true), words(randn(rng, 4, 8), true);
  const VarD frames2(randn(rng, 5, 8), true);
  auto loss = [&] {
    const VarD q0 = concat_complement(ss.generate_complement(pooled, 1, frames, nullptr, {}), words);
    const VarD q1 = concat_complement(ss.generate_complement(pooled, 2, frames2, nullptr, {}), words);
    return loss_ss<double>({q0, q1}, {pool_segment(frames, {1, 3}), pool_segment(frames2, {0, 2})}, self_only(2),
                           ContrastiveOptions{0.1, true, true});
  };
  std::vector<checks::NamedVar> params(store.entries().begin(), store.entries().end());
  params.push_back({"pooled", pooled});
  params.push_back({"frames", frames});
  params.push_back({"words", words});
  EXPECT_LT(checks::check_gradients(params, loss).rel_error, 1e-4);
}

}  // namespace
}  // namespace mesm
