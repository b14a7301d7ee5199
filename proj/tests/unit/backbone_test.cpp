#include <gtest/gtest.h>

#include <random>

#include "mesm/backbone.hpp"
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

TEST(Projection, ShapesAndDeterminism) {
  std::mt19937_64 rng(1);
  nn::ParamStore<double> store(1);
  FeatureProjection<double> proj(store, "proj", 300, 300, 256);
  const VarD v(randn(rng, 7, 300)), w(randn(rng, 4, 300));
  const auto [pv, pw] = proj(v, w, {});
  EXPECT_EQ(pv.cols(), 256);
  EXPECT_EQ(pv.rows(), 7);
  EXPECT_EQ(pw.rows(), 4);
  EXPECT_EQ(proj(v, w, {}).first.value(), pv.value());
  const auto [zv, zw] = proj(VarD(MatD::Zero(2, 300)), VarD(MatD::Zero(2, 300)), {});
  EXPECT_TRUE(zv.value().allFinite());
  EXPECT_EQ(zv.value().row(0), zv.value().row(1));
}

TEST(Projection, WidthMismatchThrows) {
  nn::ParamStore<double> store(2);
  FeatureProjection<double> proj(store, "proj", 6, 5, 8);
  EXPECT_THROW(proj(VarD(MatD::Ones(2, 5)), VarD(MatD::Ones(2, 5)), {}), std::invalid_argument);
  EXPECT_THROW(proj(VarD(MatD::Ones(2, 6)), VarD(MatD::Ones(2, 6)), {}), std::invalid_argument);
}

TEST(Aligner, ShapeFollowsVideo) {
  std::mt19937_64 rng(3);
  nn::ParamStore<double> store(3);
  ModalityAligner<double> ma(store, "ma", 8, 2, 16, 2);
  EXPECT_EQ(ma.blocks().size(), 2u);
  for (int lw : {1, 3, 9})
    EXPECT_EQ(ma(VarD(randn(rng, 5, 8)), VarD(randn(rng, lw, 8)), nullptr, {}).value().rows(), 5);
}

TEST(Aligner, SingleValidTokenIsOneHotAttention) {
  std::mt19937_64 rng(4);
  nn::ParamStore<double> store(4);
  ModalityAligner<double> ma(store, "ma", 8, 2, 16, 1);
  const auto& block = ma.blocks()[0];
  const VarD video(randn(rng, 4, 8));
  MatD words = randn(rng, 3, 8);
  const std::vector<bool> mask = {false, false, true};
  const MatD out = ma(video, VarD(words), &mask, {}).value();
  const VarD token(MatD(words.row(2)));
  const VarD attended = block.attn.wo(block.attn.wv(token));
  const MatD update = block.mlp(block.norm(attended), {}).value();
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_TRUE(out.row(i).isApprox(video.value().row(i) + update.row(0), 1e-12));
}

TEST(Encoder, SingleFrameAndMaskContract) {
  std::mt19937_64 rng(5);
  nn::ParamStore<double> store(5);
  Encoder<double> enc(store, "enc", 8, 2, 16, 2);
  EXPECT_EQ(enc(VarD(randn(rng, 1, 8)), nullptr, {}).value().rows(), 1);
  MatD x = randn(rng, 6, 8);
  const std::vector<bool> mask = {true, true, true, true, false, false};
  const MatD clean = enc(VarD(x), &mask, {}).value().topRows(4);
  x.bottomRows(2).setConstant(std::numeric_limits<double>::quiet_NaN());
  EXPECT_EQ(enc(VarD(x), &mask, {}).value().topRows(4), clean);
}

TEST(Saliency, ZeroHeadGivesSigmoidOfBias) {
  std::mt19937_64 rng(6);
  nn::ParamStore<double> store(6);
  SaliencyHead<double> head(store, "saliency", 8);
  head.mlp.fc2.weight.mutable_value().setZero();
  head.mlp.fc2.bias.mutable_value().setConstant(0.7);
  const MatD s = head(VarD(randn(rng, 5, 8)), {}).value();
  EXPECT_EQ(s.rows(), 5);
  EXPECT_EQ(s.cols(), 1);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(s(i, 0), 1.0 / (1.0 + std::exp(-0.7)), 1e-15);
}

TEST(Saliency, StrictlyInsideUnitInterval) {
  std::mt19937_64 rng(7);
  nn::ParamStore<double> store(7);
  SaliencyHead<double> head(store, "saliency", 8);
  const MatD s = head(VarD(randn(rng, 50, 8)), {}).value();
  EXPECT_GT(s.minCoeff(), 0.0);
  EXPECT_LT(s.maxCoeff(), 1.0);
}

TEST(SaliencyLabels, InclusiveEnd) {
  EXPECT_EQ(saliency_labels({{2, 4}}, 6), (std::vector<double>{0, 0, 1, 1, 1, 0}));
  EXPECT_EQ(saliency_labels({{0, 0}, {4, 5}}, 6), (std::vector<double>{1, 0, 0, 0, 1, 1}));
}

TEST(LossEnc, Examples) {
  EXPECT_NEAR(loss_enc(VarD(MatD::Constant(4, 1, 0.5)), {1, 0, 1, 0}).item(), std::log(2.0), 1e-12);
  MatD exact(3, 1);
  exact << 1, 0, 1;
  EXPECT_NEAR(loss_enc(VarD(exact), {1, 0, 1}).item(), 0.0, 1e-6);
  MatD s(2, 1);
  s << 0.9, 0.2;
  EXPECT_NEAR(loss_enc(VarD(s), {1, 0}).item(), -(std::log(0.9) + std::log(0.8)) / 2, 1e-12);
}

TEST(LossEnc, AveragesOverValidFramesOnly) {
  MatD s(4, 1);
  s << 0.9, 0.2, 0.3, std::numeric_limits<double>::quiet_NaN();
  const std::vector<bool> mask = {true, true, false, false};
  EXPECT_NEAR(loss_enc(VarD(s), {1, 0, 1, 1}, &mask).item(), -(std::log(0.9) + std::log(0.8)) / 2, 1e-12);
  const std::vector<bool> none = {false, false, false, false};
  EXPECT_THROW(loss_enc(VarD(s), {1, 0, 1, 1}, &none), std::invalid_argument);
  EXPECT_THROW(loss_enc(VarD(s), {1, 0}), std::invalid_argument);
  // Full-length input reduces to the plain mean.
  const std::vector<bool> full = {true, true, true};
  MatD t(3, 1);
  t << 0.9, 0.2, 0.3;
  EXPECT_EQ(loss_enc(VarD(t), {1, 0, 1}, &full).item(), loss_enc(VarD(t), {1, 0, 1}).item());
}

TEST(LossEnc, GradientCheck) {
  std::mt19937_64 rng(8);
  nn::ParamStore<double> store(8);
  Encoder<double> enc(store, "enc", 8, 2, 16, 2);
  SaliencyHead<double> head(store, "saliency", 8);
  for (const auto& [name, p] : store.entries()) {
    VarD v = p;
    v.mutable_value() += 0.3 * randn(rng, v.rows(), v.cols());
  }
  const VarD x(randn(rng, 6, 8), true);
  const std::vector<bool> mask = {true, true, true, true, true, false};
  auto loss = [&] { return loss_enc(head(enc(x, &mask, {}), {}), saliency_labels({{1, 3}}, 6), &mask); };
  std::vector<checks::NamedVar> params(store.entries().begin(), store.entries().end());
  params.push_back({"x", x});
  EXPECT_LT(checks::check_gradients(params, loss).rel_error, 1e-4);
}

}  // namespace
}  // namespace mesm
