#include <gtest/gtest.h>

#include <random>

#include "mesm/layers.hpp"
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

VarD leaf(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) { return VarD(randn(rng, r, c), true); }

TEST(Autograd, OpGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  const VarD a = leaf(rng, 3, 4), b = leaf(rng, 4, 5), c = leaf(rng, 3, 4), g = leaf(rng, 1, 4), be = leaf(rng, 1, 4);
  auto loss = [&] {
    VarD x = ad::matmul(ad::layer_norm(ad::mul(a, ad::sigmoid(c)), g, be), b);
    x = ad::add(ad::log_softmax_rows(x), ad::softmax_rows(ad::scale(x, 0.5)));
    VarD y = ad::normalize_rows(ad::concat_cols<double>({a, ad::softplus(c)}));
    VarD z = ad::matmul_nt(ad::gather_rows(a, {2, 0}), ad::slice_rows(c, 1, 2));
    return ad::add(ad::add(ad::mean_all(ad::mul(x, x)), ad::sum_all(ad::abs(y))), ad::mean_all(ad::relu(z)));
  };
  const auto r = checks::check_gradients({{"a", a}, {"b", b}, {"c", c}, {"g", g}, {"be", be}}, loss);
  EXPECT_LT(r.rel_error, 1e-6) << r.worst_param;
}

TEST(Autograd, AttentionGradientWithMask) {
  std::mt19937_64 rng(2);
  const VarD q = leaf(rng, 3, 8), k = leaf(rng, 5, 8), v = leaf(rng, 5, 8);
  const std::vector<bool> mask = {true, false, true, true, false};
  auto loss = [&] { return ad::mean_all(ad::mul(ad::attention(q, k, v, 2, &mask), q)); };
  EXPECT_LT(checks::check_gradients({{"q", q}, {"k", k}, {"v", v}}, loss).rel_error, 1e-6);
}

TEST(Autograd, NoGradGuardStopsRecording) {
  const VarD a(MatD::Ones(2, 2), true);
  {
    ad::NoGradGuard guard;
    const VarD b = ad::scale(a, 2.0);
    EXPECT_FALSE(b.requires_grad());
  }
  EXPECT_TRUE(ad::scale(a, 2.0).requires_grad());
}

TEST(Attention, SingleValidKeyGetsAllWeight) {
  std::mt19937_64 rng(3);
  const VarD q(randn(rng, 4, 6)), k(randn(rng, 3, 6)), v(randn(rng, 3, 6));
  const std::vector<bool> mask = {false, true, false};
  ad::AttentionTrace<double> trace;
  const VarD out = ad::attention(q, k, v, 2, &mask, &trace);
  for (const auto& w : trace.weights) {
    ASSERT_EQ(w.cols(), 1);
    EXPECT_TRUE((w.array() == 1.0).all());
  }
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_TRUE(out.value().row(i).isApprox(v.value().row(1)));
}

TEST(Attention, EqualKeysSplitEvenly) {
  std::mt19937_64 rng(4);
  const MatD row = randn(rng, 1, 4);
  MatD k(2, 4);
  k << row, row;
  ad::AttentionTrace<double> trace;
  ad::attention(VarD(randn(rng, 3, 4)), VarD(k), VarD(randn(rng, 2, 4)), 1, nullptr, &trace);
  EXPECT_TRUE(trace.weights[0].isApproxToConstant(0.5));
}

TEST(Attention, RowsSumToOneOverValidKeys) {
  std::mt19937_64 rng(5);
  const std::vector<bool> mask = {true, true, false, true, false, true};
  ad::AttentionTrace<double> trace;
  ad::attention(VarD(randn(rng, 7, 8)), VarD(randn(rng, 6, 8)), VarD(randn(rng, 6, 8)), 4, &mask, &trace);
  ASSERT_EQ(trace.weights.size(), 4u);
  for (const auto& w : trace.weights) {
    EXPECT_EQ(w.cols(), 4);
    for (Eigen::Index i = 0; i < w.rows(); ++i) EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(Attention, AllInvalidKeysThrow) {
  const std::vector<bool> mask = {false, false};
  EXPECT_THROW(ad::attention(VarD(MatD::Ones(1, 4)), VarD(MatD::Ones(2, 4)), VarD(MatD::Ones(2, 4)), 1, &mask),
               std::invalid_argument);
}

TEST(Attention, MaskedRowsAreNeverRead) {
  std::mt19937_64 rng(6);
  const std::vector<bool> mask = {true, false, true};
  MatD k = randn(rng, 3, 4), v = randn(rng, 3, 4);
  const VarD q(randn(rng, 2, 4));
  const MatD clean = ad::attention(q, VarD(k), VarD(v), 2, &mask).value();
  k.row(1).setConstant(std::numeric_limits<double>::quiet_NaN());
  v.row(1).setConstant(std::numeric_limits<double>::infinity());
  EXPECT_EQ(ad::attention(q, VarD(k), VarD(v), 2, &mask).value(), clean);
}

TEST(CrossBlock, ZeroOutputProjectionIsIdentity) {
  std::mt19937_64 rng(7);
  nn::ParamStore<double> store(1);
  nn::CrossBlock<double> block(store, "b", 8, 2, 16);
  block.mlp.fc2.weight.mutable_value().setZero();
  block.mlp.fc2.bias.mutable_value().setZero();
  const VarD x(randn(rng, 5, 8)), kv(randn(rng, 3, 8));
  EXPECT_EQ(block(x, kv, nullptr, nn::Context<double>{}).value(), x.value());
}

TEST(CrossBlock, PreservesQueryShape) {
  std::mt19937_64 rng(8);
  nn::ParamStore<double> store(2);
  nn::CrossBlock<double> block(store, "b", 16, 4, 32);
  EXPECT_EQ(block(VarD(randn(rng, 8, 16)), VarD(randn(rng, 5, 16)), nullptr, {}).value().rows(), 8);
}

TEST(ParamStore, NamesAreUniqueAndOrdered) {
  nn::ParamStore<float> store(3);
  nn::Linear<float> lin(store, "head", 4, 2);
  EXPECT_EQ(store.entries()[0].first, "head.weight");
  EXPECT_EQ(store.entries()[1].first, "head.bias");
  EXPECT_EQ(store.scalar_count(), 10u);
  EXPECT_THROW(store.zeros("head.bias", 1, 2), std::logic_error);
  EXPECT_THROW(store.get("nope"), std::out_of_range);
}

TEST(ParamStore, GetAliasesTheModuleParameter) {
  nn::ParamStore<float> store(4);
  nn::Linear<float> lin(store, "l", 2, 2);
  ad::Var<float> handle = store.get("l.weight");
  handle.mutable_value().setConstant(3.0f);
  EXPECT_TRUE((lin.weight.value().array() == 3.0f).all());
}

TEST(Dropout, EvalIsIdentityTrainIsSeeded) {
  std::mt19937_64 rng(9);
  const VarD x(randn(rng, 10, 10));
  EXPECT_EQ(nn::Context<double>{}.drop(x).value(), x.value());
  std::mt19937_64 r1(5), r2(5);
  const MatD a = nn::Context<double>{true, 0.5, &r1}.drop(x).value();
  const MatD b = nn::Context<double>{true, 0.5, &r2}.drop(x).value();
  EXPECT_EQ(a, b);
  const double zeros = static_cast<double>((a.array() == 0.0).count());
  EXPECT_GT(zeros, 25);
  EXPECT_LT(zeros, 75);
}

TEST(Sinusoid, TableValues) {
  const auto t = nn::sinusoid_table<double>(4, 6);
  EXPECT_EQ(t.rows(), 4);
  EXPECT_EQ(t(0, 0), 0.0);
  EXPECT_EQ(t(0, 1), 1.0);
  EXPECT_NEAR(t(1, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(t(1, 1), std::cos(1.0), 1e-15);
  EXPECT_LE(t.cwiseAbs().maxCoeff(), 1.0);
}

}  // namespace
}  // namespace mesm
