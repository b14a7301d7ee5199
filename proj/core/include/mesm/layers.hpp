#pragma once

// Parameterized building blocks on top of the autograd engine.

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mesm/autograd.hpp"

namespace mesm::nn {

using ad::Index;
using ad::Matrix;
using ad::Var;

/// Forward-pass state: train/eval switch and the dropout stream.
template <typename T>
struct Context {
  bool training = false;
  T dropout = T(0);
  std::mt19937_64* rng = nullptr;

  Var<T> drop(const Var<T>& x) const { return training ? ad::dropout(x, dropout, rng) : x; }
};

/// Named parameter registry. Names are canonical and unique; iteration
/// order is registration order.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Var<T> create(const std::string& name, Matrix<T> init);
  Var<T> zeros(const std::string& name, Index rows, Index cols);
  Var<T> ones(const std::string& name, Index rows, Index cols);
  Var<T> xavier(const std::string& name, Index fan_in, Index fan_out);
  Var<T> normal(const std::string& name, Index rows, Index cols, double stddev);

  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

template <typename T>
struct Linear {
  Var<T> weight;  // in x out
  Var<T> bias;    // 1 x out

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, Index in, Index out);
  Var<T> operator()(const Var<T>& x) const;
  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }
};

template <typename T>
struct LayerNorm {
  Var<T> gamma;
  Var<T> beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, Index dim);
  Var<T> operator()(const Var<T>& x) const { return ad::layer_norm(x, gamma, beta); }
};

/// Two-layer perceptron: fc2(dropout(relu(fc1(x)))).
template <typename T>
struct FeedForward {
  Linear<T> fc1;
  Linear<T> fc2;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name, Index in, Index hidden, Index out);
  Var<T> operator()(const Var<T>& x, const Context<T>& ctx) const;
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> wq;
  Linear<T> wk;
  Linear<T> wv;
  Linear<T> wo;
  Index heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, Index dim, Index heads);

  Var<T> operator()(const Var<T>& query, const Var<T>& key, const Var<T>& value, const std::vector<bool>* key_mask,
                    ad::AttentionTrace<T>* trace = nullptr) const;
};

/// Residual cross-attention block: out = x + MLP(LN(MHA(x, kv, kv))).
///
/// The residual branch carries the whole update, so zeroing the MLP output
/// projection makes the block an exact identity.
template <typename T>
struct CrossBlock {
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm;
  FeedForward<T> mlp;

  CrossBlock() = default;
  CrossBlock(ParamStore<T>& store, const std::string& name, Index dim, Index heads, Index hidden);
  Var<T> operator()(const Var<T>& x, const Var<T>& kv, const std::vector<bool>* kv_mask, const Context<T>& ctx,
                    ad::AttentionTrace<T>* trace = nullptr) const;
};

/// Pre-norm self-attention encoder layer.
template <typename T>
struct SelfBlock {
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm1;
  LayerNorm<T> norm2;
  FeedForward<T> ffn;

  SelfBlock() = default;
  SelfBlock(ParamStore<T>& store, const std::string& name, Index dim, Index heads, Index hidden);
  Var<T> operator()(const Var<T>& x, const std::vector<bool>* mask, const Context<T>& ctx) const;
};

/// Pre-norm block with self-attention among the queries followed by
/// cross-attention into a memory and a feed-forward layer.
template <typename T>
struct ContextBlock {
  MultiHeadAttention<T> self_attn;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> norm1;
  LayerNorm<T> norm2;
  LayerNorm<T> norm3;
  FeedForward<T> ffn;

  ContextBlock() = default;
  ContextBlock(ParamStore<T>& store, const std::string& name, Index dim, Index heads, Index hidden);
  Var<T> operator()(const Var<T>& x, const Var<T>& memory, const std::vector<bool>* memory_mask,
                    const Context<T>& ctx) const;
};

/// Fixed sinusoidal position table, length x dim.
template <typename T>
Matrix<T> sinusoid_table(Index length, Index dim);

/// Converts a float matrix into the model scalar type.
template <typename T>
Var<T> constant(const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& m);

}  // namespace mesm::nn
