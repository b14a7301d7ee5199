#include "mesm/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace mesm::nn {

template <typename T>
Var<T> ParamStore<T>::create(const std::string& name, Matrix<T> init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  Var<T> v(std::move(init), true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, v);
  return v;
}

template <typename T>
Var<T> ParamStore<T>::zeros(const std::string& name, Index rows, Index cols) {
  return create(name, Matrix<T>::Zero(rows, cols));
}

template <typename T>
Var<T> ParamStore<T>::ones(const std::string& name, Index rows, Index cols) {
  return create(name, Matrix<T>::Ones(rows, cols));
}

template <typename T>
Var<T> ParamStore<T>::xavier(const std::string& name, Index fan_in, Index fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<T> m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng_));
  return create(name, std::move(m));
}

template <typename T>
Var<T> ParamStore<T>::normal(const std::string& name, Index rows, Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng_));
  return create(name, std::move(m));
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, Index in, Index out)
    : weight(store.xavier(name + ".weight", in, out)), bias(store.zeros(name + ".bias", 1, out)) {}

template <typename T>
Var<T> Linear<T>::operator()(const Var<T>& x) const {
  if (x.cols() != weight.rows()) {
    throw std::invalid_argument("linear: input width " + std::to_string(x.cols()) + " != " +
                                std::to_string(weight.rows()));
  }
  return ad::add_row(ad::matmul(x, weight), bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, Index dim)
    : gamma(store.ones(name + ".gamma", 1, dim)), beta(store.zeros(name + ".beta", 1, dim)) {}

template <typename T>
FeedForward<T>::FeedForward(ParamStore<T>& store, const std::string& name, Index in, Index hidden, Index out)
    : fc1(store, name + ".fc1", in, hidden), fc2(store, name + ".fc2", hidden, out) {}

template <typename T>
Var<T> FeedForward<T>::operator()(const Var<T>& x, const Context<T>& ctx) const {
  return fc2(ctx.drop(ad::relu(fc1(x))));
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& name, Index dim, Index h)
    : wq(store, name + ".q", dim, dim),
      wk(store, name + ".k", dim, dim),
      wv(store, name + ".v", dim, dim),
      wo(store, name + ".o", dim, dim),
      heads(h) {
  if (h <= 0 || dim % h != 0) throw std::invalid_argument("attention width must be divisible by head count");
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(const Var<T>& query, const Var<T>& key, const Var<T>& value,
                                         const std::vector<bool>* key_mask, ad::AttentionTrace<T>* trace) const {
  return wo(ad::attention(wq(query), wk(key), wv(value), heads, key_mask, trace));
}

template <typename T>
CrossBlock<T>::CrossBlock(ParamStore<T>& store, const std::string& name, Index dim, Index heads, Index hidden)
    : attn(store, name + ".attn", dim, heads), norm(store, name + ".norm", dim), mlp(store, name + ".mlp", dim, hidden, dim) {}

template <typename T>
Var<T> CrossBlock<T>::operator()(const Var<T>& x, const Var<T>& kv, const std::vector<bool>* kv_mask,
                                 const Context<T>& ctx, ad::AttentionTrace<T>* trace) const {
  Var<T> a = attn(x, kv, kv, kv_mask, trace);
  return ad::add(x, ctx.drop(mlp(norm(a), ctx)));
}

template <typename T>
SelfBlock<T>::SelfBlock(ParamStore<T>& store, const std::string& name, Index dim, Index heads, Index hidden)
    : attn(store, name + ".attn", dim, heads),
      norm1(store, name + ".norm1", dim),
      norm2(store, name + ".norm2", dim),
      ffn(store, name + ".ffn", dim, hidden, dim) {}

template <typename T>
Var<T> SelfBlock<T>::operator()(const Var<T>& x, const std::vector<bool>* mask, const Context<T>& ctx) const {
  Var<T> h = norm1(x);
  Var<T> y = ad::add(x, ctx.drop(attn(h, h, h, mask)));
  return ad::add(y, ctx.drop(ffn(norm2(y), ctx)));
}

template <typename T>
ContextBlock<T>::ContextBlock(ParamStore<T>& store, const std::string& name, Index dim, Index heads, Index hidden)
    : self_attn(store, name + ".self_attn", dim, heads),
      cross_attn(store, name + ".cross_attn", dim, heads),
      norm1(store, name + ".norm1", dim),
      norm2(store, name + ".norm2", dim),
      norm3(store, name + ".norm3", dim),
      ffn(store, name + ".ffn", dim, hidden, dim) {}

template <typename T>
Var<T> ContextBlock<T>::operator()(const Var<T>& x, const Var<T>& memory, const std::vector<bool>* memory_mask,
                                   const Context<T>& ctx) const {
  Var<T> h = norm1(x);
  Var<T> y = ad::add(x, ctx.drop(self_attn(h, h, h, nullptr)));
  h = norm2(y);
  y = ad::add(y, ctx.drop(cross_attn(h, memory, memory, memory_mask)));
  return ad::add(y, ctx.drop(ffn(norm3(y), ctx)));
}

template <typename T>
Matrix<T> sinusoid_table(Index length, Index dim) {
  Matrix<T> pe(length, dim);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double a = static_cast<double>(pos) / rate;
      pe(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return pe;
}

template <typename T>
Var<T> constant(const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& m) {
  return Var<T>(m.template cast<T>());
}

#define MESM_INSTANTIATE(T)                                                                     \
  template class ParamStore<T>;                                                                 \
  template struct Linear<T>;                                                                    \
  template struct LayerNorm<T>;                                                                 \
  template struct FeedForward<T>;                                                               \
  template struct MultiHeadAttention<T>;                                                        \
  template struct CrossBlock<T>;                                                                \
  template struct SelfBlock<T>;                                                                 \
  template struct ContextBlock<T>;                                                              \
  template Matrix<T> sinusoid_table<T>(Index, Index);                                           \
  template Var<T> constant<T>(const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>&);

MESM_INSTANTIATE(float)
MESM_INSTANTIATE(double)

#undef MESM_INSTANTIATE

}  // namespace mesm::nn
