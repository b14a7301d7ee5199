#include "mesm/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace mesm {

template <typename T>
AdamW<T>::AdamW(const nn::ParamStore<T>& store, const AdamOptions& options) : options_(options) {
  for (const auto& [name, p] : store.entries()) {
    state_.m.push_back(ad::Matrix<T>::Zero(p.rows(), p.cols()));
    state_.v.push_back(ad::Matrix<T>::Zero(p.rows(), p.cols()));
  }
}

template <typename T>
void AdamW<T>::step(nn::ParamStore<T>& store) {
  if (store.size() != state_.m.size()) throw std::logic_error("optimizer state does not match the parameter store");
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const T b1 = static_cast<T>(options_.beta1);
  const T b2 = static_cast<T>(options_.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(options_.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(options_.beta2, t));
  const T lr = static_cast<T>(options_.lr);
  const T eps = static_cast<T>(options_.eps);
  const T decay = static_cast<T>(1.0 - options_.lr * options_.weight_decay);
  std::size_t i = 0;
  for (const auto& entry : store.entries()) {
    ad::Var<T> p = entry.second;
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    ++i;
    if (p.has_grad()) {
      const auto& g = p.grad();
      m = b1 * m + (T(1) - b1) * g;
      v = (b2 * v.array() + (T(1) - b2) * g.array().square()).matrix();
    } else {
      m *= b1;
      v *= b2;
    }
    auto& w = p.mutable_value();
    w *= decay;
    w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
}

template <typename T>
double clip_grad_norm(nn::ParamStore<T>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : store.entries())
    if (p.has_grad()) sq += static_cast<double>(p.grad().squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-6));
    for (const auto& entry : store.entries()) {
      ad::Var<T> p = entry.second;
      if (p.has_grad()) p.mutable_grad() *= s;
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(nn::ParamStore<float>&, double);
template double clip_grad_norm<double>(nn::ParamStore<double>&, double);

}  // namespace mesm
