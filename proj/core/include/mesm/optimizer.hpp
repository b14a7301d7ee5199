#pragma once

// Adam with decoupled weight decay and global gradient-norm clipping.

#include <cstdint>
#include <vector>

#include "mesm/layers.hpp"

namespace mesm {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<ad::Matrix<T>> m;  // one per parameter, store order
  std::vector<ad::Matrix<T>> v;
};

template <typename T>
class AdamW {
 public:
  AdamW(const nn::ParamStore<T>& store, const AdamOptions& options);

  /// One update of every parameter in `store`; a parameter without a
  /// gradient is treated as having a zero gradient.
  void step(nn::ParamStore<T>& store);

  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  const AdamState<T>& state() const { return state_; }
  AdamState<T>& mutable_state() { return state_; }

 private:
  AdamOptions options_;
  AdamState<T> state_;
};

/// Global L2 norm over all gradients. Scales them down to `max_norm` when
/// larger; returns the norm before clipping.
template <typename T>
double clip_grad_norm(nn::ParamStore<T>& store, double max_norm);

}  // namespace mesm
