#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wavemix/tensor.hpp"

namespace wavemix {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled: theta -= lr * weight_decay * theta, separate from the moments.
  double weight_decay = 0.01;
  /// Reject non-finite gradients instead of propagating them.
  bool strict = true;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options = {});

  /// One update from the current .grad buffers; an absent gradient counts as zero.
  void step();
  void zero_grad();

  std::int64_t steps() const { return state_.step; }
  const AdamOptions& options() const { return options_; }
  const AdamState& state() const { return state_; }
  /// Replaces the moments and step counter; shapes must mirror the parameters.
  void load_state(AdamState state);

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions options_;
  AdamState state_;
};

template <typename T>
void zero_grads(std::span<Tensor<T>> params);

}  // namespace wavemix
