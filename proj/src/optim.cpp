#include "wavemix/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wavemix {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be positive");
  if (!(options_.beta1 >= 0.0 && options_.beta1 < 1.0) || !(options_.beta2 >= 0.0 && options_.beta2 < 1.0)) {
    throw std::invalid_argument("Adam: betas must lie in [0, 1)");
  }
  if (!(options_.eps > 0.0)) throw std::invalid_argument("Adam: eps must be positive");
  if (options_.weight_decay < 0.0) throw std::invalid_argument("Adam: weight decay must be non-negative");
  for (const auto& p : params_) {
    if (!p.defined()) throw std::invalid_argument("Adam: undefined parameter tensor");
    state_.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    state_.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  if (options_.strict) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      for (T g : params_[i].grad()) {
        if (!std::isfinite(g)) {
          throw NumericalError("Adam: non-finite gradient in parameter " + std::to_string(i) + " " +
                               to_string(params_[i].shape()));
        }
      }
    }
  }
  const std::int64_t t = ++state_.step;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double lr = options_.lr, decay = options_.lr * options_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto theta = params_[i].mutable_data();
    const auto grad = params_[i].grad();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[k]);
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      const double th = static_cast<double>(theta[k]);
      theta[k] = static_cast<T>(th - lr * mhat / (std::sqrt(vhat) + options_.eps) - decay * th);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  zero_grads<T>(params_);
}

template <typename T>
void Adam<T>::load_state(AdamState state) {
  if (state.step < 0) throw std::invalid_argument("Adam::load_state: negative step count");
  if (state.m.size() != params_.size() || state.v.size() != params_.size()) {
    throw ShapeError("Adam::load_state: state holds " + std::to_string(state.m.size()) + " tensors, optimizer has " +
                     std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto n = static_cast<std::size_t>(params_[i].numel());
    if (state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeError("Adam::load_state: moment size mismatch for parameter " + std::to_string(i));
    }
  }
  state_ = std::move(state);
}

template <typename T>
void zero_grads(std::span<Tensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;
template void zero_grads<float>(std::span<Tensor<float>>);
template void zero_grads<double>(std::span<Tensor<double>>);

}  // namespace wavemix
