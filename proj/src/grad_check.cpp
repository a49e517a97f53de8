#include "wavemix/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wavemix {

namespace {

template <typename T>
T scalar_of(const Tensor<T>& y) {
  if (y.numel() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got shape " + to_string(y.shape()));
  }
  return y[0];
}

template <typename T>
void probe(const std::function<T()>& eval, Tensor<T>& leaf, std::span<const T> analytic,
           const std::vector<Index>& entries, double eps, GradCheckResult& r) {
  auto v = leaf.mutable_data();
  for (Index i : entries) {
    const auto k = static_cast<std::size_t>(i);
    const T saved = v[k];
    v[k] = static_cast<T>(static_cast<double>(saved) + eps);
    const double up = static_cast<double>(eval());
    v[k] = static_cast<T>(static_cast<double>(saved) - eps);
    const double down = static_cast<double>(eval());
    v[k] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic.empty() ? 0.0 : static_cast<double>(analytic[k]);
    r.max_error = std::max(r.max_error, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    ++r.checked;
  }
}

std::vector<Index> all_entries(Index n) {
  std::vector<Index> e(static_cast<std::size_t>(n));
  std::iota(e.begin(), e.end(), Index{0});
  return e;
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps) {
  Tensor<T> leaf = x.detach();
  leaf.set_requires_grad(true);
  const Tensor<T> y = f(leaf);
  scalar_of(y);
  if (y.requires_grad()) backward(y);
  const std::vector<T> analytic(leaf.grad().begin(), leaf.grad().end());

  GradCheckResult r;
  const std::function<T()> eval = [&] {
    NoGradGuard guard;
    return scalar_of(f(leaf));
  };
  probe<T>(eval, leaf, analytic, all_entries(leaf.numel()), eps, r);
  return r;
}

template <typename T>
GradCheckResult grad_check_params(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params, double eps,
                                  Index max_per_tensor, std::uint64_t seed) {
  for (auto& p : params) p.zero_grad();
  const Tensor<T> y = f();
  scalar_of(y);
  if (y.requires_grad()) backward(y);
  std::vector<std::vector<T>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult r;
  Rng rng(seed, 7);
  const std::function<T()> eval = [&] {
    NoGradGuard guard;
    return scalar_of(f());
  };
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::vector<Index> entries = all_entries(params[t].numel());
    if (max_per_tensor > 0 && params[t].numel() > max_per_tensor) {
      for (Index i = 0; i < max_per_tensor; ++i) {
        const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(params[t].numel() - i)));
        std::swap(entries[static_cast<std::size_t>(i)], entries[static_cast<std::size_t>(j)]);
      }
      entries.resize(static_cast<std::size_t>(max_per_tensor));
    }
    probe<T>(eval, params[t], analytic[t], entries, eps, r);
  }
  return r;
}

template GradCheckResult grad_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&,
                                           const Tensor<float>&, double);
template GradCheckResult grad_check<double>(const std::function<Tensor<double>(const Tensor<double>&)>&,
                                            const Tensor<double>&, double);
template GradCheckResult grad_check_params<float>(const std::function<Tensor<float>()>&, std::vector<Tensor<float>>,
                                                  double, Index, std::uint64_t);
template GradCheckResult grad_check_params<double>(const std::function<Tensor<double>()>&,
                                                   std::vector<Tensor<double>>, double, Index, std::uint64_t);

}  // namespace wavemix
