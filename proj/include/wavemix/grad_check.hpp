#pragma once

#include <functional>
#include <vector>

#include "wavemix/rng.hpp"
#include "wavemix/tensor.hpp"

namespace wavemix {

struct GradCheckResult {
  /// max over checked entries of |analytic - numeric| / max(1, |numeric|)
  double max_error = 0.0;
  Index checked = 0;
};

/// Compares backward() of the scalar f(x) with central differences at x.
/// f must be deterministic; a non-scalar output raises ShapeError.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                           double eps = 1e-6);

/// Same check with respect to existing leaf tensors (perturbed in place and
/// restored). When max_per_tensor > 0 only that many randomly chosen entries
/// of each tensor are probed.
template <typename T>
GradCheckResult grad_check_params(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params,
                                  double eps = 1e-6, Index max_per_tensor = 0, std::uint64_t seed = 0);

}  // namespace wavemix
