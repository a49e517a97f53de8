#pragma once

#include <span>
#include <string>
#include <vector>

#include "wavemix/rng.hpp"
#include "wavemix/tensor.hpp"

namespace wavemix {

struct ConvGeometry {
  Index stride_h = 1, stride_w = 1;
  Index pad_h = 0, pad_w = 0;
  Index groups = 1;
};

/// Output extent of a forward convolution along one axis.
Index conv_output_size(Index input, Index kernel, Index stride, Index pad);
/// Output extent of a transposed convolution along one axis.
Index conv_transposed_output_size(Index input, Index kernel, Index stride, Index pad);

/// Cross-correlation. x (B,Cin,H,W), weight (Cout, Cin/groups, kh, kw),
/// bias (Cout) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeometry& g);

/// Adjoint of conv2d with the same geometry. weight (Cin, Cout/groups, kh, kw).
template <typename T>
Tensor<T> conv2d_transposed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                            const ConvGeometry& g);

/// x * Phi(x), exact erf form.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

/// Per-channel normalization over (B,H,W). In training mode the batch
/// statistics are used and running_mean / running_var are updated in place
/// (unbiased variance in the running estimate); otherwise the running stats.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, double momentum, double eps);

/// Inverted dropout; identity when !training or rate == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng);

/// (B,C,H,W) -> (B,C)
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

/// x (N,in), weight (out,in), bias (out) or undefined -> (N,out)
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Mean over the batch of -log softmax(logits)[label]. logits (B,K).
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Row-wise softmax of a (B,K) tensor, no graph.
template <typename T> std::vector<T> softmax_rows(const Tensor<T>& logits);

/// Normalizes every (b,h,w) position over channels, then per-channel affine.
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps);

// ---------------------------------------------------------------- layers

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Learnable tensors and persistent buffers (running statistics) of a model,
/// enumerated in registration order.
template <typename T>
struct Registry {
  std::vector<NamedTensor<T>> parameters;
  std::vector<NamedTensor<T>> buffers;

  void add_parameter(std::string name, const Tensor<T>& t) { parameters.push_back({std::move(name), t}); }
  void add_buffer(std::string name, const Tensor<T>& t) { buffers.push_back({std::move(name), t}); }
  Index parameter_count() const;
  std::vector<Tensor<T>> parameter_tensors() const;
};

struct ConvSpec {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel_h = 1, kernel_w = 1;
  ConvGeometry geometry;
  bool bias = true;
};

/// Weights and biases are drawn from U(-b, b) with b = 1 / sqrt(fan_in).
double init_bound(Index fan_in);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const ConvSpec& spec, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void register_into(const std::string& prefix, Registry<T>& reg) const;
  const ConvSpec& spec() const { return spec_; }

  Tensor<T> weight;  // (out, in/groups, kh, kw)
  Tensor<T> bias;    // (out)

 private:
  ConvSpec spec_;
};

template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const ConvSpec& spec, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void register_into(const std::string& prefix, Registry<T>& reg) const;
  const ConvSpec& spec() const { return spec_; }

  Tensor<T> weight;  // (in, out/groups, kh, kw)
  Tensor<T> bias;

 private:
  ConvSpec spec_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(Index channels, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> operator()(const Tensor<T>& x, bool training);
  void register_into(const std::string& prefix, Registry<T>& reg) const;

  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(Index in_features, Index out_features, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void register_into(const std::string& prefix, Registry<T>& reg) const;

  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;
};

template <typename T>
class ChannelLayerNorm {
 public:
  ChannelLayerNorm() = default;
  explicit ChannelLayerNorm(Index channels, double eps = 1e-5);

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_channels(x, gamma, beta, eps); }
  void register_into(const std::string& prefix, Registry<T>& reg) const;

  Tensor<T> gamma, beta;
  double eps = 1e-5;
};

/// Sets every learnable tensor in the registry to zero (test helper, also
/// used for the residual-identity checks).
template <typename T> void zero_parameters(const Registry<T>& reg);

}  // namespace wavemix
