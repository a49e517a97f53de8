#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavemix {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the autodiff graph (non-scalar loss, double backward, ...).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A forward op produced NaN or Inf while finite checks were enabled.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Finite checks run after every forward op. On by default in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks();

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool released = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const std::vector<T>&)> backward;

  bool is_leaf() const noexcept { return !backward && !released; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share storage and graph position;
/// use detach() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  Index dim(std::size_t axis) const;
  std::size_t rank() const { return node().shape.size(); }
  Index numel() const { return static_cast<Index>(node().value.size()); }

  std::span<const T> data() const { return node().value; }
  std::span<T> mutable_data() { return node().value; }
  T item() const;
  T operator[](Index flat) const { return node().value[static_cast<std::size_t>(flat)]; }

  bool has_grad() const { return defined() && !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().ensure_grad(); }
  void zero_grad();

  bool requires_grad() const { return defined() && node().requires_grad; }
  Tensor& set_requires_grad(bool flag);

  Tensor detach() const;
  Node<T>& node() const;
  const std::shared_ptr<Node<T>>& handle() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Runs reverse-mode accumulation from a scalar loss. Gradients add into
/// leaf .grad buffers; intermediate graph state is released afterwards, so
/// a second call on the same graph raises GraphError.
template <typename T>
void backward(const Tensor<T>& loss);

// Elementwise ops. `b` may broadcast over the leading (batch) axis.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);

/// (M,K) x (K,N) -> (M,N)
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose2d(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// NCHW helpers.
template <typename T> Tensor<T> concat_channels(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> slice_channels(const Tensor<T>& x, Index start, Index count);

struct Pad2d {
  Index top = 0, bottom = 0, left = 0, right = 0;
  bool empty() const noexcept { return top == 0 && bottom == 0 && left == 0 && right == 0; }
  friend bool operator==(const Pad2d&, const Pad2d&) = default;
};

template <typename T> Tensor<T> pad2d(const Tensor<T>& x, Pad2d pad);
template <typename T> Tensor<T> crop2d(const Tensor<T>& x, Index top, Index left, Index height, Index width);
/// (B,C,H,W) -> (B,C,W,H)
template <typename T> Tensor<T> transpose_hw(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

namespace detail {

template <typename T>
using BackwardFn = std::function<void(const std::vector<T>&)>;

/// Wraps a computed value as an op output. The backward closure is kept only
/// when grad mode is on and some input requires grad.
template <typename T>
Tensor<T> make_output(const char* op, Shape shape, std::vector<T> values,
                      std::initializer_list<Tensor<T>> inputs, BackwardFn<T> fn);
template <typename T>
Tensor<T> make_output(const char* op, Shape shape, std::vector<T> values,
                      const std::vector<Tensor<T>>& inputs, BackwardFn<T> fn);

/// Gradient buffer of `t` if it participates in backward, else nullptr.
template <typename T>
std::vector<T>* grad_sink(const Tensor<T>& t);

void require(bool condition, const std::string& message);
void require_rank(const Shape& shape, std::size_t rank, const char* op);

}  // namespace detail

}  // namespace wavemix
