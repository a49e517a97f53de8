#include "wavemix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "gemm.hpp"

namespace wavemix {

namespace {

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

thread_local bool t_grad_enabled = true;

}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks; }
bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

void require(bool condition, const std::string& message) {
  if (!condition) throw ShapeError(message);
}

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                     to_string(shape));
  }
}

template <typename T>
Tensor<T> make_output(const char* op, Shape shape, std::vector<T> values,
                      const std::vector<Tensor<T>>& inputs, BackwardFn<T> fn) {
  if (static_cast<Index>(values.size()) != numel(shape)) {
    throw ShapeError(std::string(op) + ": value count does not match shape " + to_string(shape));
  }
  if (g_finite_checks) {
    for (T v : values) {
      if (!std::isfinite(v)) throw NumericalError(std::string(op) + " produced a non-finite value");
    }
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad && fn) {
    node->requires_grad = true;
    node->backward = std::move(fn);
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->inputs.push_back(in.handle());
    }
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_output(const char* op, Shape shape, std::vector<T> values,
                      std::initializer_list<Tensor<T>> inputs, BackwardFn<T> fn) {
  return make_output<T>(op, std::move(shape), std::move(values), std::vector<Tensor<T>>(inputs),
                        std::move(fn));
}

template <typename T>
std::vector<T>* grad_sink(const Tensor<T>& t) {
  if (!t.requires_grad()) return nullptr;
  return &t.node().ensure_grad();
}

}  // namespace detail

using detail::grad_sink;
using detail::make_output;

// ---------------------------------------------------------------- Tensor

template <typename T>
Node<T>& Tensor<T>::node() const {
  if (!node_) throw GraphError("use of an undefined tensor");
  return *node_;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative extent in " + to_string(shape));
  }
  auto n = static_cast<std::size_t>(wavemix::numel(shape));
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (static_cast<Index>(values.size()) != wavemix::numel(shape)) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     to_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
Index Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node().value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  auto& n = node();
  if (!n.is_leaf()) throw GraphError("requires_grad can only be changed on leaf tensors");
  n.requires_grad = flag;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node().value, false);
}

// ---------------------------------------------------------------- backward

template <typename T>
void backward(const Tensor<T>& loss) {
  auto& root = loss.node();
  if (loss.numel() != 1) {
    throw GraphError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (root.released) {
    throw GraphError("backward called twice on the same graph; run the forward pass again first");
  }
  if (!root.requires_grad) throw GraphError("loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->backward && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->grad.empty() && node->backward) node->backward(node->grad);
  }
  for (Node<T>* node : order) {
    if (!node->backward) continue;  // a leaf loss keeps its identity
    node->backward = nullptr;
    node->inputs.clear();
    node->released = true;
    if (node != &root) std::vector<T>().swap(node->grad);
  }
}

// ---------------------------------------------------------------- elementwise

namespace {

// Rows of `a` map onto rows of the output; `b` either matches `a` or has a
// leading extent of 1 that broadcasts across the batch axis.
struct BroadcastPlan {
  Shape out;
  Index batch = 1;
  Index inner = 1;
  bool a_broadcast = false;
  bool b_broadcast = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.batch = 1;
    p.inner = numel(a);
    return p;
  }
  bool tail_equal = a.size() == b.size() && !a.empty() && std::equal(a.begin() + 1, a.end(), b.begin() + 1);
  if (!tail_equal || (a[0] != 1 && b[0] != 1)) {
    throw ShapeError(std::string(op) + ": cannot combine shapes " + to_string(a) + " and " + to_string(b) +
                     " (broadcast only over the leading axis)");
  }
  p.out = a;
  p.out[0] = std::max(a[0], b[0]);
  p.batch = p.out[0];
  p.inner = numel(a) / std::max<Index>(a[0], 1);
  p.a_broadcast = a[0] == 1 && p.batch != 1;
  p.b_broadcast = b[0] == 1 && p.batch != 1;
  return p;
}

template <typename T>
void reduce_broadcast(const std::vector<T>& out_grad, const BroadcastPlan& p, bool broadcast,
                      std::vector<T>& sink, T sign) {
  if (!broadcast) {
    for (std::size_t i = 0; i < out_grad.size(); ++i) sink[i] += sign * out_grad[i];
    return;
  }
  for (Index b = 0; b < p.batch; ++b) {
    const T* src = out_grad.data() + b * p.inner;
    for (Index i = 0; i < p.inner; ++i) sink[i] += sign * src[i];
  }
}

template <typename T>
Tensor<T> add_or_sub(const Tensor<T>& a, const Tensor<T>& b, T sign, const char* op) {
  BroadcastPlan p = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<T> out(static_cast<std::size_t>(numel(p.out)));
  auto av = a.data();
  auto bv = b.data();
  for (Index n = 0; n < p.batch; ++n) {
    const T* pa = av.data() + (p.a_broadcast ? 0 : n * p.inner);
    const T* pb = bv.data() + (p.b_broadcast ? 0 : n * p.inner);
    T* po = out.data() + n * p.inner;
    for (Index i = 0; i < p.inner; ++i) po[i] = pa[i] + sign * pb[i];
  }
  return make_output<T>(op, p.out, std::move(out), {a, b}, [a, b, p, sign](const std::vector<T>& g) {
    if (auto* s = grad_sink(a)) reduce_broadcast(g, p, p.a_broadcast, *s, T(1));
    if (auto* s = grad_sink(b)) reduce_broadcast(g, p, p.b_broadcast, *s, sign);
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return add_or_sub(a, b, T(1), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add_or_sub(a, b, T(-1), "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  BroadcastPlan p = plan_broadcast(a.shape(), b.shape(), "mul");
  std::vector<T> out(static_cast<std::size_t>(numel(p.out)));
  auto av = a.data();
  auto bv = b.data();
  for (Index n = 0; n < p.batch; ++n) {
    const T* pa = av.data() + (p.a_broadcast ? 0 : n * p.inner);
    const T* pb = bv.data() + (p.b_broadcast ? 0 : n * p.inner);
    T* po = out.data() + n * p.inner;
    for (Index i = 0; i < p.inner; ++i) po[i] = pa[i] * pb[i];
  }
  return make_output<T>("mul", p.out, std::move(out), {a, b}, [a, b, p](const std::vector<T>& g) {
    auto av = a.data();
    auto bv = b.data();
    auto* sa = grad_sink(a);
    auto* sb = grad_sink(b);
    for (Index n = 0; n < p.batch; ++n) {
      Index oa = p.a_broadcast ? 0 : n * p.inner;
      Index ob = p.b_broadcast ? 0 : n * p.inner;
      const T* pg = g.data() + n * p.inner;
      for (Index i = 0; i < p.inner; ++i) {
        if (sa) (*sa)[oa + i] += pg[i] * bv[ob + i];
        if (sb) (*sb)[ob + i] += pg[i] * av[oa + i];
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v *= factor;
  return make_output<T>("scale", a.shape(), std::move(out), {a}, [a, factor](const std::vector<T>& g) {
    if (auto* s = grad_sink(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += factor * g[i];
    }
  });
}

// ---------------------------------------------------------------- linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_output<T>("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, n, k](const std::vector<T>& g) {
    if (auto* s = grad_sink(a)) detail::gemm<T>(false, true, m, k, n, g.data(), b.data().data(), s->data(), true);
    if (auto* s = grad_sink(b)) detail::gemm<T>(true, false, k, n, m, a.data().data(), g.data(), s->data(), true);
  });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  detail::require_rank(a.shape(), 2, "transpose2d");
  const Index m = a.dim(0), n = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  auto av = a.data();
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_output<T>("transpose2d", {n, m}, std::move(out), {a}, [a, m, n](const std::vector<T>& g) {
    if (auto* s = grad_sink(a)) {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j) (*s)[i * n + j] += g[j * m + i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_output<T>("reshape", std::move(shape), std::move(out), {a}, [a](const std::vector<T>& g) {
    if (auto* s = grad_sink(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i];
    }
  });
}

// ---------------------------------------------------------------- NCHW helpers

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = parts[0].shape();
  detail::require_rank(first, 4, "concat_channels");
  Index channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    detail::require_rank(s, 4, "concat_channels");
    if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ShapeError("concat_channels: B,H,W must agree, got " + to_string(first) + " and " + to_string(s));
    }
    channels += s[1];
  }
  const Index batch = first[0], plane = first[2] * first[3];
  std::vector<T> out(static_cast<std::size_t>(batch * channels * plane));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Index c = p.dim(1);
    auto v = p.data();
    for (Index b = 0; b < batch; ++b) {
      std::copy_n(v.data() + b * c * plane, c * plane, out.data() + (b * channels + offset) * plane);
    }
    offset += c;
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return make_output<T>("concat_channels", {batch, channels, first[2], first[3]}, std::move(out), inputs,
                        [inputs, offsets, batch, channels, plane](const std::vector<T>& g) {
                          for (std::size_t i = 0; i < inputs.size(); ++i) {
                            auto* s = grad_sink(inputs[i]);
                            if (!s) continue;
                            const Index c = inputs[i].dim(1);
                            for (Index b = 0; b < batch; ++b) {
                              const T* src = g.data() + (b * channels + offsets[i]) * plane;
                              T* dst = s->data() + b * c * plane;
                              for (Index j = 0; j < c * plane; ++j) dst[j] += src[j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, Index start, Index count) {
  detail::require_rank(x.shape(), 4, "slice_channels");
  const Index batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (start < 0 || count < 0 || start + count > channels) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + std::to_string(channels) + " channels");
  }
  std::vector<T> out(static_cast<std::size_t>(batch * count * plane));
  auto v = x.data();
  for (Index b = 0; b < batch; ++b) {
    std::copy_n(v.data() + (b * channels + start) * plane, count * plane, out.data() + b * count * plane);
  }
  return make_output<T>("slice_channels", {batch, count, x.dim(2), x.dim(3)}, std::move(out), {x},
                        [x, start, count, batch, channels, plane](const std::vector<T>& g) {
                          if (auto* s = grad_sink(x)) {
                            for (Index b = 0; b < batch; ++b) {
                              const T* src = g.data() + b * count * plane;
                              T* dst = s->data() + (b * channels + start) * plane;
                              for (Index j = 0; j < count * plane; ++j) dst[j] += src[j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, Pad2d pad) {
  detail::require_rank(x.shape(), 4, "pad2d");
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0) throw ShapeError("pad2d: negative padding");
  if (pad.empty()) return x;
  const Index n = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = h + pad.top + pad.bottom, ow = w + pad.left + pad.right;
  std::vector<T> out(static_cast<std::size_t>(n * oh * ow), T(0));
  auto v = x.data();
  for (Index p = 0; p < n; ++p)
    for (Index i = 0; i < h; ++i)
      std::copy_n(v.data() + (p * h + i) * w, w, out.data() + (p * oh + i + pad.top) * ow + pad.left);
  return make_output<T>("pad2d", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                        [x, pad, n, h, w, oh, ow](const std::vector<T>& g) {
                          if (auto* s = grad_sink(x)) {
                            for (Index p = 0; p < n; ++p)
                              for (Index i = 0; i < h; ++i)
                                for (Index j = 0; j < w; ++j)
                                  (*s)[(p * h + i) * w + j] += g[(p * oh + i + pad.top) * ow + j + pad.left];
                          }
                        });
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, Index top, Index left, Index height, Index width) {
  detail::require_rank(x.shape(), 4, "crop2d");
  const Index n = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (top < 0 || left < 0 || height < 0 || width < 0 || top + height > h || left + width > w) {
    throw ShapeError("crop2d: window exceeds input " + to_string(x.shape()));
  }
  if (top == 0 && left == 0 && height == h && width == w) return x;
  std::vector<T> out(static_cast<std::size_t>(n * height * width));
  auto v = x.data();
  for (Index p = 0; p < n; ++p)
    for (Index i = 0; i < height; ++i)
      std::copy_n(v.data() + (p * h + i + top) * w + left, width, out.data() + (p * height + i) * width);
  return make_output<T>("crop2d", {x.dim(0), x.dim(1), height, width}, std::move(out), {x},
                        [x, top, left, height, width, n, h, w](const std::vector<T>& g) {
                          if (auto* s = grad_sink(x)) {
                            for (Index p = 0; p < n; ++p)
                              for (Index i = 0; i < height; ++i)
                                for (Index j = 0; j < width; ++j)
                                  (*s)[(p * h + i + top) * w + left + j] += g[(p * height + i) * width + j];
                          }
                        });
}

template <typename T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "transpose_hw");
  const Index n = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * h * w));
  auto v = x.data();
  for (Index p = 0; p < n; ++p)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) out[(p * w + j) * h + i] = v[(p * h + i) * w + j];
  return make_output<T>("transpose_hw", {x.dim(0), x.dim(1), w, h}, std::move(out), {x},
                        [x, n, h, w](const std::vector<T>& g) {
                          if (auto* s = grad_sink(x)) {
                            for (Index p = 0; p < n; ++p)
                              for (Index i = 0; i < h; ++i)
                                for (Index j = 0; j < w; ++j) (*s)[(p * h + i) * w + j] += g[(p * w + j) * h + i];
                          }
                        });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;  // fixed left-to-right order
  return make_output<T>("sum", {}, {total}, {x}, [x](const std::vector<T>& g) {
    if (auto* s = grad_sink(x)) {
      for (T& v : *s) v += g[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

#define WAVEMIX_INSTANTIATE(T)                                                                          \
  template class Tensor<T>;                                                                             \
  template void backward<T>(const Tensor<T>&);                                                          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                     \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> transpose2d<T>(const Tensor<T>&);                                                  \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                               \
  template Tensor<T> concat_channels<T>(std::span<const Tensor<T>>);                                    \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, Index, Index);                                 \
  template Tensor<T> pad2d<T>(const Tensor<T>&, Pad2d);                                                 \
  template Tensor<T> crop2d<T>(const Tensor<T>&, Index, Index, Index, Index);                           \
  template Tensor<T> transpose_hw<T>(const Tensor<T>&);                                                 \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                          \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                         \
  template Tensor<T> detail::make_output<T>(const char*, Shape, std::vector<T>,                         \
                                            std::initializer_list<Tensor<T>>, detail::BackwardFn<T>);   \
  template Tensor<T> detail::make_output<T>(const char*, Shape, std::vector<T>,                         \
                                            const std::vector<Tensor<T>>&, detail::BackwardFn<T>);      \
  template std::vector<T>* detail::grad_sink<T>(const Tensor<T>&);

WAVEMIX_INSTANTIATE(float)
WAVEMIX_INSTANTIATE(double)

#undef WAVEMIX_INSTANTIATE

}  // namespace wavemix
