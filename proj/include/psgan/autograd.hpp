#pragma once

// Minimal reverse-mode automatic differentiation over dense NCHW tensors.
//
// Every tensor owns a flat Eigen array in NCHW order. Operations record a
// closure that scatters the output gradient into their parents; backward()
// replays those closures in reverse topological order. Scalar is a template
// parameter so that gradient checks can run in double while training uses
// float.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace psgan::ag {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  Eigen::Index size() const { return Eigen::Index(n) * c * h * w; }
  Eigen::Index plane() const { return Eigen::Index(h) * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array value;
  Array grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Array& grad_buffer() {
    if (grad.size() != value.size()) grad = Array::Zero(value.size());
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using Array = typename Node<Scalar>::Array;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(const Shape& shape, Array values) {
    check_size(shape, values);
    auto node = std::make_shared<Node<Scalar>>();
    node->shape = shape;
    node->value = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor zeros(const Shape& shape) { return constant(shape, Array::Zero(shape.size())); }

  static Tensor filled(const Shape& shape, Scalar v) {
    return constant(shape, Array::Constant(shape.size(), v));
  }

  static Tensor scalar(Scalar v) { return filled(Shape{}, v); }

  /// Leaf that accumulates gradients.
  static Tensor parameter(const Shape& shape, Array values) {
    Tensor t = constant(shape, std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  const Array& value() const { return node_->value; }
  Array& mutable_value() { return node_->value; }
  Scalar item() const { return node_->value(0); }
  bool requires_grad() const { return node_->requires_grad; }

  const Array& grad() const {
    node_->grad_buffer();
    return node_->grad;
  }
  void zero_grad() { node_->grad = Array(); }

  Tensor detach() const { return constant(shape(), value()); }
  Node<Scalar>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

  /// Back-propagates from this tensor, seeding its gradient with ones.
  void backward() const {
    std::vector<Node<Scalar>*> order;
    std::unordered_set<Node<Scalar>*> seen;
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
    if (!node_->requires_grad) return;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node<Scalar>* p = n->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<Scalar>* n = *it;
      if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
    }
  }

 private:
  static void check_size(const Shape& shape, const Array& values) {
    if (values.size() != shape.size())
      throw std::invalid_argument("tensor value count does not match shape " + shape.str());
  }

  NodePtr node_;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> make_result(const Shape& shape, typename Node<Scalar>::Array value,
                           std::vector<Tensor<Scalar>> inputs,
                           std::function<void(Node<Scalar>&)> backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = shape;
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward_fn = std::move(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
}

template <typename Scalar>
using MatMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return detail::make_result<Scalar>(a.shape(), a.value() + b.value(), {a, b}, [](Node<Scalar>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad_buffer() += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::make_result<Scalar>(a.shape(), a.value() - b.value(), {a, b}, [](Node<Scalar>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad;
    if (self.parents[1]->requires_grad) self.parents[1]->grad_buffer() -= self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  return detail::make_result<Scalar>(a.shape(), a.value() * b.value(), {a, b}, [](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer() += self.grad * pb.value;
    if (pb.requires_grad) pb.grad_buffer() += self.grad * pa.value;
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return detail::make_result<Scalar>(a.shape(), a.value() * s, {a}, [s](Node<Scalar>& self) {
    self.parents[0]->grad_buffer() += self.grad * s;
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  return detail::make_result<Scalar>(a.shape(), a.value().max(Scalar(0)), {a}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.grad_buffer() += (p.value > Scalar(0)).select(self.grad, Scalar(0));
  });
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& a, Scalar slope) {
  typename Node<Scalar>::Array out = (a.value() > Scalar(0)).select(a.value(), a.value() * slope);
  return detail::make_result<Scalar>(a.shape(), std::move(out), {a}, [slope](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.grad_buffer() += (p.value > Scalar(0)).select(self.grad, self.grad * slope);
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  return detail::make_result<Scalar>(a.shape(), a.value().tanh(), {a}, [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer() += self.grad * (Scalar(1) - self.value.square());
  });
}

/// [N,1,H,W] -> [N,C,H,W] by repeating the single channel.
template <typename Scalar>
Tensor<Scalar> broadcast_channels(const Tensor<Scalar>& a, int channels) {
  const Shape in = a.shape();
  if (in.c != 1) throw std::invalid_argument("broadcast_channels: input must have one channel");
  Shape out = in;
  out.c = channels;
  const Eigen::Index plane = in.plane();
  typename Node<Scalar>::Array v(out.size());
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < channels; ++c)
      v.segment((Eigen::Index(n) * channels + c) * plane, plane) = a.value().segment(n * plane, plane);
  return detail::make_result<Scalar>(out, std::move(v), {a}, [channels, plane](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const int batch = self.shape.n;
    for (int n = 0; n < batch; ++n)
      for (int c = 0; c < channels; ++c)
        g.segment(n * plane, plane) += self.grad.segment((Eigen::Index(n) * channels + c) * plane, plane);
  });
}

template <typename Scalar>
Tensor<Scalar> upsample_nearest(const Tensor<Scalar>& a, int factor) {
  const Shape in = a.shape();
  Shape out{in.n, in.c, in.h * factor, in.w * factor};
  typename Node<Scalar>::Array v(out.size());
  const Eigen::Index planes = Eigen::Index(in.n) * in.c;
  for (Eigen::Index p = 0; p < planes; ++p)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        v(p * out.plane() + Eigen::Index(y) * out.w + x) =
            a.value()(p * in.plane() + Eigen::Index(y / factor) * in.w + x / factor);
  return detail::make_result<Scalar>(out, std::move(v), {a}, [factor, planes](Node<Scalar>& self) {
    auto& parent = *self.parents[0];
    auto& g = parent.grad_buffer();
    const Shape& is = parent.shape;
    const Shape& os = self.shape;
    for (Eigen::Index p = 0; p < planes; ++p)
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x)
          g(p * is.plane() + Eigen::Index(y / factor) * is.w + x / factor) +=
              self.grad(p * os.plane() + Eigen::Index(y) * os.w + x);
  });
}

// ---------------------------------------------------------------------------
// Convolution (zero padding, square kernels) via im2col + GEMM.

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      int stride, int pad) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w)
    throw std::invalid_argument("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  const int k = ws.h;
  const int out_h = (xs.h + 2 * pad - k) / stride + 1;
  const int out_w = (xs.w + 2 * pad - k) / stride + 1;
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("conv2d: input " + xs.str() + " too small");
  const Eigen::Index positions = Eigen::Index(out_h) * out_w;
  const Eigen::Index patch = Eigen::Index(xs.c) * k * k;
  const int out_c = ws.n;
  Shape os{xs.n, out_c, out_h, out_w};

  auto cols = std::make_shared<std::vector<Matrix>>(xs.n);
  typename Node<Scalar>::Array out(os.size());
  detail::ConstMatMap<Scalar> wmat(weight.value().data(), patch, out_c);
  for (int n = 0; n < xs.n; ++n) {
    Matrix& col = (*cols)[n];
    col.resize(positions, patch);
    const Scalar* src = x.value().data() + Eigen::Index(n) * xs.c * xs.plane();
    for (int ci = 0; ci < xs.c; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          Scalar* dst = col.data() + ((Eigen::Index(ci) * k + ky) * k + kx) * positions;
          const Scalar* plane = src + Eigen::Index(ci) * xs.plane();
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * stride + ky - pad;
            Scalar* row = dst + Eigen::Index(oy) * out_w;
            if (iy < 0 || iy >= xs.h) {
              std::fill(row, row + out_w, Scalar(0));
              continue;
            }
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride + kx - pad;
              row[ox] = (ix < 0 || ix >= xs.w) ? Scalar(0) : plane[Eigen::Index(iy) * xs.w + ix];
            }
          }
        }
    detail::MatMap<Scalar> o(out.data() + Eigen::Index(n) * out_c * positions, positions, out_c);
    o.noalias() = col * wmat;
    if (bias.defined()) o.rowwise() += bias.value().matrix().transpose();
  }

  std::vector<Tensor<Scalar>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result<Scalar>(
      os, std::move(out), std::move(inputs),
      [cols, xs, k, stride, pad, out_h, out_w, positions, patch, out_c](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        Node<Scalar>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        detail::ConstMatMap<Scalar> wmat(pw.value.data(), patch, out_c);
        Matrix dcol;
        for (int n = 0; n < xs.n; ++n) {
          detail::ConstMatMap<Scalar> dout(self.grad.data() + Eigen::Index(n) * out_c * positions, positions,
                                           out_c);
          if (pw.requires_grad) {
            detail::MatMap<Scalar> dw(pw.grad_buffer().data(), patch, out_c);
            dw.noalias() += (*cols)[n].transpose() * dout;
          }
          if (pb && pb->requires_grad) pb->grad_buffer() += dout.colwise().sum().transpose().array();
          if (!px.requires_grad) continue;
          dcol.noalias() = dout * wmat.transpose();
          Scalar* dst = px.grad_buffer().data() + Eigen::Index(n) * xs.c * xs.plane();
          for (int ci = 0; ci < xs.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const Scalar* src = dcol.data() + ((Eigen::Index(ci) * k + ky) * k + kx) * positions;
                Scalar* plane = dst + Eigen::Index(ci) * xs.plane();
                for (int oy = 0; oy < out_h; ++oy) {
                  const int iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= xs.h) continue;
                  for (int ox = 0; ox < out_w; ++ox) {
                    const int ix = ox * stride + kx - pad;
                    if (ix >= 0 && ix < xs.w) plane[Eigen::Index(iy) * xs.w + ix] += src[Eigen::Index(oy) * out_w + ox];
                  }
                }
              }
        }
        // Release im2col buffers once consumed.
        cols->clear();
      });
}

// ---------------------------------------------------------------------------
// Instance normalization without affine parameters.

template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, Scalar eps = Scalar(1e-5)) {
  const Shape s = x.shape();
  const Eigen::Index plane = s.plane();
  const Eigen::Index planes = Eigen::Index(s.n) * s.c;
  typename Node<Scalar>::Array out(s.size());
  auto inv_std = std::make_shared<typename Node<Scalar>::Array>(planes);
  for (Eigen::Index p = 0; p < planes; ++p) {
    auto seg = x.value().segment(p * plane, plane);
    const Scalar mean = seg.mean();
    const Scalar var = (seg - mean).square().mean();
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)(p) = is;
    out.segment(p * plane, plane) = (seg - mean) * is;
  }
  return detail::make_result<Scalar>(s, std::move(out), {x}, [inv_std, plane, planes](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (Eigen::Index p = 0; p < planes; ++p) {
      auto dy = self.grad.segment(p * plane, plane);
      auto y = self.value.segment(p * plane, plane);
      const Scalar mean_dy = dy.mean();
      const Scalar mean_dyy = (dy * y).mean();
      g.segment(p * plane, plane) += (*inv_std)(p) * (dy - mean_dy - y * mean_dyy);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  const Scalar inv = Scalar(1) / Scalar(a.value().size());
  return detail::make_result<Scalar>(Shape{}, Node<Scalar>::Array::Constant(1, a.value().mean()), {a},
                                     [inv](Node<Scalar>& self) { self.parents[0]->grad_buffer() += self.grad(0) * inv; });
}

/// mean(|a - b|)
template <typename Scalar>
Tensor<Scalar> mean_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mean_abs_diff");
  const Scalar inv = Scalar(1) / Scalar(a.value().size());
  const Scalar v = (a.value() - b.value()).abs().mean();
  return detail::make_result<Scalar>(
      Shape{}, Node<Scalar>::Array::Constant(1, v), {a, b}, [inv](Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        typename Node<Scalar>::Array sign = (pa.value - pb.value).sign() * (self.grad(0) * inv);
        if (pa.requires_grad) pa.grad_buffer() += sign;
        if (pb.requires_grad) pb.grad_buffer() -= sign;
      });
}

/// mean((a - b)^2)
template <typename Scalar>
Tensor<Scalar> mean_sq_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mean_sq_diff");
  const Scalar inv = Scalar(1) / Scalar(a.value().size());
  const Scalar v = (a.value() - b.value()).square().mean();
  return detail::make_result<Scalar>(
      Shape{}, Node<Scalar>::Array::Constant(1, v), {a, b}, [inv](Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        typename Node<Scalar>::Array d = (pa.value - pb.value) * (Scalar(2) * inv * self.grad(0));
        if (pa.requires_grad) pa.grad_buffer() += d;
        if (pb.requires_grad) pb.grad_buffer() -= d;
      });
}

/// -mean(log clamp(sigmoid(z), eps, 1-eps)) for real targets, or
/// -mean(log(1 - clamp(sigmoid(z), eps, 1-eps))) for fake targets.
/// Clamped entries pass no gradient.
template <typename Scalar>
Tensor<Scalar> neg_log_likelihood(const Tensor<Scalar>& logits, bool real, Scalar eps) {
  using Array = typename Node<Scalar>::Array;
  Array prob = (Scalar(1) + (-logits.value()).exp()).inverse();
  Array clamped = prob.max(eps).min(Scalar(1) - eps);
  Array terms = real ? Array(-clamped.log()) : Array(-(Scalar(1) - clamped).log());
  const Scalar inv = Scalar(1) / Scalar(terms.size());
  auto p = std::make_shared<Array>(std::move(prob));
  return detail::make_result<Scalar>(
      Shape{}, Array::Constant(1, terms.mean()), {logits}, [p, real, eps, inv](Node<Scalar>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const Scalar s = self.grad(0) * inv;
        for (Eigen::Index i = 0; i < p->size(); ++i) {
          const Scalar q = (*p)(i);
          if (q < eps || q > Scalar(1) - eps) continue;
          g(i) += s * (real ? q - Scalar(1) : q);
        }
      });
}

// ---------------------------------------------------------------------------
// Sampling

/// Bilinearly samples a [1,C,H,W] tensor at K fractional (x, y) points,
/// returning [1,C,1,K]. Points must satisfy 0 <= x <= W-1, 0 <= y <= H-1.
template <typename Scalar, typename Points>
Tensor<Scalar> bilinear_gather(const Tensor<Scalar>& img, const Points& points) {
  const Shape s = img.shape();
  if (s.n != 1) throw std::invalid_argument("bilinear_gather: batch must be 1");
  const Eigen::Index count = points.rows();
  struct Tap {
    Eigen::Index index[4];
    Scalar weight[4];
  };
  auto taps = std::make_shared<std::vector<Tap>>(count);
  for (Eigen::Index k = 0; k < count; ++k) {
    const double px = points(k, 0);
    const double py = points(k, 1);
    if (!(px >= 0 && py >= 0 && px <= s.w - 1 && py <= s.h - 1))
      throw std::out_of_range("bilinear_gather: point " + std::to_string(k) + " outside image bounds");
    const int x0 = std::min(int(std::floor(px)), s.w - 1);
    const int y0 = std::min(int(std::floor(py)), s.h - 1);
    const int x1 = std::min(x0 + 1, s.w - 1);
    const int y1 = std::min(y0 + 1, s.h - 1);
    const Scalar fx = Scalar(px - x0);
    const Scalar fy = Scalar(py - y0);
    Tap& t = (*taps)[k];
    t.index[0] = Eigen::Index(y0) * s.w + x0;
    t.index[1] = Eigen::Index(y0) * s.w + x1;
    t.index[2] = Eigen::Index(y1) * s.w + x0;
    t.index[3] = Eigen::Index(y1) * s.w + x1;
    t.weight[0] = (1 - fx) * (1 - fy);
    t.weight[1] = fx * (1 - fy);
    t.weight[2] = (1 - fx) * fy;
    t.weight[3] = fx * fy;
  }
  Shape os{1, s.c, 1, int(count)};
  typename Node<Scalar>::Array out(os.size());
  for (int c = 0; c < s.c; ++c)
    for (Eigen::Index k = 0; k < count; ++k) {
      const Tap& t = (*taps)[k];
      Scalar acc = 0;
      for (int q = 0; q < 4; ++q) acc += t.weight[q] * img.value()(c * s.plane() + t.index[q]);
      out(c * count + k) = acc;
    }
  return detail::make_result<Scalar>(os, std::move(out), {img}, [taps, s, count](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int c = 0; c < s.c; ++c)
      for (Eigen::Index k = 0; k < count; ++k) {
        const Tap& t = (*taps)[k];
        for (int q = 0; q < 4; ++q) g(c * s.plane() + t.index[q]) += t.weight[q] * self.grad(c * count + k);
      }
  });
}

// ---------------------------------------------------------------------------
// Operator sugar

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) {
  return scale(a, s);
}

}  // namespace psgan::ag
