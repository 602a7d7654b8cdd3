#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "phonodec/error.hpp"
#include "phonodec/rng.hpp"
#include "phonodec/tensor.hpp"

namespace phonodec {

template <class T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor<T> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

enum class Mode { Train, Eval };

// Reverse-mode tape. Nodes are appended in execution order, so every input id is
// smaller than its consumer's id and one reverse sweep is a valid topological
// traversal.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}, "constant"); }

  // Differentiable input that is not a parameter; its gradient is read with grad().
  Var leaf(Tensor<T> value) { return push(std::move(value), true, nullptr, {}, "leaf"); }

  // Refers to p.value without copying; gradients accumulate straight into p.grad.
  Var parameter(Parameter<T>& p) {
    nodes_.push_back(Node{Tensor<T>(), &p.value, Tensor<T>(), true, &p, {}});
    return Var{nodes_.size() - 1};
  }

  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward, std::string_view op) {
    bool needs = false;
    for (Var v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : BackwardFn{}, op);
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.ref ? *n.ref : n.value;
  }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  const Tensor<T>& grad(Var v) const {
    const Node& n = node(v);
    if (n.param) return n.param->grad;
    if (n.grad.empty()) throw ValidationError("no gradient recorded for node " + std::to_string(v.id));
    return n.grad;
  }

  // Gradient accumulator for an input of the op currently running backward.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = node(v);
    if (n.param) return n.param->grad;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  const Tensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(param) into every Parameter::grad reached from `loss`.
  void backward(Var loss) {
    if (nodes_.empty() || loss.id >= nodes_.size()) {
      throw ValidationError("backward called before a forward pass was recorded");
    }
    Node& root = nodes_[loss.id];
    if (value(loss).size() != 1) {
      throw ValidationError("backward requires a scalar loss, got shape " + shape_string(value(loss).shape()));
    }
    for (std::size_t i = 0; i <= loss.id; ++i) nodes_[i].grad = Tensor<T>();
    if (root.param) {
      root.param->grad[0] += T{1};
      return;
    }
    root.grad = Tensor<T>(root.value.shape(), T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad || !n.backward) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;  // parameter nodes
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool needs_grad, Parameter<T>* param, BackwardFn backward, std::string_view op) {
    if (!value.all_finite()) {
      throw NumericError("non-finite value produced by " + std::string(op) +
                         (param ? " (parameter " + param->name + ")" : std::string()));
    }
    nodes_.push_back(Node{std::move(value), nullptr, Tensor<T>(), needs_grad, param, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw ValidationError("unknown tape node " + std::to_string(v.id));
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw ValidationError("unknown tape node " + std::to_string(v.id));
    return nodes_[v.id];
  }

  std::deque<Node> nodes_;  // stable references while recording
};

enum class Padding { Same, Valid };
enum class Activation { Relu, Sigmoid, Tanh, Softmax, Identity };

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Softmax: return "softmax";
    case Activation::Identity: return "identity";
  }
  return "?";
}

namespace ops {

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

}  // namespace detail

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require_same_shape(av, bv, "add");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      auto& d = t.grad_buffer(in);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  }, "add");
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require_same_shape(av, bv, "mul");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(a)) {
      const auto& bv = t.value(b);
      auto& d = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      const auto& av = t.value(a);
      auto& d = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  }, "mul");
}

template <class T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.values()) v *= factor;
  return tape.record(std::move(out), {a}, [a, factor](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& d = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  }, "scale");
}

template <class T>
Var sum(Tape<T>& tape, Var a) {
  double acc = 0.0;
  for (T v : tape.value(a).values()) acc += v;
  return tape.record(Tensor<T>(Shape{1}, static_cast<T>(acc)), {a}, [a](Tape<T>& t, std::size_t self) {
    const T g = t.upstream(self)[0];
    auto& d = t.grad_buffer(a);
    for (auto& v : d.values()) v += g;
  }, "sum");
}

template <class T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  Tensor<T> out = tape.value(a).reshaped(std::move(shape));
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& d = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  }, "reshape");
}

// Concatenation of two tensors flattened to 1-D, `a` first.
template <class T>
Var concat(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  std::vector<T> data;
  data.reserve(av.size() + bv.size());
  data.insert(data.end(), av.values().begin(), av.values().end());
  data.insert(data.end(), bv.values().begin(), bv.values().end());
  const std::size_t na = av.size();
  return tape.record(Tensor<T>::vector(std::move(data)), {a, b}, [a, b, na](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(a)) {
      auto& d = t.grad_buffer(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto& d = t.grad_buffer(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[na + i];
    }
  }, "concat");
}

// y = x W + b, with x flattened to length n and W shaped n x m.
template <class T>
Var dense(Tape<T>& tape, Var x, Var w, Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const auto& bv = tape.value(b);
  detail::require(wv.rank() == 2, "dense: weights must be a matrix, got " + shape_string(wv.shape()));
  const std::size_t n = wv.dim(0);
  const std::size_t m = wv.dim(1);
  detail::require(xv.size() == n, "dense: input length " + std::to_string(xv.size()) +
                                      " does not match weights " + shape_string(wv.shape()));
  detail::require(bv.size() == m, "dense: bias length " + std::to_string(bv.size()) + " != " + std::to_string(m));

  std::vector<double> acc(bv.values().begin(), bv.values().end());
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = xv[i];
    const T* row = wv.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) acc[j] += xi * row[j];
  }
  Tensor<T> out(Shape{m});
  for (std::size_t j = 0; j < m; ++j) {
    out[j] = static_cast<T>(acc[j]);
    // NaN/Inf anywhere in W or b always reaches the output (inf * 0 is NaN).
    if (!std::isfinite(out[j])) throw NumericError("dense: non-finite weights or bias");
  }
  return tape.record(std::move(out), {x, w, b}, [x, w, b, n, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(x)) {
      const auto& wv = t.value(w);
      auto& dx = t.grad_buffer(x);
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = wv.data() + i * m;
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += static_cast<double>(row[j]) * g[j];
        dx[i] += static_cast<T>(s);
      }
    }
    if (t.requires_grad(w)) {
      const auto& xv = t.value(x);
      auto& dw = t.grad_buffer(w);
      for (std::size_t i = 0; i < n; ++i) {
        const T xi = xv[i];
        if (xi == T{0}) continue;
        T* row = dw.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) row[j] += xi * g[j];
      }
    }
    if (t.requires_grad(b)) {
      auto& db = t.grad_buffer(b);
      for (std::size_t j = 0; j < m; ++j) db[j] += g[j];
    }
  }, "dense");
}

struct Conv2dGeometry {
  std::size_t out_h = 0, out_w = 0, pad_top = 0, pad_left = 0;
};

inline Conv2dGeometry conv2d_geometry(std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                                      Padding padding) {
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  Conv2dGeometry g;
  if (padding == Padding::Valid) {
    detail::require(k <= h && k <= w, "conv2d: kernel " + std::to_string(k) + " larger than input " +
                                          std::to_string(h) + "x" + std::to_string(w));
    g.out_h = (h - k) / stride + 1;
    g.out_w = (w - k) / stride + 1;
  } else {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + k;
    const std::size_t need_w = (g.out_w - 1) * stride + k;
    g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
    g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
    detail::require(k <= h + (need_h > h ? need_h - h : 0) && k <= w + (need_w > w ? need_w - w : 0),
                    "conv2d: kernel larger than padded input");
  }
  return g;
}

// input H x W x Cin, kernels k x k x Cin x Cout, optional bias Cout.
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::optional<Var> b, std::size_t stride = 1,
           Padding padding = Padding::Valid) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  detail::require(xv.rank() == 3, "conv2d: input must be H x W x C, got " + shape_string(xv.shape()));
  detail::require(wv.rank() == 4 && wv.dim(0) == wv.dim(1),
                  "conv2d: kernels must be k x k x Cin x Cout, got " + shape_string(wv.shape()));
  const std::size_t h = xv.dim(0), wd = xv.dim(1), cin = xv.dim(2);
  const std::size_t k = wv.dim(0), cout = wv.dim(3);
  detail::require(wv.dim(2) == cin, "conv2d: input has " + std::to_string(cin) + " channels but kernels expect " +
                                        std::to_string(wv.dim(2)) + " (input " + shape_string(xv.shape()) +
                                        ", kernels " + shape_string(wv.shape()) + ")");
  if (b) detail::require(tape.value(*b).size() == cout, "conv2d: bias length must equal Cout");
  const Conv2dGeometry geo = conv2d_geometry(h, wd, k, stride, padding);

  Tensor<T> out(Shape{geo.out_h, geo.out_w, cout});
  std::vector<double> acc(cout);
  for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
    for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
      if (b) {
        const auto& bv = tape.value(*b);
        for (std::size_t co = 0; co < cout; ++co) acc[co] = bv[co];
      } else {
        std::fill(acc.begin(), acc.end(), 0.0);
      }
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(geo.pad_top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(geo.pad_left);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
          const T* xp = xv.data() + (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin;
          const T* wp = wv.data() + (ky * k + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double xval = xp[ci];
            const T* wrow = wp + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) acc[co] += xval * wrow[co];
          }
        }
      }
      T* op = out.data() + (oy * geo.out_w + ox) * cout;
      for (std::size_t co = 0; co < cout; ++co) op[co] = static_cast<T>(acc[co]);
    }
  }

  auto backward = [x, w, b, stride, geo, h, wd, cin, k, cout](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    const bool need_x = t.requires_grad(x);
    const bool need_w = t.requires_grad(w);
    std::vector<double> dw(need_w ? wv.size() : 0, 0.0);
    std::vector<double> dx(need_x ? xv.size() : 0, 0.0);
    for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
        const T* gp = g.data() + (oy * geo.out_w + ox) * cout;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(geo.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(geo.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            const std::size_t xoff = (static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)) * cin;
            const std::size_t woff = (ky * k + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T* wrow = wv.data() + woff + ci * cout;
              if (need_x) {
                double s = 0.0;
                for (std::size_t co = 0; co < cout; ++co) s += static_cast<double>(wrow[co]) * gp[co];
                dx[xoff + ci] += s;
              }
              if (need_w) {
                const double xval = xv[xoff + ci];
                double* dwrow = dw.data() + woff + ci * cout;
                for (std::size_t co = 0; co < cout; ++co) dwrow[co] += xval * gp[co];
              }
            }
          }
        }
      }
    }
    if (need_x) {
      auto& d = t.grad_buffer(x);
      for (std::size_t i = 0; i < dx.size(); ++i) d[i] += static_cast<T>(dx[i]);
    }
    if (need_w) {
      auto& d = t.grad_buffer(w);
      for (std::size_t i = 0; i < dw.size(); ++i) d[i] += static_cast<T>(dw[i]);
    }
    if (b && t.requires_grad(*b)) {
      std::vector<double> db(cout, 0.0);
      for (std::size_t p = 0; p < geo.out_h * geo.out_w; ++p) {
        for (std::size_t co = 0; co < cout; ++co) db[co] += g[p * cout + co];
      }
      auto& d = t.grad_buffer(*b);
      for (std::size_t co = 0; co < cout; ++co) d[co] += static_cast<T>(db[co]);
    }
  };
  if (b) return tape.record(std::move(out), {x, w, *b}, std::move(backward), "conv2d");
  return tape.record(std::move(out), {x, w}, std::move(backward), "conv2d");
}

// 2-D max pooling with window == stride == `size`; partial windows at the border
// are kept (ceil mode) so odd and unit dimensions never vanish.
template <class T>
Var max_pool2d(Tape<T>& tape, Var x, std::size_t size = 2) {
  const auto& xv = tape.value(x);
  detail::require(xv.rank() == 3, "max_pool2d: input must be H x W x C");
  detail::require(size >= 1, "max_pool2d: window must be >= 1");
  const std::size_t h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  const std::size_t oh = (h + size - 1) / size, ow = (w + size - 1) / size;
  Tensor<T> out(Shape{oh, ow, c});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (oy * size * w + ox * size) * c + ch;
        for (std::size_t dy = 0; dy < size && oy * size + dy < h; ++dy) {
          for (std::size_t dx = 0; dx < size && ox * size + dx < w; ++dx) {
            const std::size_t idx = ((oy * size + dy) * w + ox * size + dx) * c + ch;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (oy * ow + ox) * c + ch;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& d = t.grad_buffer(x);
    for (std::size_t o = 0; o < g.size(); ++o) d[argmax[o]] += g[o];
  }, "max_pool2d");
}

// Causal dilated 1-D convolution over input L x Cin with kernels k x Cin x Cout:
//   out[t] = b + sum_j W[j] . in[t - (k-1-j) * dilation]
// Zero left-padding keeps the output length equal to L.
template <class T>
Var dilated_conv1d(Tape<T>& tape, Var x, Var w, std::optional<Var> b, std::size_t dilation) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  detail::require(xv.rank() == 2, "dilated_conv1d: input must be L x C, got " + shape_string(xv.shape()));
  detail::require(wv.rank() == 3, "dilated_conv1d: kernels must be k x Cin x Cout, got " + shape_string(wv.shape()));
  detail::require(dilation >= 1, "dilated_conv1d: dilation must be >= 1");
  const std::size_t len = xv.dim(0), cin = xv.dim(1);
  const std::size_t k = wv.dim(0), cout = wv.dim(2);
  detail::require(wv.dim(1) == cin, "dilated_conv1d: input has " + std::to_string(cin) +
                                        " channels but kernels expect " + std::to_string(wv.dim(1)));
  detail::require(dilation * (k - 1) < len, "dilated_conv1d: receptive span " + std::to_string(dilation * (k - 1)) +
                                                " exceeds sequence length " + std::to_string(len));
  if (b) detail::require(tape.value(*b).size() == cout, "dilated_conv1d: bias length must equal Cout");

  Tensor<T> out(Shape{len, cout});
  std::vector<double> acc(cout);
  for (std::size_t tt = 0; tt < len; ++tt) {
    if (b) {
      const auto& bv = tape.value(*b);
      for (std::size_t co = 0; co < cout; ++co) acc[co] = bv[co];
    } else {
      std::fill(acc.begin(), acc.end(), 0.0);
    }
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t back = (k - 1 - j) * dilation;
      if (back > tt) continue;
      const T* xp = xv.data() + (tt - back) * cin;
      const T* wp = wv.data() + j * cin * cout;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double xval = xp[ci];
        const T* wrow = wp + ci * cout;
        for (std::size_t co = 0; co < cout; ++co) acc[co] += xval * wrow[co];
      }
    }
    for (std::size_t co = 0; co < cout; ++co) out[tt * cout + co] = static_cast<T>(acc[co]);
  }

  auto backward = [x, w, b, dilation, len, cin, k, cout](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    const bool need_x = t.requires_grad(x);
    const bool need_w = t.requires_grad(w);
    std::vector<double> dx(need_x ? xv.size() : 0, 0.0);
    std::vector<double> dw(need_w ? wv.size() : 0, 0.0);
    for (std::size_t tt = 0; tt < len; ++tt) {
      const T* gp = g.data() + tt * cout;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t back = (k - 1 - j) * dilation;
        if (back > tt) continue;
        const std::size_t xoff = (tt - back) * cin;
        const std::size_t woff = j * cin * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const T* wrow = wv.data() + woff + ci * cout;
          if (need_x) {
            double s = 0.0;
            for (std::size_t co = 0; co < cout; ++co) s += static_cast<double>(wrow[co]) * gp[co];
            dx[xoff + ci] += s;
          }
          if (need_w) {
            const double xval = xv[xoff + ci];
            double* dwrow = dw.data() + woff + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) dwrow[co] += xval * gp[co];
          }
        }
      }
    }
    if (need_x) {
      auto& d = t.grad_buffer(x);
      for (std::size_t i = 0; i < dx.size(); ++i) d[i] += static_cast<T>(dx[i]);
    }
    if (need_w) {
      auto& d = t.grad_buffer(w);
      for (std::size_t i = 0; i < dw.size(); ++i) d[i] += static_cast<T>(dw[i]);
    }
    if (b && t.requires_grad(*b)) {
      std::vector<double> db(cout, 0.0);
      for (std::size_t tt = 0; tt < len; ++tt) {
        for (std::size_t co = 0; co < cout; ++co) db[co] += g[tt * cout + co];
      }
      auto& d = t.grad_buffer(*b);
      for (std::size_t co = 0; co < cout; ++co) d[co] += static_cast<T>(db[co]);
    }
  };
  if (b) return tape.record(std::move(out), {x, w, *b}, std::move(backward), "dilated_conv1d");
  return tape.record(std::move(out), {x, w}, std::move(backward), "dilated_conv1d");
}

template <class T>
Var relu(Tape<T>& tape, Var a) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& in = t.value(a);
    auto& d = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > T{0}) d[i] += g[i];
    }
  }, "relu");
}

template <class T>
Var sigmoid(Tape<T>& tape, Var a) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.values()) {
    // Split by sign so exp never overflows.
    v = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  }
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.value(Var{self});
    auto& d = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (T{1} - y[i]);
  }, "sigmoid");
}

template <class T>
Var tanh(Tape<T>& tape, Var a) {
  Tensor<T> out = tape.value(a);
  for (auto& v : out.values()) v = std::tanh(v);
  return tape.record(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.value(Var{self});
    auto& d = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (T{1} - y[i] * y[i]);
  }, "tanh");
}

// Softmax over the final axis, with max subtraction.
template <class T>
Var softmax(Tape<T>& tape, Var a) {
  Tensor<T> out = tape.value(a);
  const std::size_t width = out.shape().empty() ? 1 : out.shape().back();
  const std::size_t rows = out.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * width;
    const T mx = *std::max_element(row, row + width);
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      row[i] = std::exp(row[i] - mx);
      total += row[i];
    }
    for (std::size_t i = 0; i < width; ++i) row[i] = static_cast<T>(row[i] / total);
  }
  return tape.record(std::move(out), {a}, [a, width, rows](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.value(Var{self});
    auto& d = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * width;
      double dot = 0.0;
      for (std::size_t i = 0; i < width; ++i) dot += static_cast<double>(g[off + i]) * y[off + i];
      for (std::size_t i = 0; i < width; ++i) d[off + i] += static_cast<T>(y[off + i] * (g[off + i] - dot));
    }
  }, "softmax");
}

template <class T>
Var activation(Tape<T>& tape, Var a, Activation kind) {
  switch (kind) {
    case Activation::Relu: return relu(tape, a);
    case Activation::Sigmoid: return sigmoid(tape, a);
    case Activation::Tanh: return tanh(tape, a);
    case Activation::Softmax: return softmax(tape, a);
    case Activation::Identity: return a;
  }
  return a;
}

// Inverted dropout: in Train mode each element is zeroed with probability `rate`
// and survivors are scaled by 1/(1-rate). Eval mode is the identity.
template <class T>
Var dropout(Tape<T>& tape, Var a, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ValidationError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(tape.value(a).shape());
  for (auto& m : mask.values()) m = rng.uniform() < rate ? T{0} : keep_scale;
  Tensor<T> out = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return tape.record(std::move(out), {a}, [a, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& d = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * mask[i];
  }, "dropout");
}

inline constexpr double kProbabilityFloor = 1e-12;

// Categorical cross-entropy -sum(y log p) of softmax outputs against a one-hot target.
template <class T>
Var cross_entropy(Tape<T>& tape, Var probs, const Tensor<T>& target) {
  const auto& p = tape.value(probs);
  detail::require_same_shape(p, target, "cross_entropy");
  double ones = 0.0;
  for (T v : target.values()) {
    detail::require(v == T{0} || v == T{1}, "cross_entropy: target must be one-hot");
    ones += v;
  }
  detail::require(ones == 1.0, "cross_entropy: target must be one-hot");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (target[i] != T{0}) loss -= std::log(std::max<double>(p[i], kProbabilityFloor));
  }
  return tape.record(Tensor<T>(Shape{1}, static_cast<T>(loss)), {probs},
                     [probs, target](Tape<T>& t, std::size_t self) {
                       const T g = t.upstream(self)[0];
                       const auto& p = t.value(probs);
                       auto& d = t.grad_buffer(probs);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         if (target[i] != T{0} && static_cast<double>(p[i]) > kProbabilityFloor) {
                           d[i] -= g * target[i] / p[i];
                         }
                       }
                     },
                     "cross_entropy");
}

// Mean of squared elementwise differences.
template <class T>
Var mean_squared_error(Tape<T>& tape, Var pred, const Tensor<T>& target) {
  const auto& p = tape.value(pred);
  if (p.size() != target.size()) {
    throw ValidationError("mean_squared_error: shape mismatch " + shape_string(p.shape()) + " vs " +
                          shape_string(target.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = static_cast<double>(p[i]) - target[i];
    acc += diff * diff;
  }
  const double n = static_cast<double>(p.size());
  return tape.record(Tensor<T>(Shape{1}, static_cast<T>(acc / n)), {pred},
                     [pred, target, n](Tape<T>& t, std::size_t self) {
                       const double g = t.upstream(self)[0];
                       const auto& p = t.value(pred);
                       auto& d = t.grad_buffer(pred);
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         d[i] += static_cast<T>(g * 2.0 * (static_cast<double>(p[i]) - target[i]) / n);
                       }
                     },
                     "mean_squared_error");
}

}  // namespace ops

}  // namespace phonodec
