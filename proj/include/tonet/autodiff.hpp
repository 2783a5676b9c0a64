#pragma once

// Reverse-mode automatic differentiation over a tape of primitives.
//
// A Graph records primitives in application order, which is already a
// topological order, so backward() is a single reverse sweep. Gradients
// accumulate additively when a node feeds several consumers. A graph and
// its tensors belong to one thread for the duration of a forward/backward
// pass; distinct graphs are independent.

#include "tonet/tensor.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tonet {

using NodeId = std::size_t;

// Running statistics for one batch_norm layer. The tensors live in the
// caller's parameter store; training-mode forward passes update them in
// place.
struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
};

// Attributes for apply(). Only the fields a primitive documents are read.
struct Attrs {
  int kernel_h = 0;
  int kernel_w = 0;
  int kernel = 0;
  int pad_h = 0;
  int pad_w = 0;
  int pad = 0;
  int axis = -1;
  double eps = 1e-5;
  double momentum = 0.9;
  bool training = true;
  double value = 0.0;
  double clamp_eps = 1e-7;
  Shape order;
  Shape shape;
  std::optional<NodeId> paired_pool;
  BatchNormState* bn_state = nullptr;
};

class Graph {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false, std::string name = {}) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.is_leaf = true;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  Tensor& mutable_value(NodeId id) { return nodes_.at(id).value; }

  const Tensor& grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.numel() == 0) throw std::logic_error("gradient not computed; run backward first");
    return n.grad;
  }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  std::size_t size() const { return nodes_.size(); }

  // Records and evaluates one primitive. Shape errors name the primitive and
  // the offending shapes; an unknown primitive id is rejected.
  NodeId apply(std::string_view kind, const std::vector<NodeId>& inputs, const Attrs& attrs = {});

  // Reverse sweep from a scalar loss. Every grad-requiring leaf ends up with
  // a gradient tensor of its own shape; leaves the loss does not depend on
  // get zeros.
  void backward(NodeId loss) {
    const Tensor& lv = value(loss);
    if (lv.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(lv.shape));
    for (Node& n : nodes_) {
      if (n.requires_grad)
        n.grad = Tensor(n.value.shape, 0.0);
      else
        n.grad = Tensor();
    }
    if (!nodes_[loss].requires_grad)
      nodes_[loss].grad = Tensor(lv.shape, 0.0);
    nodes_[loss].grad.values[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward_fn && n.grad.numel() != 0) n.backward_fn(*this, i);
    }
  }

  // Gradient table keyed by parameter name (named grad-requiring leaves).
  std::map<std::string, Tensor> named_gradients() const {
    std::map<std::string, Tensor> out;
    for (const Node& n : nodes_)
      if (n.is_leaf && n.requires_grad && !n.name.empty()) out[n.name] = n.grad;
    return out;
  }

 private:
  friend struct OpAccess;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodeId> inputs;
    std::function<void(Graph&, NodeId)> backward_fn;
    bool requires_grad = false;
    bool is_leaf = false;
    std::string name;
    std::vector<std::size_t> pool_argmax;  // max_pool2d only
    Shape pool_input_shape;                // max_pool2d only
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;

  Tensor& grad_ref(NodeId id) { return nodes_[id].grad; }
  Node& node(NodeId id) { return nodes_[id]; }

  NodeId record(Tensor out, std::vector<NodeId> inputs,
                std::function<void(Graph&, NodeId)> backward_fn) {
    Node n;
    n.value = std::move(out);
    n.inputs = std::move(inputs);
    bool req = false;
    for (NodeId in : n.inputs) req = req || nodes_[in].requires_grad;
    n.requires_grad = req && grad_enabled_;
    if (n.requires_grad) n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }
};

namespace detail {

[[noreturn]] inline void op_fail(std::string_view op, const std::string& msg) {
  throw std::invalid_argument(std::string(op) + ": " + msg);
}

inline void require(bool cond, std::string_view op, const std::string& msg) {
  if (!cond) op_fail(op, msg);
}

inline void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), op,
          "shape mismatch between " + shape_str(a.shape) + " and " + shape_str(b.shape));
}

inline void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst.values[i] += src.values[i];
}

}  // namespace detail

struct OpAccess {
  static Graph::Node& node(Graph& g, NodeId id) { return g.node(id); }
  static Tensor& grad(Graph& g, NodeId id) { return g.grad_ref(id); }
  static bool wants_grad(Graph& g, NodeId id) { return g.node(id).requires_grad; }
  static NodeId record(Graph& g, Tensor out, std::vector<NodeId> inputs,
                       std::function<void(Graph&, NodeId)> fn) {
    return g.record(std::move(out), std::move(inputs), std::move(fn));
  }
};

namespace ops {

inline NodeId reshape(Graph& g, NodeId x, const Shape& shape);

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline NodeId add(Graph& g, NodeId a, NodeId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  detail::require_same_shape("add", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] += tb.values[i];
  return OpAccess::record(g, std::move(out), {a, b}, [a, b](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    if (OpAccess::wants_grad(gr, a)) detail::accumulate(OpAccess::grad(gr, a), go);
    if (OpAccess::wants_grad(gr, b)) detail::accumulate(OpAccess::grad(gr, b), go);
  });
}

inline NodeId mul(Graph& g, NodeId a, NodeId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  detail::require_same_shape("mul", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] *= tb.values[i];
  return OpAccess::record(g, std::move(out), {a, b}, [a, b](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const Tensor& ta = gr.value(a);
    const Tensor& tb = gr.value(b);
    if (OpAccess::wants_grad(gr, a)) {
      Tensor& ga = OpAccess::grad(gr, a);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga.values[i] += go.values[i] * tb.values[i];
    }
    if (OpAccess::wants_grad(gr, b)) {
      Tensor& gb = OpAccess::grad(gr, b);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb.values[i] += go.values[i] * ta.values[i];
    }
  });
}

inline NodeId scale(Graph& g, NodeId x, double s) {
  Tensor out = g.value(x);
  for (double& v : out.values) v *= s;
  return OpAccess::record(g, std::move(out), {x}, [x, s](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    Tensor& gx = OpAccess::grad(gr, x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.values[i] += s * go.values[i];
  });
}

inline NodeId relu(Graph& g, NodeId x) {
  Tensor out = g.value(x);
  for (double& v : out.values) v = v > 0.0 ? v : 0.0;
  return OpAccess::record(g, std::move(out), {x}, [x](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const Tensor& tx = gr.value(x);
    Tensor& gx = OpAccess::grad(gr, x);
    for (std::size_t i = 0; i < gx.numel(); ++i)
      if (tx.values[i] > 0.0) gx.values[i] += go.values[i];
  });
}

inline NodeId sigmoid(Graph& g, NodeId x) {
  Tensor out = g.value(x);
  for (double& v : out.values) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  return OpAccess::record(g, std::move(out), {x}, [x](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const Tensor& y = gr.value(self);
    Tensor& gx = OpAccess::grad(gr, x);
    for (std::size_t i = 0; i < gx.numel(); ++i)
      gx.values[i] += go.values[i] * y.values[i] * (1.0 - y.values[i]);
  });
}

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

inline NodeId matmul(Graph& g, NodeId a, NodeId b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.rank() == 2 && tb.rank() == 2) {
    detail::require(ta.shape[1] == tb.shape[0], "matmul",
                    "inner dimensions disagree: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    const std::size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor out(Shape{m, n});
    detail::gemm_nn(ta.values.data(), tb.values.data(), out.values.data(), m, k, n);
    return OpAccess::record(g, std::move(out), {a, b}, [a, b](Graph& gr, NodeId self) {
      const Tensor& go = OpAccess::grad(gr, self);
      const Tensor& ta = gr.value(a);
      const Tensor& tb = gr.value(b);
      const std::size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
      if (OpAccess::wants_grad(gr, a))
        detail::gemm_nt(go.values.data(), tb.values.data(), OpAccess::grad(gr, a).values.data(), m, n, k);
      if (OpAccess::wants_grad(gr, b))
        detail::gemm_tn(ta.values.data(), go.values.data(), OpAccess::grad(gr, b).values.data(), m, k, n);
    });
  }
  if (ta.rank() == 3 && tb.rank() == 3) {
    detail::require(ta.shape[0] == tb.shape[0] && ta.shape[2] == tb.shape[1], "matmul",
                    "batched shapes disagree: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    const std::size_t bs = ta.shape[0], m = ta.shape[1], k = ta.shape[2], n = tb.shape[2];
    Tensor out(Shape{bs, m, n});
    for (std::size_t i = 0; i < bs; ++i)
      detail::gemm_nn(ta.values.data() + i * m * k, tb.values.data() + i * k * n,
                      out.values.data() + i * m * n, m, k, n);
    return OpAccess::record(g, std::move(out), {a, b}, [a, b](Graph& gr, NodeId self) {
      const Tensor& go = OpAccess::grad(gr, self);
      const Tensor& ta = gr.value(a);
      const Tensor& tb = gr.value(b);
      const std::size_t bs = ta.shape[0], m = ta.shape[1], k = ta.shape[2], n = tb.shape[2];
      for (std::size_t i = 0; i < bs; ++i) {
        if (OpAccess::wants_grad(gr, a))
          detail::gemm_nt(go.values.data() + i * m * n, tb.values.data() + i * k * n,
                          OpAccess::grad(gr, a).values.data() + i * m * k, m, n, k);
        if (OpAccess::wants_grad(gr, b))
          detail::gemm_tn(ta.values.data() + i * m * k, go.values.data() + i * m * n,
                          OpAccess::grad(gr, b).values.data() + i * k * n, m, k, n);
      }
    });
  }
  detail::op_fail("matmul", "expects two rank-2 or two rank-3 tensors, got " +
                                shape_str(ta.shape) + " and " + shape_str(tb.shape));
}

// y = x W + b with x (R, in), W (in, out), b (out).
inline NodeId linear(Graph& g, NodeId x, NodeId w, NodeId b) {
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(w);
  const Tensor& tb = g.value(b);
  detail::require(tx.rank() == 2 && tw.rank() == 2 && tb.rank() == 1, "linear",
                  "expects x rank 2, W rank 2, b rank 1; got " + shape_str(tx.shape) + ", " +
                      shape_str(tw.shape) + ", " + shape_str(tb.shape));
  detail::require(tx.shape[1] == tw.shape[0] && tw.shape[1] == tb.shape[0], "linear",
                  "shape mismatch: x " + shape_str(tx.shape) + ", W " + shape_str(tw.shape) +
                      ", b " + shape_str(tb.shape));
  const std::size_t r = tx.shape[0], in = tx.shape[1], out_w = tw.shape[1];
  Tensor out(Shape{r, out_w});
  for (std::size_t i = 0; i < r; ++i)
    std::copy(tb.values.begin(), tb.values.end(), out.values.begin() + i * out_w);
  detail::gemm_nn(tx.values.data(), tw.values.data(), out.values.data(), r, in, out_w);
  return OpAccess::record(g, std::move(out), {x, w, b}, [x, w, b](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const Tensor& tx = gr.value(x);
    const Tensor& tw = gr.value(w);
    const std::size_t r = tx.shape[0], in = tx.shape[1], out_w = tw.shape[1];
    if (OpAccess::wants_grad(gr, x))
      detail::gemm_nt(go.values.data(), tw.values.data(), OpAccess::grad(gr, x).values.data(), r, out_w, in);
    if (OpAccess::wants_grad(gr, w))
      detail::gemm_tn(tx.values.data(), go.values.data(), OpAccess::grad(gr, w).values.data(), r, in, out_w);
    if (OpAccess::wants_grad(gr, b)) {
      Tensor& gb = OpAccess::grad(gr, b);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < out_w; ++j) gb.values[j] += go.values[i * out_w + j];
    }
  });
}

// ---------------------------------------------------------------------------
// convolutions (zero padding, stride 1)
// ---------------------------------------------------------------------------

namespace conv_detail {

// im2col for one sample: x (C, H, W) -> cols (C*kh*kw, Ho*Wo)
inline void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w,
                   std::size_t kh, std::size_t kw, std::size_t ph, std::size_t pw,
                   std::size_t ho, std::size_t wo, double* cols) {
  const std::size_t plane = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t dh = 0; dh < kh; ++dh) {
      for (std::size_t dw = 0; dw < kw; ++dw) {
        double* dst = cols + ((ch * kh + dh) * kw + dw) * plane;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + dh) - static_cast<std::ptrdiff_t>(ph);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst + oh * wo, dst + (oh + 1) * wo, 0.0);
            continue;
          }
          const double* src = x + (ch * h + ih) * w;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + dw) - static_cast<std::ptrdiff_t>(pw);
            dst[oh * wo + ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

// scatter-add cols (C*kh*kw, Ho*Wo) back into dx (C, H, W)
inline void col2im(const double* cols, std::size_t c, std::size_t h, std::size_t w,
                   std::size_t kh, std::size_t kw, std::size_t ph, std::size_t pw,
                   std::size_t ho, std::size_t wo, double* dx) {
  const std::size_t plane = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t dh = 0; dh < kh; ++dh) {
      for (std::size_t dw = 0; dw < kw; ++dw) {
        const double* src = cols + ((ch * kh + dh) * kw + dw) * plane;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + dh) - static_cast<std::ptrdiff_t>(ph);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = dx + (ch * h + ih) * w;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + dw) - static_cast<std::ptrdiff_t>(pw);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) dst[iw] += src[oh * wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace conv_detail

// x (N, C, H, W), w (Co, C, kh, kw), b (Co); zero padding (ph, pw), stride 1.
inline NodeId conv2d(Graph& g, NodeId x, NodeId w, NodeId b, int ph, int pw) {
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(w);
  const Tensor& tb = g.value(b);
  detail::require(tx.rank() == 4 && tw.rank() == 4, "conv2d",
                  "expects x rank 4 and w rank 4, got " + shape_str(tx.shape) + " and " + shape_str(tw.shape));
  detail::require(tx.shape[1] == tw.shape[1], "conv2d",
                  "channel mismatch between input " + shape_str(tx.shape) + " and weight " + shape_str(tw.shape));
  detail::require(tb.rank() == 1 && tb.shape[0] == tw.shape[0], "conv2d",
                  "bias shape " + shape_str(tb.shape) + " does not match weight " + shape_str(tw.shape));
  const std::size_t n = tx.shape[0], c = tx.shape[1], h = tx.shape[2], wdt = tx.shape[3];
  const std::size_t co = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
  detail::require(h + 2 * ph >= kh && wdt + 2 * pw >= kw, "conv2d",
                  "kernel " + shape_str(tw.shape) + " larger than padded input " + shape_str(tx.shape));
  const std::size_t ho = h + 2 * ph - kh + 1, wo = wdt + 2 * pw - kw + 1;
  const std::size_t ck = c * kh * kw, plane = ho * wo;

  Tensor out(Shape{n, co, ho, wo});
  std::vector<double> cols(ck * plane);
  for (std::size_t i = 0; i < n; ++i) {
    conv_detail::im2col(tx.values.data() + i * c * h * wdt, c, h, wdt, kh, kw,
                        static_cast<std::size_t>(ph), static_cast<std::size_t>(pw), ho, wo, cols.data());
    double* o = out.values.data() + i * co * plane;
    for (std::size_t oc = 0; oc < co; ++oc)
      std::fill(o + oc * plane, o + (oc + 1) * plane, tb.values[oc]);
    detail::gemm_nn(tw.values.data(), cols.data(), o, co, ck, plane);
  }
  return OpAccess::record(g, std::move(out), {x, w, b}, [x, w, b, ph, pw](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const Tensor& tx = gr.value(x);
    const Tensor& tw = gr.value(w);
    const std::size_t n = tx.shape[0], c = tx.shape[1], h = tx.shape[2], wdt = tx.shape[3];
    const std::size_t co = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
    const std::size_t ho = go.shape[2], wo = go.shape[3];
    const std::size_t ck = c * kh * kw, plane = ho * wo;
    std::vector<double> cols(ck * plane);
    std::vector<double> dcols(ck * plane);
    for (std::size_t i = 0; i < n; ++i) {
      const double* gout = go.values.data() + i * co * plane;
      if (OpAccess::wants_grad(gr, w) || OpAccess::wants_grad(gr, x))
        conv_detail::im2col(tx.values.data() + i * c * h * wdt, c, h, wdt, kh, kw,
                            static_cast<std::size_t>(ph), static_cast<std::size_t>(pw), ho, wo, cols.data());
      if (OpAccess::wants_grad(gr, w))
        detail::gemm_nt(gout, cols.data(), OpAccess::grad(gr, w).values.data(), co, plane, ck);
      if (OpAccess::wants_grad(gr, x)) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        detail::gemm_tn(tw.values.data(), gout, dcols.data(), co, ck, plane);
        conv_detail::col2im(dcols.data(), c, h, wdt, kh, kw, static_cast<std::size_t>(ph),
                            static_cast<std::size_t>(pw), ho, wo,
                            OpAccess::grad(gr, x).values.data() + i * c * h * wdt);
      }
      if (OpAccess::wants_grad(gr, b)) {
        Tensor& gb = OpAccess::grad(gr, b);
        for (std::size_t oc = 0; oc < co; ++oc) {
          double acc = 0.0;
          const double* src = gout + oc * plane;
          for (std::size_t p = 0; p < plane; ++p) acc += src[p];
          gb.values[oc] += acc;
        }
      }
    }
  });
}

// Time-axis 1D convolution: x (N, C, T), w (Co, C, k), b (Co), zero padding.
inline NodeId conv1d(Graph& g, NodeId x, NodeId w, NodeId b, int pad) {
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(w);
  detail::require(tx.rank() == 3 && tw.rank() == 3, "conv1d",
                  "expects x rank 3 and w rank 3, got " + shape_str(tx.shape) + " and " + shape_str(tw.shape));
  // reuse conv2d by treating time as the W axis with height 1
  const Tensor& tb = g.value(b);
  detail::require(tx.shape[1] == tw.shape[1], "conv1d",
                  "channel mismatch between input " + shape_str(tx.shape) + " and weight " + shape_str(tw.shape));
  detail::require(tb.rank() == 1 && tb.shape[0] == tw.shape[0], "conv1d",
                  "bias shape " + shape_str(tb.shape) + " does not match weight " + shape_str(tw.shape));
  const Shape xs = tx.shape, ws = tw.shape;  // reshape below may relocate node storage
  NodeId x4 = reshape(g, x, Shape{xs[0], xs[1], 1, xs[2]});
  NodeId w4 = reshape(g, w, Shape{ws[0], ws[1], 1, ws[2]});
  NodeId y4 = conv2d(g, x4, w4, b, 0, pad);
  const Shape ys = g.value(y4).shape;
  return reshape(g, y4, Shape{ys[0], ys[1], ys[3]});
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

// Non-overlapping max pool, stride = kernel. Ties break to the lowest flat
// index so unpooling is deterministic.
inline NodeId max_pool2d(Graph& g, NodeId x, int kh, int kw) {
  const Tensor& tx = g.value(x);
  detail::require(tx.rank() == 4, "max_pool2d", "expects rank-4 input, got " + shape_str(tx.shape));
  detail::require(kh > 0 && kw > 0, "max_pool2d", "kernel must be positive");
  const std::size_t n = tx.shape[0], c = tx.shape[1], h = tx.shape[2], w = tx.shape[3];
  detail::require(h % kh == 0 && w % kw == 0, "max_pool2d",
                  "kernel (" + std::to_string(kh) + ", " + std::to_string(kw) +
                      ") does not divide input " + shape_str(tx.shape));
  const std::size_t ho = h / kh, wo = w / kw;
  Shape input_shape = tx.shape;  // record() below may relocate the node storage
  Tensor out(Shape{n, c, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  std::size_t oi = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t dh = 0; dh < static_cast<std::size_t>(kh); ++dh)
            for (std::size_t dw = 0; dw < static_cast<std::size_t>(kw); ++dw) {
              const std::size_t flat = ((i * c + ch) * h + oh * kh + dh) * w + ow * kw + dw;
              if (tx.values[flat] > best) {
                best = tx.values[flat];
                best_idx = flat;
              }
            }
          out.values[oi] = best;
          argmax[oi] = best_idx;
        }
  NodeId id = OpAccess::record(g, std::move(out), {x}, [x](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const auto& am = OpAccess::node(gr, self).pool_argmax;
    Tensor& gx = OpAccess::grad(gr, x);
    for (std::size_t i = 0; i < go.numel(); ++i) gx.values[am[i]] += go.values[i];
  });
  OpAccess::node(g, id).pool_argmax = std::move(argmax);
  OpAccess::node(g, id).pool_input_shape = std::move(input_shape);
  return id;
}

// Places each value of x at the argmax position recorded by the paired pool;
// everything else is zero.
inline NodeId max_unpool2d(Graph& g, NodeId x, NodeId pool) {
  const Tensor& tx = g.value(x);
  const auto& pnode = OpAccess::node(g, pool);
  detail::require(!pnode.pool_argmax.empty(), "max_unpool2d",
                  "paired node is not a max_pool2d result");
  detail::require(tx.shape == g.value(pool).shape, "max_unpool2d",
                  "input shape " + shape_str(tx.shape) + " does not match pool output " +
                      shape_str(g.value(pool).shape));
  Tensor out(pnode.pool_input_shape, 0.0);
  for (std::size_t i = 0; i < tx.numel(); ++i) out.values[pnode.pool_argmax[i]] = tx.values[i];
  return OpAccess::record(g, std::move(out), {x}, [x, pool](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const auto& am = OpAccess::node(gr, pool).pool_argmax;
    Tensor& gx = OpAccess::grad(gr, x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.values[i] += go.values[am[i]];
  });
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

namespace norm_detail {

inline std::pair<std::size_t, std::size_t> axis_strides(const Shape& s, int axis) {
  // returns (outer, inner): tensor viewed as (outer, s[axis], inner)
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

}  // namespace norm_detail

inline NodeId softmax(Graph& g, NodeId x, int axis) {
  const Tensor& tx = g.value(x);
  const int rank = static_cast<int>(tx.rank());
  if (axis < 0) axis += rank;
  detail::require(axis >= 0 && axis < rank, "softmax",
                  "axis " + std::to_string(axis) + " out of range for " + shape_str(tx.shape));
  const std::size_t dim = tx.shape[axis];
  auto [outer, inner] = norm_detail::axis_strides(tx.shape, axis);
  Tensor out(tx.shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * dim * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t d = 0; d < dim; ++d) mx = std::max(mx, tx.values[base + d * inner]);
      double sum = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double e = std::exp(tx.values[base + d * inner] - mx);
        out.values[base + d * inner] = e;
        sum += e;
      }
      for (std::size_t d = 0; d < dim; ++d) out.values[base + d * inner] /= sum;
    }
  return OpAccess::record(g, std::move(out), {x}, [x, axis](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const Tensor& y = gr.value(self);
    Tensor& gx = OpAccess::grad(gr, x);
    const std::size_t dim = y.shape[axis];
    auto [outer, inner] = norm_detail::axis_strides(y.shape, axis);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * dim * inner + in;
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d)
          dot += go.values[base + d * inner] * y.values[base + d * inner];
        for (std::size_t d = 0; d < dim; ++d) {
          const std::size_t idx = base + d * inner;
          gx.values[idx] += y.values[idx] * (go.values[idx] - dot);
        }
      }
  });
}

// Normalizes over the last axis; gain/bias are per-feature.
inline NodeId layer_norm(Graph& g, NodeId x, NodeId gain, NodeId bias, double eps = 1e-5) {
  const Tensor& tx = g.value(x);
  const Tensor& tg = g.value(gain);
  const Tensor& tb = g.value(bias);
  detail::require(tx.rank() >= 1, "layer_norm", "expects rank >= 1, got " + shape_str(tx.shape));
  const std::size_t d = tx.shape.back();
  detail::require(tg.rank() == 1 && tg.shape[0] == d && tb.rank() == 1 && tb.shape[0] == d,
                  "layer_norm",
                  "gain/bias " + shape_str(tg.shape) + "/" + shape_str(tb.shape) +
                      " do not match feature width of " + shape_str(tx.shape));
  const std::size_t rows = tx.numel() / d;
  Tensor out(tx.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = tx.values.data() + r * d;
    double* yr = out.values.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i)
      yr[i] = (xr[i] - mean) * inv * tg.values[i] + tb.values[i];
  }
  return OpAccess::record(g, std::move(out), {x, gain, bias},
                          [x, gain, bias, eps](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const Tensor& tx = gr.value(x);
    const Tensor& tg = gr.value(gain);
    const std::size_t d = tx.shape.back();
    const std::size_t rows = tx.numel() / d;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = tx.values.data() + r * d;
      const double* gor = go.values.data() + r * d;
      double mean = 0.0;
      for (std::size_t i = 0; i < d; ++i) mean += xr[i];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      // dxhat and its per-row means
      double mean_dx = 0.0, mean_dxx = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double xh = (xr[i] - mean) * inv;
        const double dxh = gor[i] * tg.values[i];
        mean_dx += dxh;
        mean_dxx += dxh * xh;
      }
      mean_dx /= static_cast<double>(d);
      mean_dxx /= static_cast<double>(d);
      if (OpAccess::wants_grad(gr, x)) {
        double* gx = OpAccess::grad(gr, x).values.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
          const double xh = (xr[i] - mean) * inv;
          const double dxh = gor[i] * tg.values[i];
          gx[i] += inv * (dxh - mean_dx - xh * mean_dxx);
        }
      }
      if (OpAccess::wants_grad(gr, gain)) {
        Tensor& gg = OpAccess::grad(gr, gain);
        for (std::size_t i = 0; i < d; ++i)
          gg.values[i] += gor[i] * (xr[i] - mean) * inv;
      }
      if (OpAccess::wants_grad(gr, bias)) {
        Tensor& gb = OpAccess::grad(gr, bias);
        for (std::size_t i = 0; i < d; ++i) gb.values[i] += gor[i];
      }
    }
  });
}

// Channel-wise batch norm on (N, C, H, W). Training mode normalizes with the
// batch statistics and folds them into the running buffers; inference mode
// uses the frozen running statistics.
inline NodeId batch_norm(Graph& g, NodeId x, NodeId gamma, NodeId beta, Tensor& running_mean,
                         Tensor& running_var, bool training, double momentum = 0.9,
                         double eps = 1e-5) {
  BatchNormState st{&running_mean, &running_var};
  BatchNormState* state = &st;
  const Tensor& tx = g.value(x);
  detail::require(tx.rank() == 4, "batch_norm", "expects rank-4 input, got " + shape_str(tx.shape));
  const std::size_t n = tx.shape[0], c = tx.shape[1], plane = tx.shape[2] * tx.shape[3];
  const Tensor& tg = g.value(gamma);
  const Tensor& tb = g.value(beta);
  detail::require(tg.rank() == 1 && tg.shape[0] == c && tb.rank() == 1 && tb.shape[0] == c,
                  "batch_norm", "gamma/beta must be rank 1 of size " + std::to_string(c));
  detail::require(state != nullptr && state->running_mean != nullptr && state->running_var != nullptr,
                  "batch_norm", "running-statistics state is required");
  detail::require(state->running_mean->numel() == c && state->running_var->numel() == c,
                  "batch_norm", "state buffers must have " + std::to_string(c) + " channels");

  std::vector<double> mean(c), inv_std(c);
  if (training) {
    const double cnt = static_cast<double>(n * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* src = tx.values.data() + (i * c + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) m += src[p];
      }
      m /= cnt;
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* src = tx.values.data() + (i * c + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) v += (src[p] - m) * (src[p] - m);
      }
      v /= cnt;
      mean[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(v + eps);
      state->running_mean->values[ch] = momentum * state->running_mean->values[ch] + (1.0 - momentum) * m;
      state->running_var->values[ch] = momentum * state->running_var->values[ch] + (1.0 - momentum) * v;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state->running_mean->values[ch];
      inv_std[ch] = 1.0 / std::sqrt(state->running_var->values[ch] + eps);
    }
  }

  Tensor out(tx.shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = tx.values.data() + (i * c + ch) * plane;
      double* dst = out.values.data() + (i * c + ch) * plane;
      const double m = mean[ch], is = inv_std[ch], gm = tg.values[ch], bt = tb.values[ch];
      for (std::size_t p = 0; p < plane; ++p) dst[p] = (src[p] - m) * is * gm + bt;
    }

  return OpAccess::record(
      g, std::move(out), {x, gamma, beta},
      [x, gamma, beta, training, mean, inv_std](Graph& gr, NodeId self) {
        const Tensor& go = OpAccess::grad(gr, self);
        const Tensor& tx = gr.value(x);
        const Tensor& tg = gr.value(gamma);
        const std::size_t n = tx.shape[0], c = tx.shape[1], plane = tx.shape[2] * tx.shape[3];
        const double cnt = static_cast<double>(n * plane);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double m = mean[ch], is = inv_std[ch];
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double* xs = tx.values.data() + (i * c + ch) * plane;
            const double* gs = go.values.data() + (i * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              sum_g += gs[p];
              sum_gx += gs[p] * (xs[p] - m) * is;
            }
          }
          if (OpAccess::wants_grad(gr, gamma)) OpAccess::grad(gr, gamma).values[ch] += sum_gx;
          if (OpAccess::wants_grad(gr, beta)) OpAccess::grad(gr, beta).values[ch] += sum_g;
          if (OpAccess::wants_grad(gr, x)) {
            Tensor& gx = OpAccess::grad(gr, x);
            const double gm = tg.values[ch];
            for (std::size_t i = 0; i < n; ++i) {
              const double* xs = tx.values.data() + (i * c + ch) * plane;
              const double* gs = go.values.data() + (i * c + ch) * plane;
              double* gd = gx.values.data() + (i * c + ch) * plane;
              for (std::size_t p = 0; p < plane; ++p) {
                if (training) {
                  const double xh = (xs[p] - m) * is;
                  gd[p] += gm * is * (gs[p] - sum_g / cnt - xh * sum_gx / cnt);
                } else {
                  gd[p] += gm * is * gs[p];
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline NodeId reshape(Graph& g, NodeId x, const Shape& shape) {
  const Tensor& tx = g.value(x);
  detail::require(shape_numel(shape) == tx.numel(), "reshape",
                  "cannot view " + shape_str(tx.shape) + " as " + shape_str(shape));
  Tensor out = tx;
  out.shape = shape;
  return OpAccess::record(g, std::move(out), {x}, [x](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    detail::accumulate(OpAccess::grad(gr, x), go);
  });
}

namespace shape_detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size() - 1; i-- > 0;) st[i] = st[i + 1] * s[i + 1];
  return st;
}

inline void permute_values(const Tensor& in, const Shape& order, Tensor& out) {
  const auto in_strides = strides_of(in.shape);
  const auto out_strides = strides_of(out.shape);
  const std::size_t r = in.rank();
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < in.numel(); ++flat) {
    std::size_t rem = flat;
    std::size_t dst = 0;
    for (std::size_t d = 0; d < r; ++d) {
      idx[d] = rem / in_strides[d];
      rem %= in_strides[d];
    }
    for (std::size_t d = 0; d < r; ++d) dst += idx[order[d]] * out_strides[d];
    out.values[dst] = in.values[flat];
  }
}

}  // namespace shape_detail

inline NodeId permute(Graph& g, NodeId x, const Shape& order) {
  const Tensor& tx = g.value(x);
  detail::require(order.size() == tx.rank(), "permute",
                  "order has " + std::to_string(order.size()) + " axes for tensor " + shape_str(tx.shape));
  Shape check = order;
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < check.size(); ++i)
    detail::require(check[i] == i, "permute", "order is not a permutation of the axes");
  Shape out_shape(tx.rank());
  for (std::size_t d = 0; d < tx.rank(); ++d) out_shape[d] = tx.shape[order[d]];
  Tensor out(out_shape);
  shape_detail::permute_values(tx, order, out);
  return OpAccess::record(g, std::move(out), {x}, [x, order](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const Tensor& tx = gr.value(x);
    Shape inverse(order.size());
    for (std::size_t d = 0; d < order.size(); ++d) inverse[order[d]] = d;
    Tensor tmp(tx.shape);
    shape_detail::permute_values(go, inverse, tmp);
    detail::accumulate(OpAccess::grad(gr, x), tmp);
  });
}

inline NodeId concat(Graph& g, const std::vector<NodeId>& xs, int axis) {
  detail::require(!xs.empty(), "concat", "needs at least one input");
  const Tensor& first = g.value(xs[0]);
  const int rank = static_cast<int>(first.rank());
  if (axis < 0) axis += rank;
  detail::require(axis >= 0 && axis < rank, "concat",
                  "axis " + std::to_string(axis) + " out of range for " + shape_str(first.shape));
  std::size_t total = 0;
  for (NodeId x : xs) {
    const Tensor& t = g.value(x);
    detail::require(t.rank() == first.rank(), "concat",
                    "rank mismatch between " + shape_str(first.shape) + " and " + shape_str(t.shape));
    for (int d = 0; d < rank; ++d)
      if (d != axis)
        detail::require(t.shape[d] == first.shape[d], "concat",
                        "shape mismatch between " + shape_str(first.shape) + " and " + shape_str(t.shape));
    total += t.shape[axis];
  }
  Shape out_shape = first.shape;
  out_shape[axis] = total;
  auto [outer, inner] = norm_detail::axis_strides(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (NodeId x : xs) {
    const Tensor& t = g.value(x);
    const std::size_t da = t.shape[axis];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(t.values.begin() + o * da * inner, t.values.begin() + (o + 1) * da * inner,
                out.values.begin() + (o * total + offset) * inner);
    offset += da;
  }
  std::vector<NodeId> inputs = xs;
  return OpAccess::record(g, std::move(out), inputs, [xs, axis](Graph& gr, NodeId self) {
    const Tensor& go = OpAccess::grad(gr, self);
    const std::size_t total = go.shape[axis];
    auto [outer, inner] = norm_detail::axis_strides(go.shape, axis);
    std::size_t offset = 0;
    for (NodeId x : xs) {
      const Tensor& t = gr.value(x);
      const std::size_t da = t.shape[axis];
      if (OpAccess::wants_grad(gr, x)) {
        Tensor& gx = OpAccess::grad(gr, x);
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = go.values.data() + (o * total + offset) * inner;
          double* dst = gx.values.data() + o * da * inner;
          for (std::size_t i = 0; i < da * inner; ++i) dst[i] += src[i];
        }
      }
      offset += da;
    }
  });
}

// ---------------------------------------------------------------------------
// reductions / loss
// ---------------------------------------------------------------------------

inline NodeId sum_all(Graph& g, NodeId x) {
  const Tensor& tx = g.value(x);
  double s = 0.0;
  for (double v : tx.values) s += v;
  return OpAccess::record(g, Tensor::scalar(s), {x}, [x](Graph& gr, NodeId self) {
    const double go = OpAccess::grad(gr, self).values[0];
    Tensor& gx = OpAccess::grad(gr, x);
    for (double& v : gx.values) v += go;
  });
}

inline NodeId mean_all(Graph& g, NodeId x) {
  const Tensor& tx = g.value(x);
  double s = 0.0;
  for (double v : tx.values) s += v;
  const double n = static_cast<double>(tx.numel());
  return OpAccess::record(g, Tensor::scalar(s / n), {x}, [x, n](Graph& gr, NodeId self) {
    const double go = OpAccess::grad(gr, self).values[0] / n;
    Tensor& gx = OpAccess::grad(gr, x);
    for (double& v : gx.values) v += go;
  });
}

// Mean-reduced binary cross entropy. Predictions are clamped to
// [clamp_eps, 1 - clamp_eps] inside the loss; clamped entries get zero
// gradient (the clamp is flat there).
inline NodeId bce_mean(Graph& g, NodeId pred, NodeId target, double clamp_eps = 1e-7) {
  const Tensor& tp = g.value(pred);
  const Tensor& tt = g.value(target);
  detail::require_same_shape("bce", tp, tt);
  const double n = static_cast<double>(tp.numel());
  double loss = 0.0;
  for (std::size_t i = 0; i < tp.numel(); ++i) {
    const double p = std::min(std::max(tp.values[i], clamp_eps), 1.0 - clamp_eps);
    const double t = tt.values[i];
    loss += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  return OpAccess::record(g, Tensor::scalar(loss / n), {pred, target},
                          [pred, target, clamp_eps, n](Graph& gr, NodeId self) {
    const double go = OpAccess::grad(gr, self).values[0];
    const Tensor& tp = gr.value(pred);
    const Tensor& tt = gr.value(target);
    if (OpAccess::wants_grad(gr, pred)) {
      Tensor& gp = OpAccess::grad(gr, pred);
      for (std::size_t i = 0; i < tp.numel(); ++i) {
        const double raw = tp.values[i];
        if (raw <= clamp_eps || raw >= 1.0 - clamp_eps) continue;
        const double t = tt.values[i];
        gp.values[i] += go * (raw - t) / (raw * (1.0 - raw)) / n;
      }
    }
    if (OpAccess::wants_grad(gr, target)) {
      Tensor& gt = OpAccess::grad(gr, target);
      for (std::size_t i = 0; i < tp.numel(); ++i) {
        const double p = std::min(std::max(tp.values[i], clamp_eps), 1.0 - clamp_eps);
        gt.values[i] += go * (std::log(1.0 - p) - std::log(p)) / n;
      }
    }
  });
}

}  // namespace ops

// ---------------------------------------------------------------------------
// string-keyed dispatch
// ---------------------------------------------------------------------------

inline NodeId Graph::apply(std::string_view kind, const std::vector<NodeId>& inputs,
                           const Attrs& attrs) {
  auto arity = [&](std::size_t n) {
    detail::require(inputs.size() == n, kind,
                    "expects " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
  };
  if (kind == "add") { arity(2); return ops::add(*this, inputs[0], inputs[1]); }
  if (kind == "mul") { arity(2); return ops::mul(*this, inputs[0], inputs[1]); }
  if (kind == "scale") { arity(1); return ops::scale(*this, inputs[0], attrs.value); }
  if (kind == "relu") { arity(1); return ops::relu(*this, inputs[0]); }
  if (kind == "sigmoid") { arity(1); return ops::sigmoid(*this, inputs[0]); }
  if (kind == "matmul") { arity(2); return ops::matmul(*this, inputs[0], inputs[1]); }
  if (kind == "linear") { arity(3); return ops::linear(*this, inputs[0], inputs[1], inputs[2]); }
  if (kind == "conv2d") { arity(3); return ops::conv2d(*this, inputs[0], inputs[1], inputs[2], attrs.pad_h, attrs.pad_w); }
  if (kind == "conv1d") { arity(3); return ops::conv1d(*this, inputs[0], inputs[1], inputs[2], attrs.pad); }
  if (kind == "max_pool2d") { arity(1); return ops::max_pool2d(*this, inputs[0], attrs.kernel_h, attrs.kernel_w); }
  if (kind == "max_unpool2d") {
    arity(1);
    detail::require(attrs.paired_pool.has_value(), "max_unpool2d", "paired_pool attr is required");
    return ops::max_unpool2d(*this, inputs[0], *attrs.paired_pool);
  }
  if (kind == "softmax") { arity(1); return ops::softmax(*this, inputs[0], attrs.axis); }
  if (kind == "layer_norm") { arity(3); return ops::layer_norm(*this, inputs[0], inputs[1], inputs[2], attrs.eps); }
  if (kind == "batch_norm") {
    arity(3);
    detail::require(attrs.bn_state != nullptr && attrs.bn_state->running_mean != nullptr &&
                        attrs.bn_state->running_var != nullptr,
                    "batch_norm", "running-statistics state is required");
    return ops::batch_norm(*this, inputs[0], inputs[1], inputs[2], *attrs.bn_state->running_mean,
                           *attrs.bn_state->running_var, attrs.training, attrs.momentum, attrs.eps);
  }
  if (kind == "concat") { return ops::concat(*this, inputs, attrs.axis); }
  if (kind == "permute") { arity(1); return ops::permute(*this, inputs[0], attrs.order); }
  if (kind == "reshape") { arity(1); return ops::reshape(*this, inputs[0], attrs.shape); }
  if (kind == "mean") { arity(1); return ops::mean_all(*this, inputs[0]); }
  if (kind == "sum") { arity(1); return ops::sum_all(*this, inputs[0]); }
  if (kind == "bce") { arity(2); return ops::bce_mean(*this, inputs[0], inputs[1], attrs.clamp_eps); }
  throw std::invalid_argument("unknown primitive '" + std::string(kind) + "'");
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

// Builds a scalar loss from a leaf holding x.
using GraphFn = std::function<NodeId(Graph&, NodeId)>;

namespace fd_detail {

inline double eval_at(const GraphFn& f, const Tensor& x) {
  Graph g;
  g.set_grad_enabled(false);
  NodeId leaf = g.leaf(x, false);
  NodeId loss = f(g, leaf);
  const Tensor& lv = g.value(loss);
  if (lv.numel() != 1)
    throw std::invalid_argument("finite_diff_check: f must produce a scalar, got " + shape_str(lv.shape));
  return lv.values[0];
}

inline double check_elements(const GraphFn& f, const Tensor& x, double eps,
                             const std::vector<std::size_t>& elements) {
  if (eps < 1e-7 || eps > 1e-3)
    throw std::invalid_argument("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  Graph g;
  NodeId leaf = g.leaf(x, true, "x");
  NodeId loss = f(g, leaf);
  const Tensor& lv = g.value(loss);
  if (lv.numel() != 1)
    throw std::invalid_argument("finite_diff_check: f must produce a scalar, got " + shape_str(lv.shape));
  if (!lv.all_finite())
    throw std::invalid_argument("finite_diff_check: f(x) is not finite");
  g.backward(loss);
  const Tensor analytic = g.grad(leaf);

  double max_err = 0.0;
  Tensor probe = x;
  for (std::size_t i : elements) {
    const double keep = probe.values[i];
    probe.values[i] = keep + eps;
    const double fp = eval_at(f, probe);
    probe.values[i] = keep - eps;
    const double fm = eval_at(f, probe);
    probe.values[i] = keep;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic.values[i] - numeric) /
                       std::max(1.0, std::abs(analytic.values[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace fd_detail

// Max over all elements of |analytic - central difference| / max(1, |analytic|).
inline double finite_diff_check(const GraphFn& f, const Tensor& x, double eps) {
  std::vector<std::size_t> all(x.numel());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return fd_detail::check_elements(f, x, eps, all);
}

// Same check restricted to a seeded random subset of elements; used where a
// full sweep would be prohibitively many forward evaluations.
inline double finite_diff_check_sampled(const GraphFn& f, const Tensor& x, double eps,
                                        std::size_t max_elements, std::uint64_t seed) {
  std::vector<std::size_t> all(x.numel());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  if (all.size() > max_elements) {
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(max_elements);
    std::sort(all.begin(), all.end());
  }
  return fd_detail::check_elements(f, x, eps, all);
}

}  // namespace tonet
