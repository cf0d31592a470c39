#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Graph owns every value produced while evaluating a network. Ops append a
// node holding the forward value and, when the graph records, a closure that
// scatters the node's gradient into its inputs. Nodes are created in
// topological order, so backward() is a single reverse sweep.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eqmz/nd/kernels.hpp"
#include "eqmz/nd/tensor.hpp"

namespace eqmz::nd {

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Leaf bound to externally owned parameter storage. Repeated requests for
  /// the same name return the same node, so shared weights accumulate one
  /// gradient.
  Var parameter(const std::string& name, const Tensor& value) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
    Node n;
    n.external = &value;
    n.requires_grad = record_;
    n.param = name;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_ids_.emplace(name, id);
    return Var{this, id};
  }

  const Tensor& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Gradient buffer of a node, zero-initialized on first use.
  Tensor& grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      n.grad = Tensor(value(id).shape(), 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Append an op result. The backward closure is kept only when recording
  /// and at least one input needs a gradient.
  Var make(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_)
      for (Var v : inputs) needs = needs || requires_grad(v.id);
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var make(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_)
      for (Var v : inputs) needs = needs || requires_grad(v.id);
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Accumulate d(root)/d(node) for every node; root must be a scalar.
  void backward(Var root) {
    if (!record_) throw std::logic_error("Graph::backward on a non-recording graph");
    if (value(root.id).numel() != 1)
      throw std::invalid_argument("Graph::backward: root has shape " + shape_str(value(root.id).shape()));
    grad_ref(root.id)[0] += 1.0;
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.has_grad && n.backward) n.backward(*this, id);
    }
  }

  /// Gradients of every parameter leaf, keyed by parameter name. Parameters
  /// that did not influence the root get zeros.
  std::map<std::string, Tensor> parameter_grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : param_ids_) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      out.emplace(name, n.has_grad ? n.grad : Tensor(value(id).shape(), 0.0));
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    std::string param;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, int> param_ids_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {

inline void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

inline void require_rank(const char* op, Var v, int rank) {
  if (v.value().rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                shape_str(v.shape()));
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    for (Var in : {a, b}) {
      if (!g.requires_grad(in.id)) continue;
      Tensor& gi = g.grad_ref(in.id);
      for (std::size_t i = 0; i < go.numel(); ++i) gi[i] += go[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    if (g.requires_grad(a.id)) {
      Tensor& ga = g.grad_ref(a.id);
      for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    }
    if (g.requires_grad(b.id)) {
      Tensor& gb = g.grad_ref(b.id);
      for (std::size_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const Tensor& av = g.value(a.id);
    const Tensor& bv = g.value(b.id);
    if (g.requires_grad(a.id)) {
      Tensor& ga = g.grad_ref(a.id);
      for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(b.id)) {
      Tensor& gb = g.grad_ref(b.id);
      for (std::size_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return a.graph->make(std::move(out), {a}, [a, s](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& ga = g.grad_ref(a.id);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * s;
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.graph->make(std::move(out), {a}, [a](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const Tensor& av = g.value(a.id);
    Tensor& ga = g.grad_ref(a.id);
    for (std::size_t i = 0; i < go.numel(); ++i)
      if (av[i] > 0.0) ga[i] += go[i];
  });
}

inline Var log(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::log(v);
  return a.graph->make(std::move(out), {a}, [a](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const Tensor& av = g.value(a.id);
    Tensor& ga = g.grad_ref(a.id);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / av[i];
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.graph->make(Tensor::scalar(s), {a}, [a](Graph& g, int self) {
    const double go = g.grad(self)[0];
    Tensor& ga = g.grad_ref(a.id);
    for (double& v : ga.values()) v += go;
  });
}

/// Sum of elementwise products, a scalar.
inline Var dot(Var a, Var b) {
  detail::require_same_shape("dot", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) s += av[i] * bv[i];
  return a.graph->make(Tensor::scalar(s), {a, b}, [a, b](Graph& g, int self) {
    const double go = g.grad(self)[0];
    const Tensor& av = g.value(a.id);
    const Tensor& bv = g.value(b.id);
    if (g.requires_grad(a.id)) {
      Tensor& ga = g.grad_ref(a.id);
      for (std::size_t i = 0; i < av.numel(); ++i) ga[i] += go * bv[i];
    }
    if (g.requires_grad(b.id)) {
      Tensor& gb = g.grad_ref(b.id);
      for (std::size_t i = 0; i < av.numel(); ++i) gb[i] += go * av[i];
    }
  });
}

/// Affine map w.x + b with w of shape [out, in], b [out], x [in].
inline Var dense(Var w, Var b, Var x) {
  detail::require_rank("dense weight", w, 2);
  const int n_out = w.shape()[0];
  const int n_in = w.shape()[1];
  if (x.value().rank() != 1 || x.shape()[0] != n_in)
    throw std::invalid_argument("dense: weight " + shape_str(w.shape()) + " cannot multiply input " +
                                shape_str(x.shape()));
  if (b.value().rank() != 1 || b.shape()[0] != n_out)
    throw std::invalid_argument("dense: bias " + shape_str(b.shape()) + " does not match weight " +
                                shape_str(w.shape()));
  Tensor out(Shape{n_out});
  kernels::dense_forward(w.value().data(), b.value().data(), x.value().data(), out.data(), n_out, n_in);
  return w.graph->make(std::move(out), {w, b, x}, [w, b, x, n_out, n_in](Graph& g, int self) {
    double* gw = g.requires_grad(w.id) ? g.grad_ref(w.id).data() : nullptr;
    double* gb = g.requires_grad(b.id) ? g.grad_ref(b.id).data() : nullptr;
    double* gx = g.requires_grad(x.id) ? g.grad_ref(x.id).data() : nullptr;
    kernels::dense_backward(g.value(w.id).data(), g.value(x.id).data(), g.grad(self).data(), gw, gb, gx, n_out, n_in);
  });
}

/// Same-padded 2-D cross-correlation: w [out, in, k, k] with odd k,
/// b [out], x [in, H, W] -> [out, H, W].
inline Var conv2d(Var w, Var b, Var x) {
  detail::require_rank("conv2d weight", w, 4);
  detail::require_rank("conv2d input", x, 3);
  const Shape& ws = w.shape();
  const Shape& xs = x.shape();
  if (ws[2] != ws[3]) throw std::invalid_argument("conv2d: non-square kernel " + shape_str(ws));
  if (ws[2] % 2 == 0) throw std::invalid_argument("conv2d: even kernel size " + std::to_string(ws[2]));
  if (ws[1] != xs[0])
    throw std::invalid_argument("conv2d: weight " + shape_str(ws) + " expects " + std::to_string(ws[1]) +
                                " input channels, input is " + shape_str(xs));
  if (b.value().rank() != 1 || b.shape()[0] != ws[0])
    throw std::invalid_argument("conv2d: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(ws));
  const kernels::ConvDims dims{ws[1], ws[0], xs[1], xs[2], ws[2]};
  Tensor out(Shape{ws[0], xs[1], xs[2]});
  kernels::conv2d_forward(w.value().data(), b.value().data(), x.value().data(), out.data(), dims);
  return w.graph->make(std::move(out), {w, b, x}, [w, b, x, dims](Graph& g, int self) {
    double* gw = g.requires_grad(w.id) ? g.grad_ref(w.id).data() : nullptr;
    double* gb = g.requires_grad(b.id) ? g.grad_ref(b.id).data() : nullptr;
    double* gx = g.requires_grad(x.id) ? g.grad_ref(x.id).data() : nullptr;
    kernels::conv2d_backward(g.value(w.id).data(), g.value(x.id).data(), g.grad(self).data(), gw, gb, gx, dims);
  });
}

/// x [C, H, W] plus v [C] broadcast over every pixel.
inline Var add_channel_vector(Var x, Var v) {
  detail::require_rank("add_channel_vector input", x, 3);
  const Shape xs = x.shape();
  if (v.value().rank() != 1 || v.shape()[0] != xs[0])
    throw std::invalid_argument("add_channel_vector: vector " + shape_str(v.shape()) + " vs feature map " +
                                shape_str(xs));
  const std::size_t plane = static_cast<std::size_t>(xs[1]) * xs[2];
  Tensor out = x.value();
  const Tensor& vv = v.value();
  for (int c = 0; c < xs[0]; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] += vv[static_cast<std::size_t>(c)];
  return x.graph->make(std::move(out), {x, v}, [x, v, xs, plane](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    if (g.requires_grad(x.id)) {
      Tensor& gx = g.grad_ref(x.id);
      for (std::size_t i = 0; i < go.numel(); ++i) gx[i] += go[i];
    }
    if (g.requires_grad(v.id)) {
      Tensor& gv = g.grad_ref(v.id);
      for (int c = 0; c < xs[0]; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += go[c * plane + p];
        gv[static_cast<std::size_t>(c)] += s;
      }
    }
  });
}

/// Spatial mean of x [C, H, W] -> [C].
inline Var mean_pool(Var x) {
  detail::require_rank("mean_pool", x, 3);
  const Shape xs = x.shape();
  const std::size_t plane = static_cast<std::size_t>(xs[1]) * xs[2];
  const double inv = 1.0 / static_cast<double>(plane);
  Tensor out(Shape{xs[0]});
  const Tensor& xv = x.value();
  for (int c = 0; c < xs[0]; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += xv[c * plane + p];
    out[static_cast<std::size_t>(c)] = s * inv;
  }
  return x.graph->make(std::move(out), {x}, [x, xs, plane, inv](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& gx = g.grad_ref(x.id);
    for (int c = 0; c < xs[0]; ++c)
      for (std::size_t p = 0; p < plane; ++p) gx[c * plane + p] += go[static_cast<std::size_t>(c)] * inv;
  });
}

/// Concatenation along the leading dimension.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  int lead = 0;
  std::vector<double> data;
  for (Var p : parts) {
    const Shape& s = p.shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != tail)
      throw std::invalid_argument("concat: shape " + shape_str(s) + " incompatible with " +
                                  shape_str(parts[0].shape()));
    lead += s[0];
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  Shape out_shape{lead};
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].graph->make(Tensor(std::move(out_shape), std::move(data)), parts, [inputs](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    std::size_t offset = 0;
    for (Var in : inputs) {
      const std::size_t n = g.value(in.id).numel();
      if (g.requires_grad(in.id)) {
        Tensor& gi = g.grad_ref(in.id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += go[offset + i];
      }
      offset += n;
    }
  });
}

/// Rows [start, start+count) of the leading dimension.
inline Var slice(Var x, int start, int count) {
  const Shape& xs = x.shape();
  if (xs.empty() || start < 0 || count < 0 || start + count > xs[0])
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                ") outside " + shape_str(xs));
  Shape out_shape = xs;
  out_shape[0] = count;
  const std::size_t stride = shape_numel(xs) / static_cast<std::size_t>(xs[0]);
  const auto first = x.value().values().begin() + static_cast<std::ptrdiff_t>(start * stride);
  std::vector<double> data(first, first + static_cast<std::ptrdiff_t>(count * stride));
  const std::size_t offset = start * stride;
  return x.graph->make(Tensor(std::move(out_shape), std::move(data)), {x}, [x, offset](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& gx = g.grad_ref(x.id);
    for (std::size_t i = 0; i < go.numel(); ++i) gx[offset + i] += go[i];
  });
}

/// Same values under a new shape with equal element count.
inline Var reshape(Var x, Shape shape) {
  if (shape_numel(shape) != x.value().numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out(std::move(shape), x.value().values());
  return x.graph->make(std::move(out), {x}, [x](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& gx = g.grad_ref(x.id);
    for (std::size_t i = 0; i < go.numel(); ++i) gx[i] += go[i];
  });
}

/// Picks x[indices[i]] from a vector.
inline Var gather(Var x, std::vector<int> indices) {
  detail::require_rank("gather", x, 1);
  const Tensor& xv = x.value();
  Tensor out(Shape{static_cast<int>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= x.shape()[0])
      throw std::invalid_argument("gather: index " + std::to_string(indices[i]) + " outside " + shape_str(x.shape()));
    out[i] = xv[static_cast<std::size_t>(indices[i])];
  }
  return x.graph->make(std::move(out), {x}, [x, indices = std::move(indices)](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    Tensor& gx = g.grad_ref(x.id);
    for (std::size_t i = 0; i < indices.size(); ++i) gx[static_cast<std::size_t>(indices[i])] += go[i];
  });
}

/// Elementwise sum of equally shaped operands in which, at every element, the
/// operands are added in ascending numeric order. The result depends only on
/// the multiset of operands, never on their order.
inline Var sorted_sum(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("sorted_sum: no inputs");
  for (Var p : parts) detail::require_same_shape("sorted_sum", parts[0], p);
  const std::size_t n = parts[0].value().numel();
  Tensor out(parts[0].shape());
  std::vector<double> column(parts.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < parts.size(); ++j) column[j] = parts[j].value()[i];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    out[i] = s;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].graph->make(std::move(out), parts, [inputs](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    for (Var in : inputs) {
      if (!g.requires_grad(in.id)) continue;
      Tensor& gi = g.grad_ref(in.id);
      for (std::size_t i = 0; i < go.numel(); ++i) gi[i] += go[i];
    }
  });
}

inline Var softmax(Var x) {
  detail::require_rank("softmax", x, 1);
  Tensor out = x.value();
  double mx = out[0];
  for (double v : out.values()) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : out.values()) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : out.values()) v /= z;
  return x.graph->make(std::move(out), {x}, [x](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const Tensor& p = g.value(self);
    double inner = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) inner += go[i] * p[i];
    Tensor& gx = g.grad_ref(x.id);
    for (std::size_t i = 0; i < p.numel(); ++i) gx[i] += p[i] * (go[i] - inner);
  });
}

/// (x - min x) / s over all entries, with s = max x - min x, plus 1e-5 when
/// that range is below 1e-5. Output lies in [0, 1].
inline Var minmax_scale(Var x) {
  const Tensor& xv = x.value();
  if (xv.numel() == 0) throw std::invalid_argument("minmax_scale: empty tensor");
  std::size_t lo = 0;
  std::size_t hi = 0;
  for (std::size_t i = 1; i < xv.numel(); ++i) {
    if (xv[i] < xv[lo]) lo = i;
    if (xv[i] > xv[hi]) hi = i;
  }
  double range = xv[hi] - xv[lo];
  if (range < 1e-5) range += 1e-5;
  Tensor out = xv;
  const double base = xv[lo];
  for (double& v : out.values()) v = (v - base) / range;
  return x.graph->make(std::move(out), {x}, [x, lo, hi, range](Graph& g, int self) {
    const Tensor& go = g.grad(self);
    const Tensor& y = g.value(self);
    double total = 0.0;
    double weighted = 0.0;
    for (std::size_t i = 0; i < go.numel(); ++i) {
      total += go[i];
      weighted += go[i] * y[i];
    }
    Tensor& gx = g.grad_ref(x.id);
    for (std::size_t i = 0; i < go.numel(); ++i) gx[i] += go[i] / range;
    gx[lo] += (weighted - total) / range;
    gx[hi] -= weighted / range;
  });
}

/// x + F(x) with F = conv2 . relu . conv1, all same-padded.
inline Var residual_block(Var w1, Var b1, Var w2, Var b2, Var x) {
  Var inner = conv2d(w2, b2, relu(conv2d(w1, b1, x)));
  return add(x, inner);
}

}  // namespace eqmz::nd
