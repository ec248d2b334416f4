#include "mma/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace mma {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::affine: return "affine";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::maxpool2d: return "maxpool2d";
    case OpKind::softmax: return "softmax";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::scale: return "scale";
    case OpKind::multiply: return "multiply";
    case OpKind::add: return "add";
    case OpKind::flatten: return "flatten";
  }
  return "?";
}

namespace {

void accumulate(Tensor& into, const Tensor& grad) {
  if (into.size() == 0) {
    into = grad;
    return;
  }
  auto dst = into.data();
  auto src = grad.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace

NodeId ComputeGraph::append(Node node) {
  for (NodeId parent : node.parents) {
    if (parent >= nodes_.size()) {
      throw GraphError("node " + std::to_string(nodes_.size()) + " (" + op_name(node.kind) +
                       "): parent " + std::to_string(parent) + " does not exist");
    }
  }
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return nodes_.size() - 1;
}

void ComputeGraph::fail(NodeId id, const std::string& what) const {
  const Node& node = nodes_[id];
  std::string label = "node " + std::to_string(id) + " (" + op_name(node.kind);
  if (!node.name.empty()) label += " '" + node.name + "'";
  throw GraphError(label + "): " + what);
}

NodeId ComputeGraph::leaf(std::string name) {
  for (const Node& n : nodes_) {
    if (n.kind == OpKind::leaf && n.name == name) throw GraphError("duplicate leaf name '" + name + "'");
  }
  return append({.kind = OpKind::leaf, .parents = {}, .name = std::move(name)});
}

NodeId ComputeGraph::affine(NodeId x, NodeId weight, NodeId bias) {
  return append({.kind = OpKind::affine, .parents = {x, weight, bias}});
}

NodeId ComputeGraph::conv2d(NodeId x, NodeId weight, NodeId bias, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw GraphError("conv2d stride must be positive");
  return append({.kind = OpKind::conv2d, .parents = {x, weight, bias}, .stride = stride, .padding = padding});
}

NodeId ComputeGraph::relu(NodeId x) { return append({.kind = OpKind::relu, .parents = {x}}); }

NodeId ComputeGraph::maxpool2d(NodeId x, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw GraphError("maxpool2d kernel and stride must be positive");
  return append({.kind = OpKind::maxpool2d, .parents = {x}, .kernel = kernel, .stride = stride});
}

NodeId ComputeGraph::softmax(NodeId x) { return append({.kind = OpKind::softmax, .parents = {x}}); }

NodeId ComputeGraph::log(NodeId x, double floor) {
  return append({.kind = OpKind::log, .parents = {x}, .scalar = floor});
}

NodeId ComputeGraph::sum(NodeId x) { return append({.kind = OpKind::sum, .parents = {x}}); }

NodeId ComputeGraph::scale(NodeId x, double factor) {
  return append({.kind = OpKind::scale, .parents = {x}, .scalar = factor});
}

NodeId ComputeGraph::multiply(NodeId a, NodeId b) { return append({.kind = OpKind::multiply, .parents = {a, b}}); }

NodeId ComputeGraph::add(NodeId a, NodeId b) { return append({.kind = OpKind::add, .parents = {a, b}}); }

NodeId ComputeGraph::flatten(NodeId x) { return append({.kind = OpKind::flatten, .parents = {x}}); }

const Tensor& ComputeGraph::forward(const TensorMap& bindings) {
  static const TensorMap kNone;
  return forward(bindings, kNone);
}

const Tensor& ComputeGraph::forward(const TensorMap& bindings, const TensorMap& more) {
  if (nodes_.empty()) throw GraphError("forward on an empty graph");
  evaluated_ = false;
  values_.clear();
  values_.reserve(nodes_.size());
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.kind == OpKind::leaf) {
      auto it = bindings.find(node.name);
      if (it == bindings.end()) {
        it = more.find(node.name);
        if (it == more.end()) fail(id, "no binding supplied");
      }
      if (it->second.size() == 0) fail(id, "bound to an empty tensor");
      values_.push_back(it->second);
    } else {
      values_.push_back(evaluate(id));
    }
  }
  evaluated_ = true;
  return values_.back();
}

const Tensor& ComputeGraph::value(NodeId id) const {
  if (!evaluated_) throw GraphError("value requested before forward");
  return values_.at(id);
}

Tensor ComputeGraph::evaluate(NodeId id) const {
  const Node& node = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return values_[node.parents[k]]; };

  switch (node.kind) {
    case OpKind::leaf:
      break;

    case OpKind::affine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
        fail(id, "expects x[N,in], w[out,in], b[out]; got " + shape_to_string(x.shape()) + ", " +
                     shape_to_string(w.shape()) + ", " + shape_to_string(b.shape()));
      }
      const std::size_t n = x.dim(0), fan_in = x.dim(1), fan_out = w.dim(0);
      if (w.dim(1) != fan_in || b.dim(0) != fan_out) {
        fail(id, "input " + shape_to_string(x.shape()) + " incompatible with weight " + shape_to_string(w.shape()) +
                     " and bias " + shape_to_string(b.shape()));
      }
      Tensor out({n, fan_out});
      for (std::size_t r = 0; r < n; ++r) {
        const double* xr = x.data().data() + r * fan_in;
        for (std::size_t o = 0; o < fan_out; ++o) {
          const double* wo = w.data().data() + o * fan_in;
          double acc = 0.0;
          for (std::size_t i = 0; i < fan_in; ++i) acc += xr[i] * wo[i];
          out[r * fan_out + o] = acc + b[o];
        }
      }
      return out;
    }

    case OpKind::conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1) {
        fail(id, "expects x[N,C,H,W], w[O,C,k,k], b[O]; got " + shape_to_string(x.shape()) + ", " +
                     shape_to_string(w.shape()) + ", " + shape_to_string(b.shape()));
      }
      const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const std::size_t oc = w.dim(0), k = w.dim(2);
      if (w.dim(1) != c || w.dim(3) != k || b.dim(0) != oc) {
        fail(id, "weight " + shape_to_string(w.shape()) + " incompatible with input " + shape_to_string(x.shape()));
      }
      if (h + 2 * node.padding < k || wd + 2 * node.padding < k) fail(id, "kernel larger than padded input");
      const std::size_t oh = conv_extent(h, k, node.stride, node.padding);
      const std::size_t ow = conv_extent(wd, k, node.stride, node.padding);
      Tensor out({n, oc, oh, ow});
      const auto pad = static_cast<std::ptrdiff_t>(node.padding);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < oc; ++o) {
          for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
              double acc = b[o];
              for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t ki = 0; ki < k; ++ki) {
                  const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(i * node.stride + ki) - pad;
                  if (row < 0 || row >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kj = 0; kj < k; ++kj) {
                    const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(j * node.stride + kj) - pad;
                    if (col < 0 || col >= static_cast<std::ptrdiff_t>(wd)) continue;
                    acc += x[((s * c + ch) * h + row) * wd + col] * w[((o * c + ch) * k + ki) * k + kj];
                  }
                }
              }
              out[((s * oc + o) * oh + i) * ow + j] = acc;
            }
          }
        }
      }
      return out;
    }

    case OpKind::relu: {
      Tensor out = in(0);
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }

    case OpKind::maxpool2d: {
      const Tensor& x = in(0);
      if (x.rank() != 4) fail(id, "expects x[N,C,H,W]; got " + shape_to_string(x.shape()));
      const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
      if (h < node.kernel || wd < node.kernel) fail(id, "pool window larger than input " + shape_to_string(x.shape()));
      const std::size_t oh = (h - node.kernel) / node.stride + 1;
      const std::size_t ow = (wd - node.kernel) / node.stride + 1;
      Tensor out({n, c, oh, ow});
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t ki = 0; ki < node.kernel; ++ki) {
              for (std::size_t kj = 0; kj < node.kernel; ++kj) {
                best = std::max(best, x[(plane * h + i * node.stride + ki) * wd + j * node.stride + kj]);
              }
            }
            out[(plane * oh + i) * ow + j] = best;
          }
        }
      }
      return out;
    }

    case OpKind::softmax: {
      Tensor out = in(0);
      const std::size_t width = out.shape().back();
      for (std::size_t start = 0; start < out.size(); start += width) {
        double* row = out.data().data() + start;
        const double top = *std::max_element(row, row + width);
        double total = 0.0;
        for (std::size_t k = 0; k < width; ++k) {
          row[k] = std::exp(row[k] - top);
          total += row[k];
        }
        for (std::size_t k = 0; k < width; ++k) row[k] /= total;
      }
      return out;
    }

    case OpKind::log: {
      Tensor out = in(0);
      for (double& v : out.data()) v = std::log(std::max(v, node.scalar));
      return out;
    }

    case OpKind::sum: {
      double total = 0.0;
      for (double v : in(0).data()) total += v;
      return Tensor({1}, std::vector<double>{total});
    }

    case OpKind::scale: {
      Tensor out = in(0);
      for (double& v : out.data()) v *= node.scalar;
      return out;
    }

    case OpKind::multiply: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() != b.shape()) {
        fail(id, "operand shapes differ: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
      }
      Tensor out = a;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
      return out;
    }

    case OpKind::add: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.shape() != b.shape()) {
        fail(id, "operand shapes differ: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
      }
      Tensor out = a;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      return out;
    }

    case OpKind::flatten: {
      const Tensor& x = in(0);
      if (x.rank() < 2) fail(id, "expects a batch axis; got " + shape_to_string(x.shape()));
      return x.reshaped({x.dim(0), x.size() / x.dim(0)});
    }
  }
  fail(id, "unknown operation");
}

TensorMap ComputeGraph::backward(NodeId loss) const {
  if (!evaluated_) throw GraphError("backward called before forward");
  if (loss >= nodes_.size()) throw GraphError("backward: node " + std::to_string(loss) + " does not exist");
  if (values_[loss].size() != 1) {
    fail(loss, "backward requires a scalar loss; got " + shape_to_string(values_[loss].shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss] = Tensor(values_[loss].shape(), 1.0);
  for (NodeId id = loss + 1; id-- > 0;) {
    if (grads[id].size() == 0 || nodes_[id].kind == OpKind::leaf) continue;
    propagate(id, grads[id], grads);
  }
  TensorMap out;
  for (NodeId id = 0; id <= loss; ++id) {
    if (nodes_[id].kind != OpKind::leaf) continue;
    out.emplace(nodes_[id].name, grads[id].size() == 0 ? Tensor(values_[id].shape(), 0.0) : std::move(grads[id]));
  }
  return out;
}

void ComputeGraph::propagate(NodeId id, const Tensor& g, std::vector<Tensor>& grads) const {
  const Node& node = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return values_[node.parents[k]]; };
  auto send = [&](std::size_t k, const Tensor& contribution) { accumulate(grads[node.parents[k]], contribution); };

  switch (node.kind) {
    case OpKind::leaf:
      break;

    case OpKind::affine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const std::size_t n = x.dim(0), fan_in = x.dim(1), fan_out = w.dim(0);
      Tensor dx(x.shape()), dw(w.shape()), db({fan_out});
      for (std::size_t r = 0; r < n; ++r) {
        const double* xr = x.data().data() + r * fan_in;
        double* dxr = dx.data().data() + r * fan_in;
        for (std::size_t o = 0; o < fan_out; ++o) {
          const double go = g[r * fan_out + o];
          if (go == 0.0) continue;
          const double* wo = w.data().data() + o * fan_in;
          double* dwo = dw.data().data() + o * fan_in;
          for (std::size_t i = 0; i < fan_in; ++i) {
            dxr[i] += go * wo[i];
            dwo[i] += go * xr[i];
          }
          db[o] += go;
        }
      }
      send(0, dx);
      send(1, dw);
      send(2, db);
      break;
    }

    case OpKind::conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const std::size_t oc = w.dim(0), k = w.dim(2);
      const std::size_t oh = g.dim(2), ow = g.dim(3);
      const auto pad = static_cast<std::ptrdiff_t>(node.padding);
      Tensor dx(x.shape()), dw(w.shape()), db({oc});
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < oc; ++o) {
          for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
              const double go = g[((s * oc + o) * oh + i) * ow + j];
              if (go == 0.0) continue;
              db[o] += go;
              for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t ki = 0; ki < k; ++ki) {
                  const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(i * node.stride + ki) - pad;
                  if (row < 0 || row >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kj = 0; kj < k; ++kj) {
                    const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(j * node.stride + kj) - pad;
                    if (col < 0 || col >= static_cast<std::ptrdiff_t>(wd)) continue;
                    const std::size_t xi = ((s * c + ch) * h + row) * wd + col;
                    const std::size_t wi = ((o * c + ch) * k + ki) * k + kj;
                    dx[xi] += go * w[wi];
                    dw[wi] += go * x[xi];
                  }
                }
              }
            }
          }
        }
      }
      send(0, dx);
      send(1, dw);
      send(2, db);
      break;
    }

    case OpKind::relu: {
      const Tensor& x = in(0);
      Tensor dx = g;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (x[i] <= 0.0) dx[i] = 0.0;
      }
      send(0, dx);
      break;
    }

    case OpKind::maxpool2d: {
      const Tensor& x = in(0);
      const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const std::size_t oh = g.dim(2), ow = g.dim(3);
      Tensor dx(x.shape());
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            // Gradient goes to the first maximal element of the window.
            std::size_t arg = 0;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t ki = 0; ki < node.kernel; ++ki) {
              for (std::size_t kj = 0; kj < node.kernel; ++kj) {
                const std::size_t xi = (plane * h + i * node.stride + ki) * wd + j * node.stride + kj;
                if (x[xi] > best) {
                  best = x[xi];
                  arg = xi;
                }
              }
            }
            dx[arg] += g[(plane * oh + i) * ow + j];
          }
        }
      }
      send(0, dx);
      break;
    }

    case OpKind::softmax: {
      const Tensor& y = values_[id];
      const std::size_t width = y.shape().back();
      Tensor dx(y.shape());
      for (std::size_t start = 0; start < y.size(); start += width) {
        double dot = 0.0;
        for (std::size_t k = 0; k < width; ++k) dot += g[start + k] * y[start + k];
        for (std::size_t k = 0; k < width; ++k) dx[start + k] = y[start + k] * (g[start + k] - dot);
      }
      send(0, dx);
      break;
    }

    case OpKind::log: {
      const Tensor& x = in(0);
      Tensor dx = g;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] = x[i] > node.scalar ? dx[i] / x[i] : 0.0;
      }
      send(0, dx);
      break;
    }

    case OpKind::sum:
      send(0, Tensor(in(0).shape(), g[0]));
      break;

    case OpKind::scale: {
      Tensor dx = g;
      for (double& v : dx.data()) v *= node.scalar;
      send(0, dx);
      break;
    }

    case OpKind::multiply: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor da = g, db = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] *= b[i];
        db[i] *= a[i];
      }
      send(0, da);
      send(1, db);
      break;
    }

    case OpKind::add:
      send(0, g);
      send(1, g);
      break;

    case OpKind::flatten:
      send(0, g.reshaped(in(0).shape()));
      break;
  }
}

}  // namespace mma
