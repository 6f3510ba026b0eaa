#include "windinr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "windinr/linalg.hpp"

namespace windinr::ad {

namespace kp = kernels::parallel;

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

void require_same_shape(Var a, Var b, const char* op) {
  require(a.value().shape() == b.value().shape(), std::string(op) + ": shape mismatch " +
                                                      shape_string(a.value().shape()) + " vs " +
                                                      shape_string(b.value().shape()));
}

void require_rowvec(Var a, Var row, const char* op) {
  require(row.value().size() == a.cols(), std::string(op) + ": row vector of length " +
                                              std::to_string(row.value().size()) + " for " +
                                              shape_string(a.value().shape()));
}

// y = f(x) elementwise with dy/dx computed from (x, y).
template <typename F, typename D>
Var unary(Var a, const char* op, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const Var parents[] = {a};
  return a.graph().record(std::move(y), parents,
                          [a, dfdx](Graph& g, const Tensor& gout) {
                            if (!a.requires_grad()) return;
                            const Tensor& x = a.value();
                            Tensor& gx = g.grad_ref(a);
                            for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gout[i] * dfdx(x[i]);
                          },
                          op);
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Graph

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::input(const std::string& name, bool requires_grad) {
  if (bindings_ == nullptr) throw UnboundLeaf(name);
  auto it = bindings_->find(name);
  if (it == bindings_->end()) throw UnboundLeaf(name);
  return leaf(it->second, requires_grad, name);
}

Var Graph::leaf(Tensor value, bool requires_grad, std::string name) {
  if (!value.all_finite()) throw NumericalError("non-finite leaf value" + (name.empty() ? "" : " '" + name + "'"));
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.name = std::move(name);
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::span<const Var> parents, BackwardFn backward, const char* op) {
  if (!value.all_finite()) throw NumericalError(std::string("non-finite result in ") + op);
  bool needs = false;
  for (Var p : parents) {
    if (p.graph_ != this) throw std::logic_error(std::string(op) + ": operand from another graph");
    needs = needs || p.requires_grad();
  }
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_ref(Var v) {
  Node& n = nodes_[v.id_];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var root) {
  if (root.graph_ != this) throw std::logic_error("backward: root from another graph");
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " + shape_string(root.value().shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  backward_done_ = true;
  if (!root.requires_grad()) return;
  grad_ref(root).fill(1.0);
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    if (!n.grad.all_finite()) throw NumericalError("non-finite adjoint at node " + std::to_string(i));
    n.backward(*this, n.grad);
  }
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

LeafMap Graph::leaf_gradients() const {
  LeafMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.name.empty()) continue;
    auto [it, inserted] = out.try_emplace(n.name, Tensor(n.value.shape()));
    if (!n.has_grad) continue;
    // leaves bound to the same name are the same input
    if (it->second.shape() != n.grad.shape()) throw std::logic_error("leaf '" + n.name + "' bound with two shapes");
    for (std::size_t k = 0; k < n.grad.size(); ++k) it->second[k] += n.grad[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor c({n, m});
  kp::gemm_nn(n, k, m, av.raw(), bv.raw(), c.raw(), false);
  const Var parents[] = {a, b};
  return a.graph().record(std::move(c), parents,
                          [a, b, n, k, m](Graph& g, const Tensor& gout) {
                            if (a.requires_grad())
                              kp::gemm_nt(n, m, k, gout.raw(), b.value().raw(), g.grad_ref(a).raw(), true);
                            if (b.requires_grad())
                              kp::gemm_tn(k, n, m, a.value().raw(), gout.raw(), g.grad_ref(b).raw(), true);
                          },
                          "matmul");
}

Var matmul_tn(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rows() == bv.rows(), "matmul_tn: " + shape_string(av.shape()) + "^T x " + shape_string(bv.shape()));
  const std::size_t m = av.rows(), p = av.cols(), q = bv.cols();
  Tensor c({p, q});
  kp::gemm_tn(p, m, q, av.raw(), bv.raw(), c.raw(), false);
  const Var parents[] = {a, b};
  return a.graph().record(std::move(c), parents,
                          [a, b, m, p, q](Graph& g, const Tensor& gout) {
                            if (a.requires_grad())
                              kp::gemm_nt(m, q, p, b.value().raw(), gout.raw(), g.grad_ref(a).raw(), true);
                            if (b.requires_grad())
                              kp::gemm_nn(m, p, q, a.value().raw(), gout.raw(), g.grad_ref(b).raw(), true);
                          },
                          "matmul_tn");
}

// ---------------------------------------------------------------------------
// elementwise and broadcasting

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += bv[i];
  const Var parents[] = {a, b};
  return a.graph().record(std::move(c), parents,
                          [a, b](Graph& g, const Tensor& gout) {
                            for (Var p : {a, b}) {
                              if (!p.requires_grad()) continue;
                              Tensor& gp = g.grad_ref(p);
                              for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout[i];
                            }
                          },
                          "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= bv[i];
  const Var parents[] = {a, b};
  return a.graph().record(std::move(c), parents,
                          [a, b](Graph& g, const Tensor& gout) {
                            if (a.requires_grad()) {
                              Tensor& ga = g.grad_ref(a);
                              for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
                            }
                            if (b.requires_grad()) {
                              Tensor& gb = g.grad_ref(b);
                              for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gout[i];
                            }
                          },
                          "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
  const Var parents[] = {a, b};
  return a.graph().record(std::move(c), parents,
                          [a, b](Graph& g, const Tensor& gout) {
                            if (a.requires_grad()) {
                              Tensor& ga = g.grad_ref(a);
                              const Tensor& bv = b.value();
                              for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * bv[i];
                            }
                            if (b.requires_grad()) {
                              Tensor& gb = g.grad_ref(b);
                              const Tensor& av = a.value();
                              for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * av[i];
                            }
                          },
                          "mul");
}

Var add_rowvec(Var a, Var row) {
  require_rowvec(a, row, "add_rowvec");
  const std::size_t n = a.rows(), c = a.cols();
  Tensor y = a.value().reshaped({n, c});
  const Tensor& r = row.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] += r[j];
  const Var parents[] = {a, row};
  return a.graph().record(std::move(y), parents,
                          [a, row, n, c](Graph& g, const Tensor& gout) {
                            if (a.requires_grad()) {
                              Tensor& ga = g.grad_ref(a);
                              for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
                            }
                            if (row.requires_grad()) {
                              Tensor& gr = g.grad_ref(row);
                              for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < c; ++j) gr[j] += gout[i * c + j];
                            }
                          },
                          "add_rowvec");
}

Var sub_rowvec(Var a, Var row) { return add_rowvec(a, scale(row, -1.0)); }

Var mul_rowvec(Var a, Var row) {
  require_rowvec(a, row, "mul_rowvec");
  const std::size_t n = a.rows(), c = a.cols();
  Tensor y = a.value().reshaped({n, c});
  const Tensor& r = row.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] *= r[j];
  const Var parents[] = {a, row};
  return a.graph().record(std::move(y), parents,
                          [a, row, n, c](Graph& g, const Tensor& gout) {
                            const Tensor& r = row.value();
                            const Tensor& av = a.value();
                            if (a.requires_grad()) {
                              Tensor& ga = g.grad_ref(a);
                              for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gout[i * c + j] * r[j];
                            }
                            if (row.requires_grad()) {
                              Tensor& gr = g.grad_ref(row);
                              for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < c; ++j) gr[j] += gout[i * c + j] * av[i * c + j];
                            }
                          },
                          "mul_rowvec");
}

Var broadcast_rows(Var row, std::size_t n) {
  const std::size_t c = row.value().size();
  Tensor y({n, c});
  const Tensor& r = row.value();
  for (std::size_t i = 0; i < n; ++i) std::copy(r.raw(), r.raw() + c, y.raw() + i * c);
  const Var parents[] = {row};
  return row.graph().record(std::move(y), parents,
                            [row, n, c](Graph& g, const Tensor& gout) {
                              Tensor& gr = g.grad_ref(row);
                              for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < c; ++j) gr[j] += gout[i * c + j];
                            },
                            "broadcast_rows");
}

Var scale(Var a, double s) { return affine(a, s, 0.0); }

Var affine(Var a, double s, double shift) {
  return unary(
      a, "affine", [s, shift](double x) { return s * x + shift; }, [s](double) { return s; });
}

Var silu(Var a) {
  return unary(
      a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x) {
        const double sg = 1.0 / (1.0 + std::exp(-x));
        return sg * (1.0 + x * (1.0 - sg));
      });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sqrt_eps(Var a, double eps) {
  return unary(
      a, "sqrt_eps", [eps](double x) { return std::sqrt(x + eps); },
      [eps](double x) { return 0.5 / std::sqrt(x + eps); });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const Var parents[] = {a};
  return a.graph().record(Tensor::scalar(s), parents,
                          [a](Graph& g, const Tensor& gout) {
                            Tensor& ga = g.grad_ref(a);
                            const double d = gout[0];
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d;
                          },
                          "sum");
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_rows(Var a) {
  const std::size_t n = a.rows(), c = a.cols();
  Tensor y({1, c});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j] += x[i * c + j];
  const Var parents[] = {a};
  return a.graph().record(std::move(y), parents,
                          [a, n, c](Graph& g, const Tensor& gout) {
                            Tensor& ga = g.grad_ref(a);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += gout[j];
                          },
                          "sum_rows");
}

Var mean_rows(Var a) {
  require(a.rows() > 0, "mean_rows: no rows");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Var col_max(Var a) {
  const std::size_t n = a.rows(), c = a.cols();
  require(n > 0, "col_max: no rows");
  const Tensor& x = a.value();
  Tensor y({1, c});
  std::vector<std::size_t> arg(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    double best = x[j];
    for (std::size_t i = 1; i < n; ++i) {
      if (x[i * c + j] > best) {
        best = x[i * c + j];
        arg[j] = i;
      }
    }
    y[j] = best;
  }
  const Var parents[] = {a};
  return a.graph().record(std::move(y), parents,
                          [a, c, arg = std::move(arg)](Graph& g, const Tensor& gout) {
                            Tensor& ga = g.grad_ref(a);
                            for (std::size_t j = 0; j < c; ++j) ga[arg[j] * c + j] += gout[j];
                          },
                          "col_max");
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  require(x.size() > 0, "softmax: empty tensor");
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  Tensor y(x.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    z += y[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= z;
  const Var parents[] = {a};
  Tensor yv = y;
  return a.graph().record(std::move(y), parents,
                          [a, yv = std::move(yv)](Graph& g, const Tensor& gout) {
                            double dot = 0.0;
                            for (std::size_t i = 0; i < yv.size(); ++i) dot += gout[i] * yv[i];
                            Tensor& ga = g.grad_ref(a);
                            for (std::size_t i = 0; i < yv.size(); ++i) ga[i] += yv[i] * (gout[i] - dot);
                          },
                          "softmax");
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no operands");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    require(p.rows() == n, "concat_cols: row mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor y({n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < n; ++i)
      std::copy(v.raw() + i * widths[k], v.raw() + (i + 1) * widths[k], y.raw() + i * total + off);
    off += widths[k];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph().record(std::move(y), ps,
                                 [ps, widths, n, total](Graph& g, const Tensor& gout) {
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < ps.size(); ++k) {
                                     if (ps[k].requires_grad()) {
                                       Tensor& gp = g.grad_ref(ps[k]);
                                       for (std::size_t i = 0; i < n; ++i)
                                         for (std::size_t j = 0; j < widths[k]; ++j)
                                           gp[i * widths[k] + j] += gout[i * total + off + j];
                                     }
                                     off += widths[k];
                                   }
                                 },
                                 "concat_cols");
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const std::size_t n = a.rows(), c = a.cols();
  require(start + count <= c, "slice_cols: range out of bounds");
  Tensor y({n, count});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < n; ++i) std::copy(x.raw() + i * c + start, x.raw() + i * c + start + count, y.raw() + i * count);
  const Var parents[] = {a};
  return a.graph().record(std::move(y), parents,
                          [a, n, c, start, count](Graph& g, const Tensor& gout) {
                            Tensor& ga = g.grad_ref(a);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < count; ++j) ga[i * c + start + j] += gout[i * count + j];
                          },
                          "slice_cols");
}

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  const Var parents[] = {a};
  return a.graph().record(std::move(y), parents,
                          [a](Graph& g, const Tensor& gout) {
                            Tensor& ga = g.grad_ref(a);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
                          },
                          "reshape");
}

Var pick(Var a, std::size_t index) {
  require(index < a.value().size(), "pick: index out of range");
  const Var parents[] = {a};
  return a.graph().record(Tensor::scalar(a.value()[index]), parents,
                          [a, index](Graph& g, const Tensor& gout) { g.grad_ref(a)[index] += gout[0]; }, "pick");
}

// ---------------------------------------------------------------------------
// normalization

namespace {

// Normalizes `count` groups; group k holds the entries index(k, 0..len).
template <typename IndexFn>
Var normalize_groups(Var a, std::size_t count, std::size_t len, double eps, IndexFn index, const char* op) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  std::vector<double> inv_std(count);
  for (std::size_t k = 0; k < count; ++k) {
    double m = 0.0;
    for (std::size_t t = 0; t < len; ++t) m += x[index(k, t)];
    m /= static_cast<double>(len);
    double v = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      const double d = x[index(k, t)] - m;
      v += d * d;
    }
    v /= static_cast<double>(len);
    inv_std[k] = 1.0 / std::sqrt(v + eps);
    for (std::size_t t = 0; t < len; ++t) y[index(k, t)] = (x[index(k, t)] - m) * inv_std[k];
  }
  const Var parents[] = {a};
  Tensor ycopy = y;
  return a.graph().record(std::move(y), parents,
                          [a, count, len, index, inv_std = std::move(inv_std), yv = std::move(ycopy)](
                              Graph& g, const Tensor& gout) {
                            Tensor& ga = g.grad_ref(a);
                            const double inv_len = 1.0 / static_cast<double>(len);
                            for (std::size_t k = 0; k < count; ++k) {
                              double mg = 0.0, mgy = 0.0;
                              for (std::size_t t = 0; t < len; ++t) {
                                const std::size_t i = index(k, t);
                                mg += gout[i];
                                mgy += gout[i] * yv[i];
                              }
                              mg *= inv_len;
                              mgy *= inv_len;
                              for (std::size_t t = 0; t < len; ++t) {
                                const std::size_t i = index(k, t);
                                ga[i] += inv_std[k] * (gout[i] - mg - yv[i] * mgy);
                              }
                            }
                          },
                          op);
}

}  // namespace

Var layer_norm(Var a, double eps) {
  const std::size_t n = a.rows(), c = a.cols();
  return normalize_groups(
      a, n, c, eps, [c](std::size_t k, std::size_t t) { return k * c + t; }, "layer_norm");
}

Var group_norm(Var a, std::size_t groups, double eps) {
  const std::size_t pixels = a.rows(), c = a.cols();
  require(groups > 0 && c % groups == 0, "group_norm: " + std::to_string(c) + " channels not divisible into " +
                                             std::to_string(groups) + " groups");
  const std::size_t per = c / groups;
  return normalize_groups(
      a, groups, pixels * per, eps,
      [c, per](std::size_t k, std::size_t t) { return (t / per) * c + k * per + t % per; }, "group_norm");
}

// ---------------------------------------------------------------------------
// spatial

Var conv3x3(Var x, Var weights, std::size_t h, std::size_t w, kernels::Padding pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = weights.value();
  require(xv.rows() == h * w, "conv3x3: input has " + std::to_string(xv.rows()) + " pixels, expected " +
                                  std::to_string(h * w));
  const std::size_t cin = xv.cols();
  require(wv.rows() == 9 * cin, "conv3x3: weight rows " + std::to_string(wv.rows()) + " for " +
                                    std::to_string(cin) + " input channels");
  const std::size_t cout = wv.cols();
  const std::size_t pixels = h * w;
  auto cols = std::make_shared<std::vector<double>>(pixels * 9 * cin);
  kp::im2col3x3(h, w, cin, xv.raw(), cols->data(), pad);
  Tensor y({pixels, cout});
  kp::gemm_nn(pixels, 9 * cin, cout, cols->data(), wv.raw(), y.raw(), false);
  const Var parents[] = {x, weights};
  return x.graph().record(std::move(y), parents,
                          [x, weights, h, w, cin, cout, pixels, pad, cols](Graph& g, const Tensor& gout) {
                            if (weights.requires_grad())
                              kp::gemm_tn(9 * cin, pixels, cout, cols->data(), gout.raw(),
                                          g.grad_ref(weights).raw(), true);
                            if (x.requires_grad()) {
                              std::vector<double> gcols(pixels * 9 * cin);
                              kp::gemm_nt(pixels, cout, 9 * cin, gout.raw(), weights.value().raw(), gcols.data(),
                                          false);
                              kp::col2im3x3(h, w, cin, gcols.data(), g.grad_ref(x).raw(), pad);
                            }
                          },
                          "conv3x3");
}

Var bilinear_sample(Var map, std::size_t h, std::size_t w, std::vector<kernels::PixelCoord> at) {
  const Tensor& mv = map.value();
  require(mv.rows() == h * w, "bilinear_sample: map has " + std::to_string(mv.rows()) + " pixels, expected " +
                                  std::to_string(h * w));
  const std::size_t ch = mv.cols();
  Tensor y({at.size(), ch});
  kp::bilinear_gather(h, w, ch, mv.raw(), at.size(), at.data(), y.raw());
  const Var parents[] = {map};
  return map.graph().record(std::move(y), parents,
                            [map, h, w, ch, at = std::move(at)](Graph& g, const Tensor& gout) {
                              kp::bilinear_scatter(h, w, ch, gout.raw(), at.size(), at.data(),
                                                   g.grad_ref(map).raw());
                            },
                            "bilinear_sample");
}

// ---------------------------------------------------------------------------
// losses

Var inverse_quadratic(Var x, const linalg::Cholesky& chol) {
  const Tensor& xv = x.value();
  require(xv.size() == chol.dim(), "inverse_quadratic: vector length " + std::to_string(xv.size()) +
                                       " for matrix of order " + std::to_string(chol.dim()));
  auto solved = std::make_shared<std::vector<double>>(chol.solve(xv.data()));
  double q = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) q += xv[i] * (*solved)[i];
  const Var parents[] = {x};
  return x.graph().record(Tensor::scalar(q), parents,
                          [x, solved](Graph& g, const Tensor& gout) {
                            Tensor& gx = g.grad_ref(x);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * gout[0] * (*solved)[i];
                          },
                          "inverse_quadratic");
}

Var weighted_squared_error(Var pred, const Tensor& target, const Tensor& weight) {
  const Tensor& p = pred.value();
  require(p.size() == target.size() && p.size() == weight.size(),
          "weighted_squared_error: prediction " + shape_string(p.shape()) + " vs target " +
              shape_string(target.shape()) + " / weight " + shape_string(weight.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - target[i];
    s += weight[i] * d * d;
  }
  const Var parents[] = {pred};
  return pred.graph().record(Tensor::scalar(s), parents,
                             [pred, target, weight](Graph& g, const Tensor& gout) {
                               const Tensor& p = pred.value();
                               Tensor& gp = g.grad_ref(pred);
                               for (std::size_t i = 0; i < p.size(); ++i)
                                 gp[i] += 2.0 * gout[0] * weight[i] * (p[i] - target[i]);
                             },
                             "weighted_squared_error");
}

// ---------------------------------------------------------------------------
// Program

Program::Program(Expression expression, LeafMap leaves)
    : expression_(std::move(expression)), leaves_(std::move(leaves)) {}

double Program::forward() {
  graph_ = std::make_unique<Graph>(leaves_);
  root_ = expression_(*graph_);
  if (!root_.valid()) throw std::logic_error("expression returned an empty variable");
  if (root_.value().size() != 1) {
    throw std::invalid_argument("root must be scalar, got " + shape_string(root_.value().shape()));
  }
  return root_.value()[0];
}

LeafMap Program::backward() {
  if (!graph_) throw std::logic_error("backward() called before forward()");
  graph_->backward(root_);
  LeafMap grads = graph_->leaf_gradients();
  for (const auto& [name, value] : leaves_) {
    if (!grads.count(name)) grads[name] = Tensor(value.shape());
  }
  return grads;
}

double forward(const Expression& expression, const LeafMap& leaves) {
  Program p(expression, leaves);
  return p.forward();
}

LeafMap gradients(const Expression& expression, const LeafMap& leaves) {
  Program p(expression, leaves);
  p.forward();
  return p.backward();
}

double finite_diff_check(const Expression& expression, const LeafMap& leaves, const std::string& leaf,
                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  if (!leaves.count(leaf)) throw UnboundLeaf(leaf);
  const Tensor analytic = gradients(expression, leaves).at(leaf);
  LeafMap probe = leaves;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double x0 = leaves.at(leaf)[i];
    probe[leaf][i] = x0 + step;
    const double fp = forward(expression, probe);
    probe[leaf][i] = x0 - step;
    const double fm = forward(expression, probe);
    probe[leaf][i] = x0;
    const double numeric = (fp - fm) / (2.0 * step);
    if (!std::isfinite(numeric)) throw NumericalError("finite_diff_check: non-finite difference quotient");
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8));
  }
  return worst;
}

}  // namespace windinr::ad
