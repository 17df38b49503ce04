/* Copyright 2026 The DirMoE Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Minimal reverse-mode automatic differentiation over dense vectors and
// matrices. A Tape records nodes in creation order, which is a topological
// order, so backward() is a single reverse sweep.
//
// Random draws made while building a graph are stored on the tape as
// constants (or as CDF levels for Dirichlet draws), so gradients are exact
// for the recorded noise realization and can be checked by finite differences.

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "dirmoe/divergence.hpp"
#include "dirmoe/errors.hpp"
#include "dirmoe/random.hpp"
#include "dirmoe/stochastics.hpp"
#include "dirmoe/tensor.hpp"

namespace dirmoe::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  double scalar() const;
  std::size_t size() const { return value().size(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the tape and the node's own id; accumulates into parent adjoints.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back({std::move(value), {}, requires_grad, {}});
    return {this, nodes_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op result. The backward function is dropped when no parent
  // needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) {
      if (p.tape() != this) throw ShapeError("tape: operand belongs to a different tape");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back({std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
    return {this, nodes_.size() - 1};
  }

  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) {
      if (p.tape() != this) throw ShapeError("tape: operand belongs to a different tape");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back({std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
    return {this, nodes_.size() - 1};
  }

  // Reverse sweep from a scalar root. Adjoints are reset first, so calling it
  // twice on the same graph gives identical results.
  void backward(Var loss) {
    if (loss.tape() != this) throw ShapeError("backward: loss belongs to a different tape");
    if (nodes_[loss.id()].value.size() != 1) {
      throw std::logic_error("backward: root must be a scalar");
    }
    for (auto& n : nodes_) {
      n.adjoint = Tensor(n.value.rows, n.value.cols, 0.0);
    }
    nodes_[loss.id()].adjoint.data[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, i);
    }
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& adjoint(std::size_t id) const { return nodes_[id].adjoint; }
  Tensor& adjoint_mut(std::size_t id) { return nodes_[id].adjoint; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor adjoint;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // stable references across push_back
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->adjoint(id_); }
inline double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("Var::scalar on non-scalar node " + v.shape_string());
  return v.data[0];
}
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline bool is_scalar(const Tensor& t) { return t.size() == 1; }

inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

// Adds `g` into the adjoint of `v` when `v` participates in differentiation.
inline void accumulate(Tape& tape, const Var& v, std::span<const double> g) {
  if (!v.requires_grad()) return;
  auto& adj = tape.adjoint_mut(v.id()).data;
  for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g[i];
}

template <typename F, typename D>
Var unary(Var a, F forward, D derivative) {
  const Tensor& x = a.value();
  Tensor out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = forward(x.data[i]);
  Tape& tape = *a.tape();
  return tape.record(std::move(out), {a}, [a, derivative](Tape& t, std::size_t self) {
    if (!a.requires_grad()) return;
    const Tensor& g = t.adjoint(self);
    const Tensor& y = t.value(self);
    const Tensor& x = a.value();
    auto& adj = t.adjoint_mut(a.id()).data;
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g.data[i] * derivative(x.data[i], y.data[i]);
  });
}

// Elementwise binary op with scalar broadcast on either side.
template <typename F, typename DA, typename DB>
Var binary(Var a, Var b, const char* name, F forward, DA d_a, DB d_b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool bx = is_scalar(x) && !is_scalar(y);
  const bool by = is_scalar(y) && !is_scalar(x);
  if (!bx && !by) same_shape(x, y, name);
  const Tensor& shape = bx ? y : x;
  Tensor out(shape.rows, shape.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = forward(x.data[bx ? 0 : i], y.data[by ? 0 : i]);
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, bx, by, d_a, d_b](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (a.requires_grad()) {
      auto& adj = t.adjoint_mut(a.id()).data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        adj[bx ? 0 : i] += g.data[i] * d_a(x.data[bx ? 0 : i], y.data[by ? 0 : i]);
      }
    }
    if (b.requires_grad()) {
      auto& adj = t.adjoint_mut(b.id()).data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        adj[by ? 0 : i] += g.data[i] * d_b(x.data[bx ? 0 : i], y.data[by ? 0 : i]);
      }
    }
  });
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

// Elementwise (Hadamard) product, or scalar times tensor.
inline Var mul(Var a, Var b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var hadamard(Var a, Var b) { return mul(a, b); }

inline Var scale(Var a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, detail::sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(Var a) {
  return detail::unary(a, detail::softplus_value,
                       [](double x, double) { return detail::sigmoid_value(x); });
}

inline Var exp(Var a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var square(Var a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// tanh approximation of GELU.
inline Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return detail::unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))); },
      [](double x, double) {
        const double u = kC * (x + kA * x * x * x);
        const double th = std::tanh(u);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * x * x);
      });
}

inline Var sum(Var a) {
  const Tensor& x = a.value();
  Tensor out(1, 1, dirmoe::sum(x.span()));
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.adjoint(self).data[0];
    for (double& v : t.adjoint_mut(a.id()).data) v += g;
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

// v - mean(v)
inline Var center(Var a) {
  const Tensor& x = a.value();
  const double m = dirmoe::sum(x.span()) / static_cast<double>(x.size());
  Tensor out = x;
  for (double& v : out.data) v -= m;
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const double gm = dirmoe::sum(g.span()) / static_cast<double>(g.size());
    auto& adj = t.adjoint_mut(a.id()).data;
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g.data[i] - gm;
  });
}

inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols != B.rows) {
    throw ShapeError("matmul: " + A.shape_string() + " x " + B.shape_string());
  }
  const std::size_t n = A.rows, m = A.cols, q = B.cols;
  Tensor out(n, q);
  const double* pa = A.data.data();
  const double* pb = B.data.data();
  double* po = out.data.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      const double aik = pa[i * m + k];
      const double* brow = pb + k * q;
      double* orow = po + i * q;
      for (std::size_t j = 0; j < q; ++j) orow[j] += aik * brow[j];
    }
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, n, m, q](Tape& t, std::size_t self) {
    const double* g = t.adjoint(self).data.data();
    const double* pa = a.value().data.data();
    const double* pb = b.value().data.data();
    if (a.requires_grad()) {
      double* da = t.adjoint_mut(a.id()).data.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < m; ++k) {
          const double* brow = pb + k * q;
          const double* grow = g + i * q;
          double acc = 0.0;
          for (std::size_t j = 0; j < q; ++j) acc += grow[j] * brow[j];
          da[i * m + k] += acc;
        }
    }
    if (b.requires_grad()) {
      double* db = t.adjoint_mut(b.id()).data.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < m; ++k) {
          const double aik = pa[i * m + k];
          const double* grow = g + i * q;
          double* drow = db + k * q;
          for (std::size_t j = 0; j < q; ++j) drow[j] += aik * grow[j];
        }
    }
  });
}

// M + b 1^T: adds the column vector b to every column of M.
inline Var add_columnwise(Var m, Var b) {
  const Tensor& M = m.value();
  const Tensor& B = b.value();
  if (B.size() != M.rows) throw ShapeError("add_columnwise: " + M.shape_string() + " + " + B.shape_string());
  Tensor out = M;
  for (std::size_t i = 0; i < M.rows; ++i)
    for (std::size_t j = 0; j < M.cols; ++j) out(i, j) += B.data[i];
  return m.tape()->record(std::move(out), {m, b}, [m, b](Tape& t, std::size_t self) {
    const Tensor& G = t.adjoint(self);
    detail::accumulate(t, m, G.span());
    if (b.requires_grad()) {
      auto& db = t.adjoint_mut(b.id()).data;
      for (std::size_t i = 0; i < G.rows; ++i)
        for (std::size_t j = 0; j < G.cols; ++j) db[i] += G(i, j);
    }
  });
}

// out(i, j) = M(i, j) * w_j for a weight vector w with one entry per column.
inline Var scale_columns(Var m, Var w) {
  const Tensor& M = m.value();
  const Tensor& W = w.value();
  if (W.size() != M.cols) throw ShapeError("scale_columns: " + M.shape_string() + " by " + W.shape_string());
  Tensor out = M;
  for (std::size_t i = 0; i < M.rows; ++i)
    for (std::size_t j = 0; j < M.cols; ++j) out(i, j) *= W.data[j];
  return m.tape()->record(std::move(out), {m, w}, [m, w](Tape& t, std::size_t self) {
    const Tensor& G = t.adjoint(self);
    const Tensor& M = m.value();
    const Tensor& W = w.value();
    if (m.requires_grad()) {
      Tensor& dm = t.adjoint_mut(m.id());
      for (std::size_t i = 0; i < G.rows; ++i)
        for (std::size_t j = 0; j < G.cols; ++j) dm(i, j) += G(i, j) * W.data[j];
    }
    if (w.requires_grad()) {
      auto& dw = t.adjoint_mut(w.id()).data;
      for (std::size_t i = 0; i < G.rows; ++i)
        for (std::size_t j = 0; j < G.cols; ++j) dw[j] += G(i, j) * M(i, j);
    }
  });
}

// Row i of M as a column vector.
inline Var row(Var m, std::size_t i) {
  const Tensor& M = m.value();
  if (i >= M.rows) throw ShapeError("row: index out of range for " + M.shape_string());
  Tensor out(M.cols, 1);
  for (std::size_t j = 0; j < M.cols; ++j) out.data[j] = M(i, j);
  return m.tape()->record(std::move(out), {m}, [m, i](Tape& t, std::size_t self) {
    const Tensor& G = t.adjoint(self);
    Tensor& dm = t.adjoint_mut(m.id());
    for (std::size_t j = 0; j < G.size(); ++j) dm(i, j) += G.data[j];
  });
}

// W x + b
inline Var affine(Var w, Var x, Var b) { return add(matmul(w, x), b); }

// Columns [v_0 | v_1 | ...] of equal-length vectors.
inline Var stack_columns(std::span<const Var> columns) {
  if (columns.empty()) throw ShapeError("stack_columns: no columns");
  const std::size_t rows = columns[0].size();
  Tensor out(rows, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const Tensor& v = columns[c].value();
    if (v.size() != rows) throw ShapeError("stack_columns: column length mismatch");
    for (std::size_t r = 0; r < rows; ++r) out(r, c) = v.data[r];
  }
  std::vector<Var> cols(columns.begin(), columns.end());
  Tape& tape = *columns[0].tape();
  return tape.record(std::move(out), columns, [cols](Tape& t, std::size_t self) {
    const Tensor& G = t.adjoint(self);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (!cols[c].requires_grad()) continue;
      auto& adj = t.adjoint_mut(cols[c].id()).data;
      for (std::size_t r = 0; r < adj.size(); ++r) adj[r] += G(r, c);
    }
  });
}

// (v + eps) / sum_j (v_j + eps); inputs must be nonnegative.
inline Var normalize_l1_with_leak(Var v, double eps) {
  const Tensor& x = v.value();
  if (eps < 0.0) throw DomainError("normalize_l1_with_leak: leak must be nonnegative");
  double total = 0.0;
  for (double xi : x.data) {
    if (!(xi >= 0.0)) throw DomainError("normalize_l1_with_leak: inputs must be nonnegative");
    total += xi + eps;
  }
  if (!(total > 0.0)) throw DomainError("normalize_l1_with_leak: zero total mass");
  Tensor out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = (x.data[i] + eps) / total;
  return v.tape()->record(std::move(out), {v}, [v, total](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& y = t.value(self);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g.data[i] * y.data[i];
    auto& adj = t.adjoint_mut(v.id()).data;
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += (g.data[i] - gy) / total;
  });
}

// Softmax over the entries where mask is set; zeros elsewhere.
inline Var masked_softmax(Var logits, const std::vector<bool>& mask) {
  const Tensor& x = logits.value();
  if (mask.size() != x.size()) throw ShapeError("masked_softmax: mask size mismatch");
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mask[i]) top = std::max(top, x.data[i]);
  Tensor out(x.rows, x.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i]) total += (out.data[i] = std::exp(x.data[i] - top));
  }
  if (!(total > 0.0)) throw DomainError("masked_softmax: empty mask");
  for (double& o : out.data) o /= total;
  return logits.tape()->record(std::move(out), {logits}, [logits](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& y = t.value(self);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g.data[i] * y.data[i];
    auto& adj = t.adjoint_mut(logits.id()).data;
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += y.data[i] * (g.data[i] - gy);
  });
}

inline Var softmax(Var logits) { return masked_softmax(logits, std::vector<bool>(logits.size(), true)); }

// Value passes through; no gradient reaches the ancestors.
inline Var stop_gradient(Var v) { return v.tape()->constant(v.value()); }

// Closed-form KL(Dir(q) || Dir(p)) as a scalar node.
inline Var dirichlet_kl(Var q, Var p) {
  detail::same_shape(q.value(), p.value(), "dirichlet_kl");
  const double kl = dirmoe::dirichlet_kl(q.value().span(), p.value().span());
  return q.tape()->record(Tensor(1, 1, kl), {q, p}, [q, p](Tape& t, std::size_t self) {
    const double g = t.adjoint(self).data[0];
    const auto grad = dirmoe::dirichlet_kl_gradient(q.value().span(), p.value().span());
    if (q.requires_grad()) {
      auto& adj = t.adjoint_mut(q.id()).data;
      for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g * grad.d_q[i];
    }
    if (p.requires_grad()) {
      auto& adj = t.adjoint_mut(p.id()).data;
      for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g * grad.d_p[i];
    }
  });
}

// A reparameterized Dirichlet draw recorded on the tape.
struct DirichletDraw {
  Var theta;
  DirichletSample sample;

  // Replay key: feeding these back through dirichlet_node reproduces the draw.
  std::vector<specfun::GammaLevels> levels() const { return gamma_levels(sample); }
};

namespace detail {

inline DirichletDraw record_dirichlet(Var alphas, DirichletSample sample) {
  Tensor theta(alphas.value().rows, alphas.value().cols, sample.theta);
  const Var out = alphas.tape()->record(
      std::move(theta), {alphas}, [alphas, sample](Tape& t, std::size_t self) {
        // g_alpha_j = theta_j dlogz_j/dalpha_j (g_j - sum_i g_i theta_i)
        const Tensor& g = t.adjoint(self);
        double g_theta = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) g_theta += g.data[i] * sample.theta[i];
        auto& adj = t.adjoint_mut(alphas.id()).data;
        for (std::size_t j = 0; j < adj.size(); ++j) {
          const double dlog = implicit_log_gamma_grad(sample.log_gammas[j], sample.alphas[j]);
          adj[j] += sample.theta[j] * dlog * (g.data[j] - g_theta);
        }
      });
  return {out, std::move(sample)};
}

}  // namespace detail

// theta ~ Dir(alphas) drawn from `stream`; backward applies the implicit
// reparameterization Jacobian.
inline DirichletDraw dirichlet_node(Var alphas, SeededStream& stream) {
  return detail::record_dirichlet(alphas, sample_dirichlet(alphas.value().span(), stream));
}

// Same node with the noise given as Gamma CDF levels (fixed-noise replay).
inline DirichletDraw dirichlet_node(Var alphas, std::span<const specfun::GammaLevels> levels) {
  return detail::record_dirichlet(alphas, dirichlet_from_levels(alphas.value().span(), levels));
}

}  // namespace dirmoe::ad
