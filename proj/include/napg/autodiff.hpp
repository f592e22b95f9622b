#pragma once

// Minimal dense reverse-mode autodiff over 2-D double matrices.
//
// A Graph is a tape: every op appends a node holding its value and a backward
// closure. Vectors are 1 x d rows. Parameters live in a ParameterStore and are
// referenced (not copied) by graph leaves; Graph::accumulate adds their
// gradients into a GradBuffer after backward().

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "napg/erf.hpp"

namespace napg::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

// ---------------------------------------------------------------------------
// Parameters

struct Parameter {
  std::string name;
  Matrix value;
  std::size_t id = 0;
};

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Matrix init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    auto p = std::make_unique<Parameter>(Parameter{name, std::move(init), params_.size()});
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return *params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Per-parameter gradient accumulators, aligned with a ParameterStore.
/// Empty matrices stand for zero.
class GradBuffer {
 public:
  explicit GradBuffer(std::size_t n = 0) : grads_(n) {}

  void add(std::size_t id, const Matrix& g) {
    if (id >= grads_.size()) grads_.resize(id + 1);
    if (grads_[id].size() == 0) {
      grads_[id] = g;
    } else {
      grads_[id] += g;
    }
  }
  void add(const GradBuffer& other) {
    for (std::size_t i = 0; i < other.grads_.size(); ++i) {
      if (other.grads_[i].size() > 0) add(i, other.grads_[i]);
    }
  }
  void scale(double s) {
    for (auto& g : grads_) g *= s;
  }
  void clear() {
    for (auto& g : grads_) g.resize(0, 0);
  }

  std::size_t size() const noexcept { return grads_.size(); }
  bool has(std::size_t id) const { return id < grads_.size() && grads_[id].size() > 0; }
  const Matrix& operator[](std::size_t id) const { return grads_.at(id); }
  Matrix& operator[](std::size_t id) { return grads_.at(id); }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& g : grads_) s += g.squaredNorm();
    return s;
  }

 private:
  std::vector<Matrix> grads_;
};

// ---------------------------------------------------------------------------
// Graph

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;
  /// Gradient after Graph::backward(); zero matrix if none flowed here.
  Matrix grad() const;

  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  /// With record = false no gradients are tracked (inference mode).
  explicit Graph(bool record = true) : record_(record) { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Matrix v) { return push(std::move(v), nullptr, false, nullptr); }

  /// A leaf that receives a gradient (used for inputs under test).
  Var input(Matrix v) { return push(std::move(v), nullptr, record_, nullptr); }

  Var param(const Parameter& p) {
    if (auto it = param_nodes_.find(p.id); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(Matrix{}, &p.value, record_, nullptr);
    nodes_[v.id()].param_id = p.id;
    param_nodes_.emplace(p.id, v.id());
    return v;
  }

  using Backward = std::function<void(Graph&, const Matrix&)>;

  /// Appends an op result. `backward` receives the output gradient and must
  /// push gradients to parents via add_grad(). Dropped when no parent needs grad.
  template <class F>
  Var make(Matrix value, std::initializer_list<Var> parents, F&& backward) {
    return make(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::forward<F>(backward));
  }
  template <class F>
  Var make(Matrix value, std::span<const Var> parents, F&& backward) {
    bool needs = false;
    if (record_) {
      for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    }
    if (!needs) return push(std::move(value), nullptr, false, nullptr);
    return push(std::move(value), nullptr, true, Backward(std::forward<F>(backward)));
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  void add_grad(const Var& v, const Matrix& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }
  template <class Expr>
  void add_grad_expr(const Var& v, const Expr& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Matrix* grad_ptr(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad.size() > 0 ? &n.grad : nullptr;
  }

  void backward(const Var& loss) {
    if (!record_) throw std::logic_error("backward on a non-recording graph");
    if (value(loss.id()).size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(value(loss.id())));
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);  // closures only touch lower-indexed nodes
    }
  }

  void accumulate(GradBuffer& out) const {
    for (const auto& [pid, nid] : param_nodes_) {
      if (nodes_[nid].grad.size() > 0) out.add(pid, nodes_[nid].grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    std::size_t param_id = static_cast<std::size_t>(-1);
    Backward backward;
  };

  Var push(Matrix v, const Matrix* ref, bool requires_grad, Backward backward) {
    Node n;
    n.owned = std::move(v);
    n.ref = ref;
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::size_t, std::size_t> param_nodes_;
};

inline const Matrix& Var::value() const { return graph_->value(id_); }
inline bool Var::requires_grad() const { return graph_->requires_grad(id_); }
inline Matrix Var::grad() const {
  const Matrix* g = graph_->grad_ptr(id_);
  return g ? *g : Matrix::Zero(rows(), cols());
}

// ---------------------------------------------------------------------------
// Ops

namespace detail {
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw ShapeError("matmul: " + shape_str(av) + " x " + shape_str(bv));
  Matrix out = av * bv;
  return a.graph()->make(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go) {
    if (a.requires_grad()) g.add_grad_expr(a, go * b.value().transpose());
    if (b.requires_grad()) g.add_grad_expr(b, a.value().transpose() * go);
  });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) throw ShapeError("matmul_nt: " + shape_str(av) + " x " + shape_str(bv) + "^T");
  Matrix out = av * bv.transpose();
  return a.graph()->make(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go) {
    if (a.requires_grad()) g.add_grad_expr(a, go * b.value());
    if (b.requires_grad()) g.add_grad_expr(b, go.transpose() * a.value());
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  return a.graph()->make(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go) {
    g.add_grad(a, go);
    g.add_grad(b, go);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value() - b.value();
  return a.graph()->make(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go) {
    g.add_grad(a, go);
    if (b.requires_grad()) g.add_grad_expr(b, -go);
  });
}

/// Element-wise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.graph()->make(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& go) {
    if (a.requires_grad()) g.add_grad_expr(a, go.cwiseProduct(b.value()));
    if (b.requires_grad()) g.add_grad_expr(b, go.cwiseProduct(a.value()));
  });
}

inline Var scale(const Var& a, double s) {
  Matrix out = a.value() * s;
  return a.graph()->make(std::move(out), {a}, [a, s](Graph& g, const Matrix& go) { g.add_grad_expr(a, go * s); });
}

/// x (R x C) + bias (1 x C) broadcast over rows.
inline Var add_row(const Var& x, const Var& bias) {
  const Matrix& xv = x.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw ShapeError("add_row: " + shape_str(xv) + " + " + shape_str(bv));
  Matrix out = xv.rowwise() + bv.row(0);
  return x.graph()->make(std::move(out), {x, bias}, [x, bias](Graph& g, const Matrix& go) {
    g.add_grad(x, go);
    if (bias.requires_grad()) g.add_grad_expr(bias, go.colwise().sum());
  });
}

/// Exact GELU: x * Phi(x).
inline Var gelu(const Var& x) {
  Matrix out = x.value();
  gelu_inplace(out.data(), static_cast<std::size_t>(out.size()));
  return x.graph()->make(std::move(out), {x}, [x](Graph& g, const Matrix& go) {
    g.add_grad_expr(x, go.cwiseProduct(x.value().unaryExpr([](double v) { return gelu_derivative(v); })));
  });
}

inline Var tanh(const Var& x) {
  Matrix out = x.value().array().tanh().matrix();
  const std::size_t self = x.graph()->size();
  return x.graph()->make(std::move(out), {x}, [x, self](Graph& g, const Matrix& go) {
    g.add_grad_expr(x, go.cwiseProduct((1.0 - g.value(self).array().square()).matrix()));
  });
}

inline Var sigmoid(const Var& x) {
  Matrix out = x.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  const std::size_t self = x.graph()->size();
  return x.graph()->make(std::move(out), {x}, [x, self](Graph& g, const Matrix& go) {
    const auto s = g.value(self).array();
    g.add_grad_expr(x, (go.array() * s * (1.0 - s)).matrix());
  });
}

/// Row-wise softmax. Entries with mask[c] == false are excluded (probability 0).
inline Var softmax_rows(const Var& x, const std::vector<bool>* col_mask = nullptr) {
  const Matrix& xv = x.value();
  if (col_mask && static_cast<Eigen::Index>(col_mask->size()) != xv.cols()) throw ShapeError("softmax_rows: mask size");
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mx = detail::kNegInf;
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      if (!col_mask || (*col_mask)[static_cast<std::size_t>(c)]) mx = std::max(mx, xv(r, c));
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      const bool on = !col_mask || (*col_mask)[static_cast<std::size_t>(c)];
      out(r, c) = on ? std::exp(xv(r, c) - mx) : 0.0;
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  const std::size_t self = x.graph()->size();
  return x.graph()->make(std::move(out), {x}, [x, self](Graph& g, const Matrix& go) {
    const Matrix& s = g.value(self);
    Eigen::VectorXd dots = go.cwiseProduct(s).rowwise().sum();
    Matrix gx = s.cwiseProduct(go.colwise() - dots);
    g.add_grad(x, gx);
  });
}

/// Row-wise log-softmax with the same masking convention (masked -> -inf).
inline Var log_softmax_rows(const Var& x, const std::vector<bool>* col_mask = nullptr) {
  const Matrix& xv = x.value();
  if (col_mask && static_cast<Eigen::Index>(col_mask->size()) != xv.cols()) throw ShapeError("log_softmax_rows: mask size");
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mx = detail::kNegInf;
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      if (!col_mask || (*col_mask)[static_cast<std::size_t>(c)]) mx = std::max(mx, xv(r, c));
    }
    double sum = 0.0;
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      if (!col_mask || (*col_mask)[static_cast<std::size_t>(c)]) sum += std::exp(xv(r, c) - mx);
    }
    const double lse = mx + std::log(sum);
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      const bool on = !col_mask || (*col_mask)[static_cast<std::size_t>(c)];
      out(r, c) = on ? xv(r, c) - lse : detail::kNegInf;
    }
  }
  const std::size_t self = x.graph()->size();
  return x.graph()->make(std::move(out), {x}, [x, self](Graph& g, const Matrix& go) {
    // Masked entries carry -inf values; their incoming gradient must be ignored.
    const Matrix pv = g.value(self).array().exp().matrix();
    Matrix gm = (pv.array() > 0.0).select(go, 0.0);
    Eigen::VectorXd sums = gm.rowwise().sum();
    Matrix gx = gm - (pv.array().colwise() * sums.array()).matrix();
    g.add_grad(x, gx);
  });
}

inline Var transpose(const Var& x) {
  Matrix out = x.value().transpose();
  return x.graph()->make(std::move(out), {x}, [x](Graph& g, const Matrix& go) { g.add_grad_expr(x, go.transpose()); });
}

inline Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index n) {
  const Matrix& xv = x.value();
  if (start < 0 || start + n > xv.cols()) throw ShapeError("slice_cols out of range for " + shape_str(xv));
  Matrix out = xv.middleCols(start, n);
  return x.graph()->make(std::move(out), {x}, [x, start, n](Graph& g, const Matrix& go) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    gx.middleCols(start, n) = go;
    g.add_grad(x, gx);
  });
}

inline Var column(const Var& x, Eigen::Index c) { return slice_cols(x, c, 1); }

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph()->make(std::move(out), parts, [ps](Graph& g, const Matrix& go) {
    Eigen::Index off = 0;
    for (const Var& p : ps) {
      if (p.requires_grad()) g.add_grad_expr(p, go.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph()->make(std::move(out), parts, [ps](Graph& g, const Matrix& go) {
    Eigen::Index off = 0;
    for (const Var& p : ps) {
      if (p.requires_grad()) g.add_grad_expr(p, go.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

/// Gathers rows by index; embedding lookup when x is a parameter table.
inline Var select_rows(const Var& x, std::vector<int> idx) {
  const Matrix& xv = x.value();
  Matrix out(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= xv.rows()) throw ShapeError("select_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
  }
  return x.graph()->make(std::move(out), {x}, [x, idx = std::move(idx)](Graph& g, const Matrix& go) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
    g.add_grad(x, gx);
  });
}

inline Var mean_rows(const Var& x) {
  const Matrix& xv = x.value();
  if (xv.rows() == 0) throw ShapeError("mean_rows: empty input");
  Matrix out = xv.colwise().mean();
  return x.graph()->make(std::move(out), {x}, [x](Graph& g, const Matrix& go) {
    Matrix gx = go.replicate(x.rows(), 1) / static_cast<double>(x.rows());
    g.add_grad(x, gx);
  });
}

/// Mean of 1 x d row vectors.
inline Var mean_pool(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("mean_pool: empty list");
  return mean_rows(concat_rows(rows));
}

inline Var embed_lookup(Graph& g, const Parameter& table, std::vector<int> ids) {
  return select_rows(g.param(table), std::move(ids));
}

/// h * p + v_m * (1 - p): p (T x 1) broadcast across columns, v_m (1 x d) across rows.
inline Var soft_mask(const Var& h, const Var& p, const Var& v_m) {
  const Matrix& hv = h.value();
  const Matrix& pv = p.value();
  const Matrix& mv = v_m.value();
  if (pv.rows() != hv.rows() || pv.cols() != 1) throw ShapeError("soft_mask: p must be " + std::to_string(hv.rows()) + "x1");
  if (mv.rows() != 1 || mv.cols() != hv.cols()) throw ShapeError("soft_mask: v_m must be 1x" + std::to_string(hv.cols()));
  Matrix out(hv.rows(), hv.cols());
  for (Eigen::Index t = 0; t < hv.rows(); ++t) {
    const double pt = pv(t, 0);
    out.row(t) = hv.row(t) * pt + mv.row(0) * (1.0 - pt);
  }
  return h.graph()->make(std::move(out), {h, p, v_m}, [h, p, v_m](Graph& g, const Matrix& go) {
    const Matrix& hv = h.value();
    const Matrix& pv = p.value();
    const Matrix& mv = v_m.value();
    if (h.requires_grad()) g.add_grad_expr(h, (go.array().colwise() * pv.col(0).array()).matrix());
    if (p.requires_grad()) {
      Matrix gp = (go.cwiseProduct(hv.rowwise() - mv.row(0))).rowwise().sum();
      g.add_grad(p, gp);
    }
    if (v_m.requires_grad()) {
      Matrix gm = ((go.array().colwise() * (1.0 - pv.col(0).array())).matrix()).colwise().sum();
      g.add_grad(v_m, gm);
    }
  });
}

/// Row-wise layer normalisation with learned gain and bias (1 x d each).
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Matrix& xv = x.value();
  const Eigen::Index d = xv.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) throw ShapeError("layer_norm: gain/bias shape");
  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  Var xh = x.graph()->constant(xhat);
  Var is = x.graph()->constant(Matrix(inv_std));
  return x.graph()->make(std::move(out), {x, gain, bias}, [x, gain, bias, xh, is](Graph& g, const Matrix& go) {
    const Matrix& xhv = xh.value();
    if (gain.requires_grad()) g.add_grad_expr(gain, go.cwiseProduct(xhv).colwise().sum());
    if (bias.requires_grad()) g.add_grad_expr(bias, go.colwise().sum());
    if (x.requires_grad()) {
      const double d = static_cast<double>(xhv.cols());
      Matrix gxhat = go.array().rowwise() * gain.value().row(0).array();
      Eigen::VectorXd m1 = gxhat.rowwise().mean();
      Eigen::VectorXd m2 = gxhat.cwiseProduct(xhv).rowwise().sum() / d;
      Matrix gx(xhv.rows(), xhv.cols());
      for (Eigen::Index r = 0; r < xhv.rows(); ++r) {
        gx.row(r) = (gxhat.row(r).array() - m1(r) - xhv.row(r).array() * m2(r)) * is.value()(r, 0);
      }
      g.add_grad(x, gx);
    }
  });
}

/// coeff * sum of x(r, c) over the given cells; builds NLL terms from log-probs.
inline Var gather_sum(const Var& x, std::vector<std::pair<int, int>> cells, double coeff) {
  const Matrix& xv = x.value();
  double s = 0.0;
  for (auto [r, c] : cells) {
    if (r < 0 || r >= xv.rows() || c < 0 || c >= xv.cols()) throw std::out_of_range("gather_sum: target out of range");
    s += xv(r, c);
  }
  Matrix out(1, 1);
  out(0, 0) = coeff * s;
  return x.graph()->make(std::move(out), {x}, [x, cells = std::move(cells), coeff](Graph& g, const Matrix& go) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    for (auto [r, c] : cells) gx(r, c) += coeff * go(0, 0);
    g.add_grad(x, gx);
  });
}

/// scores(i, j) + bias(0, clamp(j - i, -w, w) + w), with w = (bias.cols() - 1) / 2.
inline Var add_relative_bias(const Var& scores, const Var& bias) {
  if (scores.rows() != scores.cols()) throw ShapeError("add_relative_bias: square scores expected");
  if (bias.rows() != 1 || bias.cols() % 2 != 1) throw ShapeError("add_relative_bias: bias must be 1 x (2w+1)");
  const Eigen::Index T = scores.rows();
  const Eigen::Index w = (bias.cols() - 1) / 2;
  auto bucket = [w](Eigen::Index i, Eigen::Index j) { return std::clamp<Eigen::Index>(j - i, -w, w) + w; };
  Matrix out = scores.value();
  const Matrix& bv = bias.value();
  for (Eigen::Index i = 0; i < T; ++i)
    for (Eigen::Index j = 0; j < T; ++j) out(i, j) += bv(0, bucket(i, j));
  return scores.graph()->make(std::move(out), {scores, bias}, [scores, bias, T, bucket](Graph& g, const Matrix& go) {
    g.add_grad(scores, go);
    Matrix gb = Matrix::Zero(1, bias.cols());
    for (Eigen::Index i = 0; i < T; ++i)
      for (Eigen::Index j = 0; j < T; ++j) gb(0, bucket(i, j)) += go(i, j);
    g.add_grad(bias, gb);
  });
}

/// Mean over rows of -log_probs(r, target[r]).
inline Var nll_loss(const Var& log_probs, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != log_probs.rows()) throw ShapeError("nll_loss: one target per row expected");
  std::vector<std::pair<int, int>> cells;
  cells.reserve(targets.size());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0 || targets[r] >= log_probs.cols()) throw std::out_of_range("nll_loss: target out of range");
    cells.emplace_back(static_cast<int>(r), targets[r]);
  }
  return gather_sum(log_probs, std::move(cells), -1.0 / static_cast<double>(targets.size()));
}

inline Var nll_loss(const Var& log_probs, int target) { return nll_loss(log_probs, std::span<const int>(&target, 1)); }

/// sum_i weights[i] * terms[i] over scalar terms.
inline Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size() || terms.empty()) throw ShapeError("weighted_sum: size mismatch");
  Matrix out = Matrix::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    out(0, 0) += weights[i] * terms[i].scalar();
  }
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return terms[0].graph()->make(std::move(out), terms, [ts, ws](Graph& g, const Matrix& go) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i].requires_grad()) g.add_grad_expr(ts[i], go * ws[i]);
    }
  });
}

}  // namespace napg::nn
