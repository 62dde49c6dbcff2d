#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "carnas/errors.hpp"
#include "carnas/param_store.hpp"
#include "carnas/tensor.hpp"

namespace carnas {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Linear record of primitive ops for one forward pass.
///
/// A tape supports exactly one backward pass; call reset() to reuse it.
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), "constant", false, {}); }

  /// Free leaf that receives a gradient readable through grad().
  Var variable(Tensor value) { return push(std::move(value), "variable", true, {}); }

  /// Leaf bound to a parameter; backward() writes its gradient into `store`.
  Var param(ParamStore& store, const std::string& name) {
    if (store_ != nullptr && store_ != &store) throw StateError("tape already bound to another ParamStore");
    store_ = &store;
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(store.value(name), "param", true, {});
    nodes_[v.id()].param_name = name;
    param_nodes_.emplace(name, v.id());
    return v;
  }

  /// Appends an op result. `fn` receives the output gradient and must
  /// accumulate into the inputs through grad_buffer().
  Var record(Tensor value, std::string_view op, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.valid() && &in.tape() != this) throw StateError(std::string(op) + ": operands live on different tapes");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), op, needs, needs ? std::move(fn) : BackwardFn{});
  }

  Var record(Tensor value, std::string_view op, std::span<const Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (&in.tape() != this) throw StateError(std::string(op) + ": operands live on different tapes");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), op, needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient accumulator of a node, zero-initialised on first touch.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
  }

  /// Adds `g` into a node's gradient; copies on first touch.
  void accumulate_grad(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      n.grad = Tensor(n.value.shape(), std::vector<double>(g.data().begin(), g.data().end()));
    } else {
      n.grad += g;
    }
  }

  /// Gradient of a node after backward(); zeros if the node did not participate.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
  }

  void backward(Var loss) {
    if (consumed_) throw StateError("tape already consumed; reset() before recording again");
    if (&loss.tape() != this) throw StateError("loss recorded on a different tape");
    if (loss.value().size() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    consumed_ = true;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
    if (store_ == nullptr) return;
    for (auto& [name, p] : *store_) {
      p.grad.fill(0.0);
      p.has_grad = true;
    }
    for (const auto& [name, id] : param_nodes_) {
      if (!nodes_[id].grad.empty()) store_->at(name).grad += nodes_[id].grad;
    }
  }

  void reset() {
    nodes_.clear();
    param_nodes_.clear();
    store_ = nullptr;
    consumed_ = false;
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::string param_name;
  };

  Var push(Tensor value, std::string_view op, bool requires_grad, BackwardFn fn) {
    if (consumed_) throw StateError("tape already consumed; reset() before recording again");
    if (!value.all_finite()) throw NumericError("non-finite value produced by " + std::string(op));
    if (nodes_.capacity() == nodes_.size()) nodes_.reserve(std::max<std::size_t>(256, 2 * nodes_.size()));
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(fn), {}});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
  ParamStore* store_ = nullptr;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

/// Convenience wrapper: backward() on the loss's own tape.
inline void backward(Var loss) { loss.tape().backward(loss); }

namespace detail {

inline void require_same_size(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline Shape matrix_shape(std::size_t r, std::size_t c) { return Shape{r, c}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  Tensor C(A.rows(), B.cols());
  C.mat().noalias() = A.mat() * B.mat();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(C), "matmul", {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) t.grad_buffer(ia).mat().noalias() += g.mat() * t.value(ib).mat().transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).mat().noalias() += t.value(ia).mat().transpose() * g.mat();
  });
}

inline Var transpose(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.cols(), A.rows());
  out.mat() = A.mat().transpose();
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), "transpose", {a}, [ia](Tape& t, const Tensor& g) {
    t.grad_buffer(ia).mat() += g.mat().transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::require_same_size("add", a.value(), b.value());
  Tensor out = a.value();
  out += b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "add", {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) t.accumulate_grad(ia, g);
    if (t.requires_grad(ib)) t.accumulate_grad(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_size("sub", a.value(), b.value());
  Tensor out = a.value();
  out.mat() -= b.value().mat();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "sub", {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) t.accumulate_grad(ia, g);
    if (t.requires_grad(ib)) t.grad_buffer(ib).mat() -= g.mat();
  });
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  detail::require_same_size("mul", a.value(), b.value());
  Tensor out = a.value();
  out.mat().array() *= b.value().mat().array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "mul", {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) t.grad_buffer(ia).mat().array() += g.mat().array() * t.value(ib).mat().array();
    if (t.requires_grad(ib)) t.grad_buffer(ib).mat().array() += g.mat().array() * t.value(ia).mat().array();
  });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  out.mat() *= c;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), "scale", {a}, [ia, c](Tape& t, const Tensor& g) {
    t.grad_buffer(ia).mat() += c * g.mat();
  });
}

/// a[m x n] + b broadcast over rows, b of n entries.
inline Var add_row(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (B.size() != A.cols()) {
    throw DimensionError("add_row: bias " + shape_str(B.shape()) + " does not fit " + shape_str(A.shape()));
  }
  Tensor out = A;
  auto m = out.mat();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += B[static_cast<std::size_t>(c)];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), "add_row", {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) t.accumulate_grad(ia, g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      const std::size_t n = gb.size();
      for (std::size_t r = 0; r < g.size() / n; ++r) {
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
      }
    }
  });
}

/// Scales row i of a[m x n] by s[i], s of m entries.
inline Var mul_rows(Var a, Var s) {
  const Tensor& A = a.value();
  const Tensor& S = s.value();
  if (S.size() != A.rows()) {
    throw DimensionError("mul_rows: scale " + shape_str(S.shape()) + " does not fit " + shape_str(A.shape()));
  }
  Tensor out = A;
  const std::size_t n = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] *= S[r];
  }
  const std::size_t ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), "mul_rows", {a, s}, [ia, is, n](Tape& t, const Tensor& g) {
    const Tensor& S = t.value(is);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < S.size(); ++r) {
        for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r * n + c] * S[r];
      }
    }
    if (t.requires_grad(is)) {
      const Tensor& A = t.value(ia);
      Tensor& gs = t.grad_buffer(is);
      for (std::size_t r = 0; r < S.size(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += g[r * n + c] * A[r * n + c];
        gs[r] += acc;
      }
    }
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), "relu", {a}, [ia](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_buffer(ia);
    const double* xp = x.data().data();
    const double* gp = g.data().data();
    double* out = ga.data().data();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += xp[i] > 0.0 ? gp[i] : 0.0;
  });
}

inline Var leaky_relu(Var a, double slope) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : slope * v;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), "leaky_relu", {a}, [ia, slope](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_buffer(ia);
    const double* xp = x.data().data();
    const double* gp = g.data().data();
    double* out = ga.data().data();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += xp[i] > 0.0 ? gp[i] : slope * gp[i];
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = stable_sigmoid(v);
  const std::size_t ia = a.id(), iy = a.tape().size();
  return a.tape().record(std::move(out), "sigmoid", {a}, [ia, iy](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(iy);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

// ---------------------------------------------------------------------------
// Normalisations

/// Softmax along each row, stabilised by subtracting the row maximum.
inline Var softmax_rows(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.rows(), A.cols());
  const std::size_t n = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double mx = A[r * n];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, A[r * n + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += (out[r * n + c] = std::exp(A[r * n + c] - mx));
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  const std::size_t ia = a.id(), iy = a.tape().size();
  return a.tape().record(std::move(out), "softmax_rows", {a}, [ia, iy, n](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(iy);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

/// Softmax of a column of scores within groups: entries sharing
/// `segment[i]` are normalised together. Empty segments are allowed.
inline Var segment_softmax(Var a, std::span<const std::size_t> segment, std::size_t num_segments) {
  const Tensor& A = a.value();
  if (A.size() != segment.size()) {
    throw DimensionError("segment_softmax: " + std::to_string(A.size()) + " scores vs " +
                         std::to_string(segment.size()) + " segment ids");
  }
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < segment.size(); ++i) mx[segment[i]] = std::max(mx[segment[i]], A[i]);
  std::vector<double> z(num_segments, 0.0);
  Tensor out = A;
  for (std::size_t i = 0; i < segment.size(); ++i) z[segment[i]] += (out[i] = std::exp(A[i] - mx[segment[i]]));
  for (std::size_t i = 0; i < segment.size(); ++i) out[i] /= z[segment[i]];
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  const std::size_t ia = a.id(), iy = a.tape().size();
  return a.tape().record(std::move(out), "segment_softmax", {a},
                         [ia, iy, seg = std::move(seg), num_segments](Tape& t, const Tensor& g) {
                           const Tensor& y = t.value(iy);
                           std::vector<double> dot(num_segments, 0.0);
                           for (std::size_t i = 0; i < seg.size(); ++i) dot[seg[i]] += g[i] * y[i];
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < seg.size(); ++i) ga[i] += y[i] * (g[i] - dot[seg[i]]);
                         });
}

/// Divides each row by sqrt(|row|^2 + eps).
inline Var row_normalize(Var a, double eps = 1e-12) {
  const Tensor& A = a.value();
  const std::size_t n = A.cols();
  Tensor out = A;
  std::vector<double> norms(A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < n; ++c) ss += A[r * n + c] * A[r * n + c];
    norms[r] = std::sqrt(ss + eps);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= norms[r];
  }
  const std::size_t ia = a.id(), iy = a.tape().size();
  return a.tape().record(std::move(out), "row_normalize", {a},
                         [ia, iy, n, norms = std::move(norms)](Tape& t, const Tensor& g) {
                           const Tensor& y = t.value(iy);
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t r = 0; r < norms.size(); ++r) {
                             double dot = 0.0;
                             for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
                             for (std::size_t c = 0; c < n; ++c) {
                               ga[r * n + c] += (g[r * n + c] - y[r * n + c] * dot) / norms[r];
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Indexing

/// out[r] = a[index[r]].
inline Var gather_rows(Var a, std::span<const std::size_t> index) {
  const Tensor& A = a.value();
  const std::size_t n = A.cols();
  Tensor out(index.size(), n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= A.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of " + std::to_string(A.rows()));
    }
    std::copy_n(A.data().begin() + static_cast<std::ptrdiff_t>(index[r] * n), n,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), "gather_rows", {a}, [ia, n, idx = std::move(idx)](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < n; ++c) ga[idx[r] * n + c] += g[r * n + c];
    }
  });
}

/// out[index[r]] += a[r], out has `num_rows` rows.
inline Var scatter_add_rows(Var a, std::span<const std::size_t> index, std::size_t num_rows) {
  const Tensor& A = a.value();
  if (A.rows() != index.size()) {
    throw DimensionError("scatter_add_rows: " + std::to_string(A.rows()) + " rows vs " +
                         std::to_string(index.size()) + " indices");
  }
  const std::size_t n = A.cols();
  Tensor out(num_rows, n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= num_rows) {
      throw DimensionError("scatter_add_rows: index " + std::to_string(index[r]) + " out of " + std::to_string(num_rows));
    }
    for (std::size_t c = 0; c < n; ++c) out[index[r] * n + c] += A[r * n + c];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), "scatter_add_rows", {a},
                         [ia, n, idx = std::move(idx)](Tape& t, const Tensor& g) {
                           Tensor& ga = t.grad_buffer(ia);
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                             for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[idx[r] * n + c];
                           }
                         });
}

/// Weighted message passing: out[dst[e]] += coeff[e] * h[src[e]] over
/// `num_rows` output rows. `coeff` is one value per edge, or absent for 1.
inline Var propagate(Var h, std::span<const std::size_t> src, std::span<const std::size_t> dst,
                     std::optional<Var> coeff, std::size_t num_rows) {
  const Tensor& H = h.value();
  if (src.size() != dst.size()) throw DimensionError("propagate: src and dst lengths differ");
  if (coeff && coeff->value().size() != src.size()) {
    throw DimensionError("propagate: " + std::to_string(coeff->value().size()) + " coefficients for " +
                         std::to_string(src.size()) + " edges");
  }
  const std::size_t n = H.cols();
  Tensor out(num_rows, n);
  const Tensor* C = coeff ? &coeff->value() : nullptr;
  for (std::size_t e = 0; e < src.size(); ++e) {
    if (src[e] >= H.rows() || dst[e] >= num_rows) throw DimensionError("propagate: edge endpoint out of range");
    const double c = C ? (*C)[e] : 1.0;
    const double* in = H.data().data() + src[e] * n;
    double* o = out.data().data() + dst[e] * n;
    for (std::size_t k = 0; k < n; ++k) o[k] += c * in[k];
  }
  std::vector<std::size_t> s(src.begin(), src.end()), d(dst.begin(), dst.end());
  const std::size_t ih = h.id();
  const bool weighted = coeff.has_value();
  const std::size_t ic = weighted ? coeff->id() : 0;
  auto fn = [ih, ic, weighted, n, s = std::move(s), d = std::move(d)](Tape& t, const Tensor& g) {
    const Tensor& H = t.value(ih);
    const Tensor* C = weighted ? &t.value(ic) : nullptr;
    if (t.requires_grad(ih)) {
      Tensor& gh = t.grad_buffer(ih);
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double c = C ? (*C)[e] : 1.0;
        const double* gi = g.data().data() + d[e] * n;
        double* o = gh.data().data() + s[e] * n;
        for (std::size_t k = 0; k < n; ++k) o[k] += c * gi[k];
      }
    }
    if (weighted && t.requires_grad(ic)) {
      Tensor& gc = t.grad_buffer(ic);
      for (std::size_t e = 0; e < s.size(); ++e) {
        const double* gi = g.data().data() + d[e] * n;
        const double* hi = H.data().data() + s[e] * n;
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += gi[k] * hi[k];
        gc[e] += acc;
      }
    }
  };
  if (weighted) return h.tape().record(std::move(out), "propagate", {h, *coeff}, std::move(fn));
  return h.tape().record(std::move(out), "propagate", {h}, std::move(fn));
}

/// Per-row mixture: out[r] = sum_u weights[group[r], cols[u]] * parts[u][r].
/// Every part has the same shape; `weights` has one row per group.
inline Var mix_rows(std::span<const Var> parts, Var weights, std::span<const std::size_t> cols,
                    std::span<const std::size_t> group) {
  if (parts.empty()) throw DimensionError("mix_rows: no operands");
  const Tensor& W = weights.value();
  const std::size_t m = parts.front().rows(), n = parts.front().cols();
  if (group.size() != m) throw DimensionError("mix_rows: group ids do not match row count");
  if (cols.size() != parts.size()) throw DimensionError("mix_rows: one weight column per operand required");
  for (std::size_t c : cols) {
    if (c >= W.cols()) throw DimensionError("mix_rows: weight column out of range");
  }
  for (std::size_t r : group) {
    if (r >= W.rows()) throw DimensionError("mix_rows: group id out of range");
  }
  Tensor out(m, n);
  for (std::size_t u = 0; u < parts.size(); ++u) {
    const Tensor& P = parts[u].value();
    if (P.rows() != m || P.cols() != n) throw DimensionError("mix_rows: operand shapes differ");
    for (std::size_t r = 0; r < m; ++r) {
      const double w = W(group[r], cols[u]);
      for (std::size_t k = 0; k < n; ++k) out[r * n + k] += w * P[r * n + k];
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  inputs.push_back(weights);
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  std::vector<std::size_t> grp(group.begin(), group.end()), col(cols.begin(), cols.end());
  const std::size_t iw = weights.id();
  return weights.tape().record(
      std::move(out), "mix_rows", std::span<const Var>(inputs),
      [ids, iw, m, n, grp = std::move(grp), col = std::move(col)](Tape& t, const Tensor& g) {
        const Tensor& W = t.value(iw);
        const bool need_w = t.requires_grad(iw);
        for (std::size_t u = 0; u < ids.size(); ++u) {
          if (t.requires_grad(ids[u])) {
            Tensor& gp = t.grad_buffer(ids[u]);
            for (std::size_t r = 0; r < m; ++r) {
              const double w = W(grp[r], col[u]);
              for (std::size_t k = 0; k < n; ++k) gp[r * n + k] += w * g[r * n + k];
            }
          }
          if (need_w) {
            const Tensor& P = t.value(ids[u]);
            Tensor& gw = t.grad_buffer(iw);
            for (std::size_t r = 0; r < m; ++r) {
              double acc = 0.0;
              for (std::size_t k = 0; k < n; ++k) acc += g[r * n + k] * P[r * n + k];
              gw(grp[r], col[u]) += acc;
            }
          }
        }
      });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts differ, " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out(m, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    out.mat().middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(p.cols())) = p.value().mat();
    off += p.cols();
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts.front().tape().record(
      std::move(out), "concat_cols", parts, [ids, widths](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            t.grad_buffer(ids[k]).mat() +=
                g.mat().middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[k]));
          }
          off += widths[k];
        }
      });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// Columns [begin, end) of a.
inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  if (begin > end || end > A.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                         shape_str(A.shape()));
  }
  Tensor out(A.rows(), end - begin);
  out.mat() = A.mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), "slice_cols", {a}, [ia, begin, end](Tape& t, const Tensor& g) {
    t.grad_buffer(ia).mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) +=
        g.mat();
  });
}

inline Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), "reshape", {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), "sum", {a}, [ia](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (double& v : ga.data()) v += g[0];
  });
}

inline Var mean(Var a) {
  if (a.value().empty()) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Mean softmax cross-entropy of logits[B x C] against integer labels.
inline Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& Z = logits.value();
  const std::size_t B = Z.rows(), C = Z.cols();
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: " + std::to_string(B) + " rows vs " + std::to_string(labels.size()) + " labels");
  }
  if (B == 0) throw DimensionError("cross_entropy: empty batch");
  Tensor probs(B, C);
  double loss = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= C) {
      throw DataError("label " + std::to_string(labels[r]) + " outside " + std::to_string(C) + " classes");
    }
    double mx = Z[r * C];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, Z[r * C + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (probs[r * C + c] = std::exp(Z[r * C + c] - mx));
    for (std::size_t c = 0; c < C; ++c) probs[r * C + c] /= z;
    loss += (std::log(z) + mx) - Z[r * C + static_cast<std::size_t>(labels[r])];
  }
  loss /= static_cast<double>(B);
  std::vector<int> y(labels.begin(), labels.end());
  const std::size_t iz = logits.id();
  return logits.tape().record(Tensor::scalar(loss), "cross_entropy", {logits},
                              [iz, B, C, y = std::move(y), probs = std::move(probs)](Tape& t, const Tensor& g) {
                                Tensor& gz = t.grad_buffer(iz);
                                const double s = g[0] / static_cast<double>(B);
                                for (std::size_t r = 0; r < B; ++r) {
                                  for (std::size_t c = 0; c < C; ++c) {
                                    const double target = static_cast<std::size_t>(y[r]) == c ? 1.0 : 0.0;
                                    gz[r * C + c] += s * (probs[r * C + c] - target);
                                  }
                                }
                              });
}

/// Mean logistic loss of a single logit column against 0/1 labels.
inline Var binary_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& Z = logits.value();
  if (Z.cols() != 1 || Z.rows() != labels.size()) {
    throw DimensionError("binary_cross_entropy: logits " + shape_str(Z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = labels.size();
  if (B == 0) throw DimensionError("binary_cross_entropy: empty batch");
  double loss = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    if (labels[r] != 0 && labels[r] != 1) throw DataError("binary label must be 0 or 1, got " + std::to_string(labels[r]));
    const double z = Z[r];
    loss += std::max(z, 0.0) - z * labels[r] + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<double>(B);
  std::vector<int> y(labels.begin(), labels.end());
  const std::size_t iz = logits.id();
  return logits.tape().record(Tensor::scalar(loss), "binary_cross_entropy", {logits},
                              [iz, B, y = std::move(y)](Tape& t, const Tensor& g) {
                                const Tensor& Z = t.value(iz);
                                Tensor& gz = t.grad_buffer(iz);
                                for (std::size_t r = 0; r < B; ++r) {
                                  gz[r] += g[0] / static_cast<double>(B) * (stable_sigmoid(Z[r]) - y[r]);
                                }
                              });
}

// ---------------------------------------------------------------------------
// Operator sugar, used where a formula reads better written out.

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }

}  // namespace carnas
