#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ptrorder/errors.hpp"
#include "ptrorder/tensor.hpp"

namespace ptrorder {

// Handle to a node of a Graph.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

enum class ElementOp { add, mul, tanh, sigmoid };

// Boolean mask over softmax candidates; true marks an excluded position.
using Mask = std::vector<bool>;

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// vector is already a topological order and backward walks it in reverse.
//
// Parameter nodes read Param::value in place. During backward their
// gradients collect in graph-local buffers and are added to Param::grad once
// at the end, so two backward passes without zeroing give exactly 2x.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) { return push(std::move(t), {}, nullptr); }

  // Bind a parameter. Repeated calls with the same Param return one node.
  Var param(Param& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
      return Var{it->second};
    }
    Node n;
    n.ref = &p.value;
    n.param = &p;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return Var{nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return val(check(v)); }
  double scalar(Var v) const { return value(v)[0]; }

  // Gradient of the last backward root with respect to v (zeros when v did
  // not influence the root).
  Tensor grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.empty()) return Tensor(val(v.id).shape());
    return n.grad;
  }

  // ---- primitives -------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
      throw DimensionError("matmul: cannot multiply " + shape_string(A.shape()) +
                           " by " + shape_string(B.shape()));
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double* c = &C.at(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.at(i, p);
        const double* brow = &B.at(p, 0);
        for (std::size_t j = 0; j < n; ++j) c[j] += aip * brow[j];
      }
    }
    return push(std::move(C), {a.id, b.id}, [a, b, m, k, n](Graph& g, std::size_t self) {
      const Tensor& dC = g.nodes_[self].grad;
      const Tensor& A = g.val(a.id);
      const Tensor& B = g.val(b.id);
      if (Tensor* dA = g.gacc(a.id)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            dA->at(i, p) += ptrorder::dot(&dC.at(i, 0), &B.at(p, 0), n);
          }
        }
      }
      if (Tensor* dB = g.gacc(b.id)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A.at(i, p);
            double* drow = &dB->at(p, 0);
            const double* crow = &dC.at(i, 0);
            for (std::size_t j = 0; j < n; ++j) drow[j] += aip * crow[j];
          }
        }
      }
    });
  }

  // Row vector times a block of rows of w: y = x * w[row_offset : row_offset + |x|].
  // With row_offset 0 and |x| == rows(w) this is the plain product w^T x.
  Var linear(Var x, Var w, std::size_t row_offset = 0) {
    return affine_impl(x, w, Var{}, row_offset);
  }

  // y = w^T x + b.
  Var affine(Var x, Var w, Var b) { return affine_impl(x, w, b, 0); }

  Var add(Var a, Var b) { return binary(a, b, ElementOp::add); }
  Var mul(Var a, Var b) { return binary(a, b, ElementOp::mul); }

  Var scale(Var x, double c) {
    Tensor y = value(x);
    for (double& v : y.data()) v *= c;
    return push(std::move(y), {x.id}, [x, c](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      if (Tensor* dx = g.gacc(x.id)) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += c * dy[i];
      }
    });
  }

  Var tanh(Var x) {
    Tensor y = value(x);
    for (double& v : y.data()) v = std::tanh(v);
    return push(std::move(y), {x.id}, [x](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& y = g.nodes_[self].value;
      if (Tensor* dx = g.gacc(x.id)) {
        for (std::size_t i = 0; i < dy.size(); ++i) {
          (*dx)[i] += dy[i] * (1.0 - y[i] * y[i]);
        }
      }
    });
  }

  Var sigmoid(Var x) {
    Tensor y = value(x);
    for (double& v : y.data()) v = logistic(v);
    return push(std::move(y), {x.id}, [x](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& y = g.nodes_[self].value;
      if (Tensor* dx = g.gacc(x.id)) {
        for (std::size_t i = 0; i < dy.size(); ++i) {
          (*dx)[i] += dy[i] * y[i] * (1.0 - y[i]);
        }
      }
    });
  }

  // Generic dispatcher; add and mul fold left over two or more arguments.
  Var elementwise(ElementOp op, std::span<const Var> args) {
    if (args.empty()) throw DimensionError("elementwise: no arguments");
    switch (op) {
      case ElementOp::tanh:
      case ElementOp::sigmoid:
        if (args.size() != 1) throw DimensionError("elementwise: unary op takes one argument");
        return op == ElementOp::tanh ? tanh(args[0]) : sigmoid(args[0]);
      case ElementOp::add:
      case ElementOp::mul: {
        if (args.size() < 2) throw DimensionError("elementwise: binary op takes >= 2 arguments");
        Var acc = args[0];
        for (std::size_t i = 1; i < args.size(); ++i) acc = binary(acc, args[i], op);
        return acc;
      }
    }
    throw Error("elementwise: unknown op");
  }

  // Concatenate along the first axis. Rank-1 parts give a longer vector;
  // rank-2 parts must share their column count.
  Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw EmptyInputError("concat: no parts");
    if (parts.size() == 1) return parts[0];
    const Tensor& first = value(parts[0]);
    const std::size_t rank = first.rank();
    std::size_t total = 0;
    for (Var p : parts) {
      const Tensor& t = value(p);
      if (t.rank() != rank || (rank == 2 && t.cols() != first.cols())) {
        throw DimensionError("concat: incompatible parts " + shape_string(first.shape()) +
                             " and " + shape_string(t.shape()));
      }
      total += t.rows();
    }
    Shape shape = first.shape();
    shape[0] = total;
    std::vector<double> out;
    out.reserve(shape_size(shape));
    std::vector<std::size_t> ids;
    for (Var p : parts) {
      const auto d = value(p).data();
      out.insert(out.end(), d.begin(), d.end());
      ids.push_back(p.id);
    }
    return push(Tensor(std::move(shape), std::move(out)), ids, [ids](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      std::size_t offset = 0;
      for (std::size_t id : ids) {
        const std::size_t len = g.val(id).size();
        if (Tensor* dx = g.gacc(id)) {
          for (std::size_t i = 0; i < len; ++i) (*dx)[i] += dy[offset + i];
        }
        offset += len;
      }
    });
  }

  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }

  // Contiguous sub-vector [begin, begin + len) of a rank-1 tensor.
  Var slice(Var x, std::size_t begin, std::size_t len) {
    const Tensor& X = value(x);
    if (X.rank() != 1 || len == 0 || begin + len > X.size()) {
      throw DimensionError("slice: [" + std::to_string(begin) + ", " +
                           std::to_string(begin + len) + ") out of " +
                           shape_string(X.shape()));
    }
    std::vector<double> out(X.data().begin() + begin, X.data().begin() + begin + len);
    return push(Tensor::vector(std::move(out)), {x.id}, [x, begin, len](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      if (Tensor* dx = g.gacc(x.id)) {
        for (std::size_t i = 0; i < len; ++i) (*dx)[begin + i] += dy[i];
      }
    });
  }

  // Stack equal-length vectors into a [T x d] matrix.
  Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw EmptyInputError("stack_rows: no rows");
    const std::size_t d = value(rows[0]).size();
    std::vector<double> out;
    out.reserve(rows.size() * d);
    std::vector<std::size_t> ids;
    for (Var r : rows) {
      const Tensor& t = value(r);
      if (t.rank() != 1 || t.size() != d) {
        throw DimensionError("stack_rows: row " + shape_string(t.shape()) +
                             " does not match width " + std::to_string(d));
      }
      out.insert(out.end(), t.data().begin(), t.data().end());
      ids.push_back(r.id);
    }
    return push(Tensor({rows.size(), d}, std::move(out)), ids, [ids, d](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (Tensor* dx = g.gacc(ids[r])) {
          for (std::size_t i = 0; i < d; ++i) (*dx)[i] += dy[r * d + i];
        }
      }
    });
  }

  // Row `index` of a [V x d] table. When the table is a parameter the
  // backward pass only touches that row.
  Var lookup(Var table, std::size_t index) {
    const Tensor& T = value(table);
    if (T.rank() != 2) throw DimensionError("lookup: table must be a matrix, got " + shape_string(T.shape()));
    if (index >= T.rows()) {
      throw IndexError("lookup: index " + std::to_string(index) + " outside vocabulary of size " +
                       std::to_string(T.rows()));
    }
    const auto r = T.row(index);
    return push(Tensor::vector(std::vector<double>(r.begin(), r.end())), {table.id},
                [table, index](Graph& g, std::size_t self) {
                  const Tensor& dy = g.nodes_[self].grad;
                  Node& tn = g.nodes_[table.id];
                  if (tn.param != nullptr) {
                    auto& acc = g.sparse_rows_[{table.id, index}];
                    if (acc.empty()) acc.assign(dy.size(), 0.0);
                    for (std::size_t i = 0; i < dy.size(); ++i) acc[i] += dy[i];
                  } else if (Tensor* dt = g.gacc(table.id)) {
                    auto row = dt->row(index);
                    for (std::size_t i = 0; i < dy.size(); ++i) row[i] += dy[i];
                  }
                });
  }

  Var mean_rows(Var x) {
    const Tensor& X = value(x);
    if (X.rank() != 2) throw DimensionError("mean_rows: expected a matrix, got " + shape_string(X.shape()));
    const std::size_t T = X.rows(), d = X.cols();
    Tensor y({d});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < d; ++i) y[i] += X.at(t, i);
    }
    const double inv = 1.0 / static_cast<double>(T);
    for (double& v : y.data()) v *= inv;
    return push(std::move(y), {x.id}, [x, T, d, inv](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      if (Tensor* dx = g.gacc(x.id)) {
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t i = 0; i < d; ++i) dx->at(t, i) += dy[i] * inv;
        }
      }
    });
  }

  // Column-wise maximum over the T rows of [T x d]. Gradient goes to the
  // first row attaining the maximum.
  Var max_over_time(Var x) {
    const Tensor& X = value(x);
    if (X.rank() != 2) throw DimensionError("max_over_time: expected a matrix, got " + shape_string(X.shape()));
    const std::size_t T = X.rows(), d = X.cols();
    Tensor y({d});
    std::vector<std::size_t> arg(d, 0);
    for (std::size_t i = 0; i < d; ++i) y[i] = X.at(0, i);
    for (std::size_t t = 1; t < T; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        if (X.at(t, i) > y[i]) {
          y[i] = X.at(t, i);
          arg[i] = t;
        }
      }
    }
    return push(std::move(y), {x.id}, [x, arg = std::move(arg)](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      if (Tensor* dx = g.gacc(x.id)) {
        for (std::size_t i = 0; i < arg.size(); ++i) dx->at(arg[i], i) += dy[i];
      }
    });
  }

  Var sum(Var x) {
    double s = 0.0;
    for (double v : value(x).data()) s += v;
    return push(Tensor::scalar(s), {x.id}, [x](Graph& g, std::size_t self) {
      const double dy = g.nodes_[self].grad[0];
      if (Tensor* dx = g.gacc(x.id)) {
        for (double& v : dx->data()) v += dy;
      }
    });
  }

  Var dot(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape()) {
      throw DimensionError("dot: shape mismatch " + shape_string(A.shape()) + " vs " +
                           shape_string(B.shape()));
    }
    const double s = ptrorder::dot(A.data().data(), B.data().data(), A.size());
    return push(Tensor::scalar(s), {a.id, b.id}, [a, b](Graph& g, std::size_t self) {
      const double dy = g.nodes_[self].grad[0];
      const Tensor& A = g.val(a.id);
      const Tensor& B = g.val(b.id);
      if (Tensor* dA = g.gacc(a.id)) {
        for (std::size_t i = 0; i < A.size(); ++i) (*dA)[i] += dy * B[i];
      }
      if (Tensor* dB = g.gacc(b.id)) {
        for (std::size_t i = 0; i < B.size(); ++i) (*dB)[i] += dy * A[i];
      }
    });
  }

  Var pick(Var x, std::size_t index) {
    const Tensor& X = value(x);
    if (index >= X.size()) {
      throw IndexError("pick: index " + std::to_string(index) + " outside " + shape_string(X.shape()));
    }
    return push(Tensor::scalar(X[index]), {x.id}, [x, index](Graph& g, std::size_t self) {
      if (Tensor* dx = g.gacc(x.id)) (*dx)[index] += g.nodes_[self].grad[0];
    });
  }

  // Softmax over the unmasked entries; masked entries are exactly zero.
  Var masked_softmax(Var logits, const Mask& mask) {
    const Tensor& X = value(logits);
    const double mx = masked_max(X, mask, "masked_softmax");
    Tensor y(X.shape());
    double z = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (!mask[i]) {
        y[i] = std::exp(X[i] - mx);
        z += y[i];
      }
    }
    for (std::size_t i = 0; i < X.size(); ++i) y[i] = mask[i] ? 0.0 : y[i] / z;
    return push(std::move(y), {logits.id}, [logits](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& y = g.nodes_[self].value;
      if (Tensor* dx = g.gacc(logits.id)) {
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * dy[i];
        for (std::size_t i = 0; i < y.size(); ++i) (*dx)[i] += y[i] * (dy[i] - s);
      }
    });
  }

  // log softmax(logits)[index] over the unmasked entries, as a scalar. This
  // is the numerically stable form used by the training loss.
  Var log_prob_at(Var logits, const Mask& mask, std::size_t index) {
    const std::vector<double> lp = masked_log_softmax(value(logits), mask);
    if (index >= lp.size() || mask[index]) {
      throw IndexError("log_prob_at: index " + std::to_string(index) + " is masked or out of range");
    }
    std::vector<double> probs(lp.size(), 0.0);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (!mask[i]) probs[i] = std::exp(lp[i]);
    }
    return push(Tensor::scalar(lp[index]), {logits.id},
                [logits, index, probs = std::move(probs)](Graph& g, std::size_t self) {
                  const double dy = g.nodes_[self].grad[0];
                  if (Tensor* dx = g.gacc(logits.id)) {
                    for (std::size_t i = 0; i < probs.size(); ++i) (*dx)[i] -= dy * probs[i];
                    (*dx)[index] += dy;
                  }
                });
  }

  // Plain (untaped) log-softmax over unmasked entries; masked entries are
  // -inf. Decoders use this so their scores match log_prob_at bit for bit.
  static std::vector<double> masked_log_softmax(const Tensor& logits, const Mask& mask) {
    const double mx = masked_max(logits, mask, "masked_log_softmax");
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (!mask[i]) z += std::exp(logits[i] - mx);
    }
    const double log_z = std::log(z);
    std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (!mask[i]) out[i] = (logits[i] - mx) - log_z;
    }
    return out;
  }

  // ---- backward ---------------------------------------------------------

  // Propagate d(root)/d(node) * seed through the tape and add the result to
  // the Param::grad of every parameter reached.
  void backward(Var root, double seed = 1.0) {
    if (!record_) throw Error("backward: graph was built without recording");
    if (value(root).size() != 1) {
      throw DimensionError("backward: root must be a scalar, got " + shape_string(value(root).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    sparse_rows_.clear();
    if (Tensor* g0 = gacc(root.id)) (*g0)[0] = seed;
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
    for (Node& n : nodes_) {
      if (n.param != nullptr && !n.grad.empty()) n.param->grad += n.grad;
    }
    for (const auto& [key, acc] : sparse_rows_) {
      auto row = nodes_[key.first].param->grad.row(key.second);
      for (std::size_t i = 0; i < acc.size(); ++i) row[i] += acc[i];
    }
  }

  static double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

 private:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Param* param = nullptr;
    bool needs_grad = false;
    Tensor grad;
    Backward backward;
  };

  std::size_t check(Var v) const {
    if (v.id >= nodes_.size()) throw IndexError("graph: invalid variable handle");
    return v.id;
  }

  const Tensor& val(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }

  // Gradient accumulator for node id, allocated on first use; null when the
  // node does not depend on any parameter.
  Tensor* gacc(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(val(id).shape());
    return &n.grad;
  }

  Var push(Tensor value, std::span<const std::size_t> inputs, Backward backward) {
    if (!value.all_finite()) throw NumericError("non-finite value produced by graph primitive");
    Node n;
    n.value = std::move(value);
    for (std::size_t id : inputs) n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
    if (record_ && n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push(Tensor value, std::initializer_list<std::size_t> inputs, Backward backward) {
    return push(std::move(value), std::span<const std::size_t>(inputs.begin(), inputs.size()),
                std::move(backward));
  }

  Var binary(Var a, Var b, ElementOp op) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    const bool a_scalar = A.size() == 1 && B.size() != 1;
    const bool b_scalar = B.size() == 1 && A.size() != 1;
    if (!a_scalar && !b_scalar && A.shape() != B.shape()) {
      throw DimensionError(std::string(op == ElementOp::add ? "add" : "mul") +
                           ": shape mismatch " + shape_string(A.shape()) + " vs " +
                           shape_string(B.shape()));
    }
    Tensor y(a_scalar ? B.shape() : A.shape());
    const std::size_t n = y.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double x1 = A[a_scalar ? 0 : i];
      const double x2 = B[b_scalar ? 0 : i];
      y[i] = op == ElementOp::add ? x1 + x2 : x1 * x2;
    }
    return push(std::move(y), {a.id, b.id}, [a, b, op, a_scalar, b_scalar, n](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& A = g.val(a.id);
      const Tensor& B = g.val(b.id);
      if (Tensor* dA = g.gacc(a.id)) {
        for (std::size_t i = 0; i < n; ++i) {
          const double d = op == ElementOp::add ? dy[i] : dy[i] * B[b_scalar ? 0 : i];
          (*dA)[a_scalar ? 0 : i] += d;
        }
      }
      if (Tensor* dB = g.gacc(b.id)) {
        for (std::size_t i = 0; i < n; ++i) {
          const double d = op == ElementOp::add ? dy[i] : dy[i] * A[a_scalar ? 0 : i];
          (*dB)[b_scalar ? 0 : i] += d;
        }
      }
    });
  }

  Var affine_impl(Var x, Var w, Var b, std::size_t row_offset) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    const std::size_t in = X.size();
    if (X.rank() != 1 || W.rank() != 2 || row_offset + in > W.rows()) {
      throw DimensionError("linear: input " + shape_string(X.shape()) + " at row " +
                           std::to_string(row_offset) + " does not fit weights " +
                           shape_string(W.shape()));
    }
    const std::size_t out = W.cols();
    Tensor y({out});
    if (b.valid()) {
      const Tensor& B = value(b);
      if (B.rank() != 1 || B.size() != out) {
        throw DimensionError("affine: bias " + shape_string(B.shape()) + " does not match weights " +
                             shape_string(W.shape()));
      }
      for (std::size_t j = 0; j < out; ++j) y[j] = B[j];
    }
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = X[i];
      const double* wrow = &W.at(row_offset + i, 0);
      double* yd = y.data().data();
      for (std::size_t j = 0; j < out; ++j) yd[j] += xi * wrow[j];
    }
    std::vector<std::size_t> ids{x.id, w.id};
    if (b.valid()) ids.push_back(b.id);
    return push(std::move(y), ids, [x, w, b, row_offset, in, out](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& X = g.val(x.id);
      const Tensor& W = g.val(w.id);
      Tensor* dX = g.gacc(x.id);
      Tensor* dW = g.gacc(w.id);
      for (std::size_t i = 0; i < in; ++i) {
        const double* wrow = &W.at(row_offset + i, 0);
        if (dX) (*dX)[i] += ptrorder::dot(wrow, dy.data().data(), out);
        if (dW) {
          const double xi = X[i];
          double* drow = &dW->at(row_offset + i, 0);
          const double* dyd = dy.data().data();
          for (std::size_t j = 0; j < out; ++j) drow[j] += xi * dyd[j];
        }
      }
      if (b.valid()) {
        if (Tensor* dB = g.gacc(b.id)) *dB += dy;
      }
    });
  }

  static double masked_max(const Tensor& X, const Mask& mask, const char* what) {
    if (X.rank() != 1 || mask.size() != X.size()) {
      throw DimensionError(std::string(what) + ": mask of size " + std::to_string(mask.size()) +
                           " for logits " + shape_string(X.shape()));
    }
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (!mask[i]) {
        mx = any ? std::max(mx, X[i]) : X[i];
        any = true;
      }
    }
    if (!any) throw InvalidMaskError(std::string(what) + ": every position is masked");
    return mx;
  }

  bool record_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_nodes_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> sparse_rows_;
};

}  // namespace ptrorder
