#pragma once
// Reverse-mode tape over flat tensors. Each backward() pass propagates into
// fresh scratch slots and then adds them into the persistent per-node grads,
// so repeated passes accumulate (two passes double the gradient exactly) and
// zero_grad resets cleanly. Single-threaded, fixed reduction order.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bic/core.hpp"
#include "bic/tensor.hpp"

namespace bic {

template <class S>
class Tape {
 public:
  using Id = int;

  struct Node {
    Tensor<S> val;
    Tensor<S> grad;  // persistent accumulator
    bool requires_grad = false;
    // pulls scratch[self], pushes into parents' scratch slots
    std::function<void(std::vector<Tensor<S>>&, Id)> back;
  };

  Tape() = default;
  Tape(const Tape&) = delete;  // lambdas capture this
  Tape& operator=(const Tape&) = delete;

  std::vector<Node> nodes;

  const Tensor<S>& value(Id id) const { return nodes[id].val; }
  const Tensor<S>& grad(Id id) const { return nodes[id].grad; }

  Id leaf(Tensor<S> t, bool requires_grad = true) {
    return push(std::move(t), requires_grad, {});
  }

  Id constant(Tensor<S> t) { return leaf(std::move(t), false); }

  Id add(Id a, Id b) {
    check_same(a, b, "add");
    Tensor<S> out = nodes[a].val;
    out.v += nodes[b].val.v;
    return push(std::move(out), needs(a) || needs(b),
                [this, a, b](std::vector<Tensor<S>>& g, Id self) {
                  if (needs(a)) g[a].v += g[self].v;
                  if (needs(b)) g[b].v += g[self].v;
                });
  }

  Id sub(Id a, Id b) {
    check_same(a, b, "sub");
    Tensor<S> out = nodes[a].val;
    out.v -= nodes[b].val.v;
    return push(std::move(out), needs(a) || needs(b),
                [this, a, b](std::vector<Tensor<S>>& g, Id self) {
                  if (needs(a)) g[a].v += g[self].v;
                  if (needs(b)) g[b].v -= g[self].v;
                });
  }

  Id mul(Id a, Id b) {
    check_same(a, b, "mul");
    Tensor<S> out = nodes[a].val;
    out.v *= nodes[b].val.v;
    return push(std::move(out), needs(a) || needs(b),
                [this, a, b](std::vector<Tensor<S>>& g, Id self) {
                  if (needs(a)) g[a].v += g[self].v * nodes[b].val.v;
                  if (needs(b)) g[b].v += g[self].v * nodes[a].val.v;
                });
  }

  Id scale(Id a, S c) {
    Tensor<S> out = nodes[a].val;
    out.v *= c;
    return push(std::move(out), needs(a),
                [this, a, c](std::vector<Tensor<S>>& g, Id self) {
                  if (needs(a)) g[a].v += g[self].v * c;
                });
  }

  Id matmul(Id a, Id b) {
    auto [m, k] = shape2(a, "matmul lhs");
    auto [k2, n] = shape2(b, "matmul rhs");
    if (k != k2) throw ShapeMismatch("matmul: inner dimensions differ");
    Tensor<S> out({m, n});
    out.mat(m, n).noalias() = nodes[a].val.mat(m, k) * nodes[b].val.mat(k, n);
    return push(std::move(out), needs(a) || needs(b),
                [this, a, b, m, k, n](std::vector<Tensor<S>>& g, Id self) {
                  auto go = g[self].mat(m, n);
                  if (needs(a))
                    g[a].mat(m, k).noalias() += go * nodes[b].val.mat(k, n).transpose();
                  if (needs(b))
                    g[b].mat(k, n).noalias() += nodes[a].val.mat(m, k).transpose() * go;
                });
  }

  // x (m x n) plus a length-n bias on every row
  Id add_broadcast_row(Id x, Id bias) {
    auto [m, n] = shape2(x, "add_broadcast_row");
    if (nodes[bias].val.size() != n) throw ShapeMismatch("add_broadcast_row: bias length");
    Tensor<S> out = nodes[x].val;
    out.mat(m, n).rowwise() +=
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(nodes[bias].val.data(), n);
    return push(std::move(out), needs(x) || needs(bias),
                [this, x, bias, m, n](std::vector<Tensor<S>>& g, Id self) {
                  if (needs(x)) g[x].v += g[self].v;
                  if (needs(bias))
                    Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(g[bias].data(), n) +=
                        g[self].mat(m, n).colwise().sum();
                });
  }

  // general reindex; idx entry -1 reads zero. Covers im2col, slicing,
  // row repetition and diagonal extraction; backward is scatter-add.
  Id gather(Id x, std::shared_ptr<const std::vector<long long>> idx,
            std::vector<int> out_dims) {
    if (static_cast<long long>(idx->size()) != numel(out_dims))
      throw ShapeMismatch("gather: index count differs from output size");
    Tensor<S> out(out_dims);
    const auto& xv = nodes[x].val.v;
    for (long long i = 0; i < out.size(); ++i) {
      long long j = (*idx)[size_t(i)];
      out.v[i] = j >= 0 ? xv[j] : S(0);
    }
    return push(std::move(out), needs(x),
                [this, x, idx](std::vector<Tensor<S>>& g, Id self) {
                  if (!needs(x)) return;
                  auto& gx = g[x].v;
                  const auto& go = g[self].v;
                  for (long long i = 0; i < go.size(); ++i) {
                    long long j = (*idx)[size_t(i)];
                    if (j >= 0) gx[j] += go[i];
                  }
                });
  }

  Id leaky_relu(Id x, S slope = S(0.3)) {
    Tensor<S> out = nodes[x].val;
    out.v = out.v.max(out.v * slope);
    return push(std::move(out), needs(x),
                [this, x, slope](std::vector<Tensor<S>>& g, Id self) {
                  if (!needs(x)) return;
                  const auto& xv = nodes[x].val.v;
                  g[x].v += g[self].v * (xv >= S(0))
                                            .select(Arr<S>::Ones(xv.size()),
                                                    Arr<S>::Constant(xv.size(), slope));
                });
  }

  Id sigmoid(Id x) {
    Tensor<S> out = nodes[x].val;
    out.v = S(1) / (S(1) + (-out.v).exp());
    return push(std::move(out), needs(x),
                [this, x](std::vector<Tensor<S>>& g, Id self) {
                  if (!needs(x)) return;
                  const auto& y = nodes[self].val.v;
                  g[x].v += g[self].v * y * (S(1) - y);
                });
  }

  Id tanh_op(Id x) {
    Tensor<S> out = nodes[x].val;
    out.v = out.v.tanh();
    return push(std::move(out), needs(x),
                [this, x](std::vector<Tensor<S>>& g, Id self) {
                  if (!needs(x)) return;
                  const auto& y = nodes[self].val.v;
                  g[x].v += g[self].v * (S(1) - y * y);
                });
  }

  // rows scaled to unit length, x / (||x|| + 1e-12)
  Id l2_normalize_rows(Id x) {
    auto [m, n] = shape2(x, "l2_normalize_rows");
    Tensor<S> out({m, n});
    auto xm = nodes[x].val.mat(m, n);
    for (int i = 0; i < m; ++i)
      out.mat(m, n).row(i) = xm.row(i) / (xm.row(i).norm() + S(1e-12));
    return push(std::move(out), needs(x),
                [this, x, m, n](std::vector<Tensor<S>>& g, Id self) {
                  if (!needs(x)) return;
                  auto xv = nodes[x].val.mat(m, n);
                  auto go = g[self].mat(m, n);
                  auto gx = g[x].mat(m, n);
                  for (int i = 0; i < m; ++i) {
                    S s = xv.row(i).norm();
                    S d = s + S(1e-12);
                    gx.row(i) += go.row(i) / d;
                    if (s > S(0))
                      gx.row(i) -= xv.row(i) * (xv.row(i).dot(go.row(i)) / (s * d * d));
                  }
                });
  }

  // Xi[i][j] = 1 / (1 + ||a_i - b_j||)
  Id pairwise_similarity(Id a, Id b) {
    auto [Ba, L] = shape2(a, "pairwise_similarity lhs");
    auto [Bb, L2] = shape2(b, "pairwise_similarity rhs");
    if (Ba != Bb || L != L2) throw ShapeMismatch("pairwise_similarity: shapes differ");
    const int B = Ba;
    Tensor<S> out({B, B});
    {
      auto am = nodes[a].val.mat(B, L);
      auto bm = nodes[b].val.mat(B, L);
      auto om = out.mat(B, B);
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j)
          om(i, j) = S(1) / (S(1) + (am.row(i) - bm.row(j)).norm());
    }
    return push(std::move(out), needs(a) || needs(b),
                [this, a, b, B, L](std::vector<Tensor<S>>& g, Id self) {
                  auto am = nodes[a].val.mat(B, L);
                  auto bm = nodes[b].val.mat(B, L);
                  auto xi = nodes[self].val.mat(B, B);
                  auto go = g[self].mat(B, B);
                  for (int i = 0; i < B; ++i)
                    for (int j = 0; j < B; ++j) {
                      S gij = go(i, j);
                      if (gij == S(0)) continue;
                      Eigen::Matrix<S, 1, Eigen::Dynamic> diff = am.row(i) - bm.row(j);
                      S dist = diff.norm();
                      if (dist <= S(0)) continue;  // direction undefined at zero distance
                      S coef = -gij * xi(i, j) * xi(i, j) / dist;
                      if (needs(a)) g[a].mat(B, L).row(i) += coef * diff;
                      if (needs(b)) g[b].mat(B, L).row(j) -= coef * diff;
                    }
                });
  }

  // scalar cross entropy with logits: logsumexp(x) - x[hot]
  Id cross_entropy_logits(Id x, int hot) {
    const auto& xv = nodes[x].val.v;
    if (hot < 0 || hot >= xv.size()) throw ShapeMismatch("cross_entropy_logits: hot index");
    S m = xv.maxCoeff();
    S lse = std::log((xv - m).exp().sum()) + m;
    Tensor<S> out({1});
    out.v[0] = lse - xv[hot];
    return push(std::move(out), needs(x),
                [this, x, hot](std::vector<Tensor<S>>& g, Id self) {
                  if (!needs(x)) return;
                  const auto& xv2 = nodes[x].val.v;
                  S m2 = xv2.maxCoeff();
                  Arr<S> p = (xv2 - m2).exp();
                  p /= p.sum();
                  p[hot] -= S(1);
                  g[x].v += g[self].v[0] * p;
                });
  }

  Id sum_all(Id x) {
    Tensor<S> out({1});
    out.v[0] = nodes[x].val.v.sum();
    return push(std::move(out), needs(x),
                [this, x](std::vector<Tensor<S>>& g, Id self) {
                  if (needs(x)) g[x].v += g[self].v[0];
                });
  }

  // per-group left product with a constant: out_g = C * x_g
  Id const_matmul_left(const Mat<S>& C, Id x, int groups) {
    auto [rows, n] = shape2(x, "const_matmul_left");
    const int r = int(C.cols()), m = int(C.rows());
    if (rows != groups * r) throw ShapeMismatch("const_matmul_left: group rows");
    Tensor<S> out({groups * m, n});
    for (int g0 = 0; g0 < groups; ++g0)
      out.mat(groups * m, n).middleRows(g0 * m, m).noalias() =
          C * nodes[x].val.mat(rows, n).middleRows(g0 * r, r);
    auto Ct = std::make_shared<const Mat<S>>(C.transpose());
    return push(std::move(out), needs(x),
                [this, x, Ct, groups, r, m, n](std::vector<Tensor<S>>& g, Id self) {
                  if (!needs(x)) return;
                  for (int g0 = 0; g0 < groups; ++g0)
                    g[x].mat(groups * r, n).middleRows(g0 * r, r).noalias() +=
                        (*Ct) * g[self].mat(groups * m, n).middleRows(g0 * m, m);
                });
  }

  // reverse pass from a scalar node; adds into persistent grads
  void backward(Id loss) {
    if (nodes[loss].val.size() != 1) throw ShapeMismatch("backward: loss is not scalar");
    std::vector<Tensor<S>> scratch(nodes.size());
    for (size_t i = 0; i < nodes.size(); ++i) scratch[i] = Tensor<S>(nodes[i].val.dims);
    scratch[loss].v[0] = S(1);
    for (Id i = loss; i >= 0; --i)
      if (nodes[i].back && nodes[i].requires_grad) nodes[i].back(scratch, i);
    for (size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].requires_grad) nodes[i].grad.v += scratch[i].v;
  }

  void zero_grad() {
    for (auto& n : nodes) n.grad.v.setZero();
  }

 private:
  bool needs(Id id) const { return nodes[id].requires_grad; }

  void check_same(Id a, Id b, const char* what) {
    if (!nodes[a].val.same_shape(nodes[b].val))
      throw ShapeMismatch(std::string(what) + ": shapes differ");
  }

  std::pair<int, int> shape2(Id x, const char* what) {
    const auto& d = nodes[x].val.dims;
    if (d.size() != 2) throw ShapeMismatch(std::string(what) + ": rank-2 tensor required");
    return {d[0], d[1]};
  }

  Id push(Tensor<S> val, bool requires_grad,
          std::function<void(std::vector<Tensor<S>>&, Id)> bw) {
    Node n;
    n.val = std::move(val);
    n.grad = Tensor<S>(n.val.dims);
    n.requires_grad = requires_grad;
    n.back = std::move(bw);
    nodes.push_back(std::move(n));
    return Id(nodes.size()) - 1;
  }
};

// Named parameter set shared across training steps. Parameters live here;
// each step re-registers them as tape leaves and pulls grads back out.
template <class S>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor<S>> values;

  int add(std::string name, Tensor<S> value) {
    names.push_back(std::move(name));
    values.push_back(std::move(value));
    return int(values.size()) - 1;
  }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return int(i);
    throw ShapeMismatch("unknown parameter: " + name);
  }

  long long total_size() const {
    long long n = 0;
    for (const auto& t : values) n += t.size();
    return n;
  }
};

// Central-difference check of an analytic gradient. build() receives a tape
// plus leaf ids for the given inputs and returns the scalar loss id.
struct GradCheckReport {
  double max_rel_error = 0.0;
  long long worst_input = -1;
  long long worst_element = -1;
};

template <class Build>
GradCheckReport grad_check(std::vector<Tensor<double>> inputs, Build build,
                           double tolerance = 1e-4, double eps = 1e-5) {
  auto loss_at = [&](const std::vector<Tensor<double>>& in) {
    Tape<double> tape;
    std::vector<int> ids;
    ids.reserve(in.size());
    for (const auto& t : in) ids.push_back(tape.leaf(t, true));
    int loss = build(tape, ids);
    return tape.value(loss).v[0];
  };

  std::vector<Tensor<double>> grads;
  {
    Tape<double> tape;
    std::vector<int> ids;
    for (const auto& t : inputs) ids.push_back(tape.leaf(t, true));
    int loss = build(tape, ids);
    tape.backward(loss);
    for (int id : ids) grads.push_back(tape.grad(id));
  }

  GradCheckReport report;
  for (size_t t = 0; t < inputs.size(); ++t) {
    for (long long i = 0; i < inputs[t].size(); ++i) {
      double saved = inputs[t].v[i];
      inputs[t].v[i] = saved + eps;
      double up = loss_at(inputs);
      inputs[t].v[i] = saved - eps;
      double dn = loss_at(inputs);
      inputs[t].v[i] = saved;
      double fd = (up - dn) / (2.0 * eps);
      double an = grads[t].v[i];
      double rel = std::abs(an - fd) / std::max(std::max(std::abs(an), std::abs(fd)), 1e-6);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = (long long)t;
        report.worst_element = i;
      }
    }
  }
  if (report.max_rel_error > tolerance)
    throw GradCheckFailure("gradient check failed: max rel error " +
                           std::to_string(report.max_rel_error));
  return report;
}

}  // namespace bic
