#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bytelm/rng.hpp"

namespace bytelm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<MatX<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatX<S>>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename S>
struct Node {
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;  // empty until gradient first flows into this node
  bool requires_grad = false;
  uint64_t id = 0;
  std::string label;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Index size() const { return value.size(); }

  ArrayX<S>& grad_ref() {
    if (grad.size() != value.size()) grad = ArrayX<S>::Zero(value.size());
    return grad;
  }
};

inline uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

// Dense n-d tensor of 32- or 64-bit floats with a reverse-mode tape. Values
// are row-major and immutable once an op has produced them; parameters are
// leaves whose storage the optimizer updates between graph builds. A Tensor
// is a shared handle onto its node, so copies alias. Tensors are safe to
// share across threads for reading; a graph and its backward pass belong to
// one thread.
template <typename S>
class Tensor {
public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = make_node(std::move(shape));
    n->value.setZero();
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    auto n = make_node(std::move(shape));
    n->value.setConstant(v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_values(Shape shape, std::span<const S> values, bool requires_grad = false) {
    auto n = make_node(std::move(shape));
    if (static_cast<Index>(values.size()) != n->value.size())
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(n->shape));
    std::copy(values.begin(), values.end(), n->value.data());
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(S v) {
    auto n = make_node(Shape{});
    n->value[0] = v;
    return Tensor(std::move(n));
  }

  // trainable leaf
  static Tensor param(Shape shape, std::string name) {
    auto n = make_node(std::move(shape));
    n->value.setZero();
    n->requires_grad = true;
    n->label = std::move(name);
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index size() const { return node_->value.size(); }
  Index dim(Index i) const { return node_->shape[static_cast<size_t>(i)]; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& label() const { return node_->label; }

  const ArrayX<S>& values() const { return node_->value; }
  // parameter storage; mutating a non-leaf mid-graph invalidates the tape
  ArrayX<S>& values_mut() { return node_->value; }
  const ArrayX<S>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.resize(0); }

  S item() const {
    if (size() != 1)
      throw std::invalid_argument("item: tensor is not scalar, shape " + shape_str(shape()));
    return node_->value[0];
  }

  std::shared_ptr<detail::Node<S>> node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node<S>> n) : node_(std::move(n)) {}

private:
  static std::shared_ptr<detail::Node<S>> make_node(Shape shape) {
    auto n = std::make_shared<detail::Node<S>>();
    n->value.resize(shape_numel(shape));
    n->shape = std::move(shape);
    n->id = detail::next_node_id();
    return n;
  }

  std::shared_ptr<detail::Node<S>> node_;
};

namespace detail {

template <typename S>
std::shared_ptr<Node<S>> alloc_out(Shape shape) {
  auto n = std::make_shared<Node<S>>();
  n->value.resize(shape_numel(shape));
  n->shape = std::move(shape);
  n->id = next_node_id();
  return n;
}

template <typename S, typename Fn>
void attach(std::shared_ptr<Node<S>>& out, std::vector<Tensor<S>> inputs, Fn&& backward) {
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return;
  out->requires_grad = true;
  out->parents.reserve(inputs.size());
  for (auto& t : inputs) out->parents.push_back(t.node());
  out->backward = std::forward<Fn>(backward);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse pass from a scalar loss. Node creation order is a topological order
// (inputs exist before the ops that consume them), so the reachable set sorted
// by descending id visits each node exactly once, children before parents.
// Calling backward twice without clearing grads accumulates a second pass.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad) return;

  std::vector<detail::Node<S>*> order;
  std::unordered_set<const detail::Node<S>*> seen;
  std::vector<detail::Node<S>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->id > b->id; });

  // stash prior grads so this pass propagates only its own seed; repeated
  // calls then accumulate exact multiples
  std::vector<ArrayX<S>> stash(order.size());
  for (size_t i = 0; i < order.size(); ++i) stash[i] = std::move(order[i]->grad);

  root->grad_ref()[0] = S(1);
  for (auto* n : order) {
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  for (size_t i = 0; i < order.size(); ++i) {
    if (stash[i].size() == 0) continue;
    if (order[i]->grad.size() == 0)
      order[i]->grad = std::move(stash[i]);
    else
      order[i]->grad += stash[i];
  }
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

// matmul over the last two axes; leading (batch) axes must match exactly.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&] {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa.size() < 2 || sa.size() != sb.size()) fail();
  const size_t r = sa.size();
  for (size_t i = 0; i + 2 < r; ++i)
    if (sa[i] != sb[i]) fail();
  const Index m = sa[r - 2], k = sa[r - 1], k2 = sb[r - 2], n = sb[r - 1];
  if (k != k2) fail();
  Index batch = 1;
  for (size_t i = 0; i + 2 < r; ++i) batch *= sa[i];

  Shape so(sa.begin(), sa.end() - 2);
  so.push_back(m);
  so.push_back(n);
  auto out = detail::alloc_out<S>(std::move(so));
  for (Index s = 0; s < batch; ++s) {
    ConstMatMap<S> A(a.values().data() + s * m * k, m, k);
    ConstMatMap<S> B(b.values().data() + s * k * n, k, n);
    MatMap<S> C(out->value.data() + s * m * n, m, n);
    C.noalias() = A * B;
  }

  detail::attach(out, {a, b}, [m, k, n, batch](detail::Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (Index s = 0; s < batch; ++s) {
      ConstMatMap<S> dC(self.grad.data() + s * m * n, m, n);
      if (pa.requires_grad) {
        ConstMatMap<S> B(pb.value.data() + s * k * n, k, n);
        MatMap<S> dA(pa.grad_ref().data() + s * m * k, m, k);
        dA.noalias() += dC * B.transpose();
      }
      if (pb.requires_grad) {
        ConstMatMap<S> A(pa.value.data() + s * m * k, m, k);
        MatMap<S> dB(pb.grad_ref().data() + s * k * n, k, n);
        dB.noalias() += A.transpose() * dC;
      }
    }
  });
  return Tensor<S>(out);
}

// softmax along `axis`; max-subtracted, -inf inputs map to exactly 0.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, Index axis) {
  const Shape& s = x.shape();
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank())
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  Index outer = 1, inner = 1;
  const Index len = s[static_cast<size_t>(axis)];
  for (Index i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (Index i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];

  auto out = detail::alloc_out<S>(s);
  const S* in = x.values().data();
  S* o = out->value.data();
  constexpr S neg_inf = -std::numeric_limits<S>::infinity();
  for (Index a = 0; a < outer; ++a) {
    for (Index c = 0; c < inner; ++c) {
      const Index base = a * len * inner + c;
      S m = neg_inf;
      for (Index j = 0; j < len; ++j) m = std::max(m, in[base + j * inner]);
      if (m == neg_inf)
        throw std::invalid_argument("softmax: slice is entirely -inf (degenerate distribution)");
      S sum = 0;
      for (Index j = 0; j < len; ++j) {
        const S v = in[base + j * inner];
        const S e = (v == neg_inf) ? S(0) : std::exp(v - m);
        o[base + j * inner] = e;
        sum += e;
      }
      const S inv = S(1) / sum;
      for (Index j = 0; j < len; ++j) o[base + j * inner] *= inv;
    }
  }

  detail::attach(out, {x}, [outer, inner, len](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& dx = px.grad_ref();
    const S* y = self.value.data();
    const S* dy = self.grad.data();
    for (Index a = 0; a < outer; ++a) {
      for (Index c = 0; c < inner; ++c) {
        const Index base = a * len * inner + c;
        S dot = 0;
        for (Index j = 0; j < len; ++j) dot += dy[base + j * inner] * y[base + j * inner];
        for (Index j = 0; j < len; ++j) {
          const Index i = base + j * inner;
          dx[i] += y[i] * (dy[i] - dot);
        }
      }
    }
  });
  return Tensor<S>(out);
}

// -log2 P(target) per row of logits [..., V]; scalar output for rank-1 input.
template <typename S>
Tensor<S> cross_entropy_bits(const Tensor<S>& logits, std::span<const int32_t> targets) {
  if (logits.rank() < 1) throw std::invalid_argument("cross_entropy_bits: logits must have rank >= 1");
  const Shape& s = logits.shape();
  const Index v = s.back();
  const Index rows = logits.size() / v;
  if (static_cast<Index>(targets.size()) != rows)
    throw std::invalid_argument("cross_entropy_bits: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) + " rows");
  for (Index r = 0; r < rows; ++r) {
    if (targets[r] < 0 || targets[r] >= v)
      throw std::out_of_range("cross_entropy_bits: target " + std::to_string(targets[r]) +
                              " out of range [0," + std::to_string(v) + ") at row " + std::to_string(r));
  }

  Shape so(s.begin(), s.end() - 1);
  auto out = detail::alloc_out<S>(std::move(so));
  const S* z = logits.values().data();
  const S ln2 = std::log(S(2));
  for (Index r = 0; r < rows; ++r) {
    const S* row = z + r * v;
    S m = row[0];
    for (Index j = 1; j < v; ++j) m = std::max(m, row[j]);
    if (!(m > -std::numeric_limits<S>::infinity()))
      throw std::invalid_argument("cross_entropy_bits: row " + std::to_string(r) + " is degenerate");
    S sum = 0;
    for (Index j = 0; j < v; ++j) sum += std::exp(row[j] - m);
    out->value[r] = (std::log(sum) + m - row[targets[r]]) / ln2;
  }

  std::vector<int32_t> tgt(targets.begin(), targets.end());
  detail::attach(out, {logits}, [rows, v, ln2, tgt = std::move(tgt)](detail::Node<S>& self) {
    auto& pz = *self.parents[0];
    if (!pz.requires_grad) return;
    auto& dz = pz.grad_ref();
    const S* z = pz.value.data();
    for (Index r = 0; r < rows; ++r) {
      const S g = self.grad[r] / ln2;
      if (g == S(0)) continue;
      const S* row = z + r * v;
      S m = row[0];
      for (Index j = 1; j < v; ++j) m = std::max(m, row[j]);
      S sum = 0;
      for (Index j = 0; j < v; ++j) sum += std::exp(row[j] - m);
      const S inv = S(1) / sum;
      S* drow = dz.data() + r * v;
      for (Index j = 0; j < v; ++j) drow[j] += g * std::exp(row[j] - m) * inv;
      drow[tgt[r]] -= g;
    }
  });
  return Tensor<S>(out);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  auto out = detail::alloc_out<S>(x.shape());
  out->value = x.values().max(S(0));
  detail::attach(out, {x}, [](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.grad_ref() += self.grad * (px.value > S(0)).template cast<S>();
  });
  return Tensor<S>(out);
}

// Inverted dropout: keeps with probability keep_prob and scales by 1/keep_prob,
// so eval mode is the exact identity (returns the input tensor unchanged).
// keep_prob == 1 draws nothing from the rng.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double keep_prob, Rng* rng, bool train) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0)
    throw std::invalid_argument("dropout: keep_prob must be in (0,1], got " + std::to_string(keep_prob));
  if (!train || keep_prob == 1.0) return x;
  if (rng == nullptr) throw std::invalid_argument("dropout: rng required in train mode");

  auto out = detail::alloc_out<S>(x.shape());
  ArrayX<S> mask(x.size());
  const S scale = S(1.0 / keep_prob);
  for (Index i = 0; i < x.size(); ++i) mask[i] = rng->uniform() < keep_prob ? scale : S(0);
  out->value = x.values() * mask;
  detail::attach(out, {x}, [mask = std::move(mask)](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.grad_ref() += self.grad * mask;
  });
  return Tensor<S>(out);
}

// Layer norm over the last axis with affine gain/bias (pass gain=1, bias=0
// tensors for the bare normalization). Variance is the biased estimate.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, double eps = 1e-5) {
  const Index d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    throw std::invalid_argument("layer_norm: gain/bias size must match last dim " + std::to_string(d));
  const Index rows = x.size() / d;

  auto out = detail::alloc_out<S>(x.shape());
  ArrayX<S> xhat(x.size());
  ArrayX<S> inv_std(rows);
  const S* in = x.values().data();
  const S* g = gain.values().data();
  const S* b = bias.values().data();
  S* o = out->value.data();
  for (Index r = 0; r < rows; ++r) {
    Eigen::Map<const ArrayX<S>> row(in + r * d, d);
    const S mu = row.mean();
    const S var = (row - mu).square().mean();
    const S inv = S(1) / std::sqrt(var + S(eps));
    inv_std[r] = inv;
    Eigen::Map<ArrayX<S>> xh(xhat.data() + r * d, d);
    xh = (row - mu) * inv;
    Eigen::Map<ArrayX<S>>(o + r * d, d) =
        xh * Eigen::Map<const ArrayX<S>>(g, d) + Eigen::Map<const ArrayX<S>>(b, d);
  }

  detail::attach(out, {x, gain, bias},
                 [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const S* dy = self.grad.data();
    for (Index r = 0; r < rows; ++r) {
      Eigen::Map<const ArrayX<S>> dyr(dy + r * d, d);
      Eigen::Map<const ArrayX<S>> xh(xhat.data() + r * d, d);
      if (pg.requires_grad) Eigen::Map<ArrayX<S>>(pg.grad_ref().data(), d) += dyr * xh;
      if (pb.requires_grad) Eigen::Map<ArrayX<S>>(pb.grad_ref().data(), d) += dyr;
      if (px.requires_grad) {
        Eigen::Map<const ArrayX<S>> g(pg.value.data(), d);
        ArrayX<S> dxhat = dyr * g;
        const S mean_dx = dxhat.mean();
        const S mean_dxxh = (dxhat * xh).mean();
        Eigen::Map<ArrayX<S>>(px.grad_ref().data() + r * d, d) +=
            inv_std[r] * (dxhat - mean_dx - xh * mean_dxxh);
      }
    }
  });
  return Tensor<S>(out);
}

// Row gather: out[i] = table[ids[i]]. Serves both token-embedding lookup and
// selecting activation rows (e.g. final positions); gradient scatters back.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::span<const int32_t> ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  const Index rows = table.dim(0), d = table.dim(1);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                              " out of range [0," + std::to_string(rows) + ")");
  }
  const Index n = static_cast<Index>(ids.size());
  auto out = detail::alloc_out<S>(Shape{n, d});
  const S* t = table.values().data();
  S* o = out->value.data();
  for (Index i = 0; i < n; ++i)
    std::copy(t + ids[i] * d, t + (ids[i] + 1) * d, o + i * d);

  std::vector<int32_t> idv(ids.begin(), ids.end());
  detail::attach(out, {table}, [n, d, idv = std::move(idv)](detail::Node<S>& self) {
    auto& pt = *self.parents[0];
    if (!pt.requires_grad) return;
    auto& dt = pt.grad_ref();
    const S* dy = self.grad.data();
    for (Index i = 0; i < n; ++i)
      Eigen::Map<ArrayX<S>>(dt.data() + idv[i] * d, d) += Eigen::Map<const ArrayX<S>>(dy + i * d, d);
  });
  return Tensor<S>(out);
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::alloc_out<S>(a.shape());
  out->value = a.values() + b.values();
  detail::attach(out, {a, b}, [](detail::Node<S>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->grad_ref() += self.grad;
  });
  return Tensor<S>(out);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = detail::alloc_out<S>(a.shape());
  out->value = a.values() * b.values();
  detail::attach(out, {a, b}, [](detail::Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_ref() += self.grad * pb.value;
    if (pb.requires_grad) pb.grad_ref() += self.grad * pa.value;
  });
  return Tensor<S>(out);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, double c) {
  auto out = detail::alloc_out<S>(x.shape());
  out->value = x.values() * S(c);
  detail::attach(out, {x}, [c](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    if (px.requires_grad) px.grad_ref() += self.grad * S(c);
  });
  return Tensor<S>(out);
}

// broadcast a rank-1 bias over the last axis
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  const Index d = x.shape().back();
  if (bias.rank() != 1 || bias.size() != d)
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) +
                                " does not match last dim of " + shape_str(x.shape()));
  const Index rows = x.size() / d;
  auto out = detail::alloc_out<S>(x.shape());
  ConstMatMap<S> X(x.values().data(), rows, d);
  MatMap<S> O(out->value.data(), rows, d);
  O = X.rowwise() + Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.values().data(), d);
  detail::attach(out, {x, bias}, [rows, d](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) px.grad_ref() += self.grad;
    if (pb.requires_grad) {
      ConstMatMap<S> dY(self.grad.data(), rows, d);
      Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(pb.grad_ref().data(), d) += dY.colwise().sum();
    }
  });
  return Tensor<S>(out);
}

// swap two axes (copying); gradient applies the inverse permutation
template <typename S>
Tensor<S> transpose(const Tensor<S>& x, Index axis_a, Index axis_b) {
  const Index r = x.rank();
  if (axis_a < 0 || axis_a >= r || axis_b < 0 || axis_b >= r)
    throw std::invalid_argument("transpose: axes (" + std::to_string(axis_a) + "," +
                                std::to_string(axis_b) + ") out of range for " + shape_str(x.shape()));
  if (axis_a == axis_b) return x;

  Shape so = x.shape();
  std::swap(so[static_cast<size_t>(axis_a)], so[static_cast<size_t>(axis_b)]);

  // strides of the input, then the input stride for each output axis
  std::vector<Index> in_stride(static_cast<size_t>(r), 1);
  for (Index i = r - 2; i >= 0; --i)
    in_stride[static_cast<size_t>(i)] = in_stride[static_cast<size_t>(i + 1)] * x.dim(i + 1);
  std::vector<Index> perm_stride(in_stride);
  std::swap(perm_stride[static_cast<size_t>(axis_a)], perm_stride[static_cast<size_t>(axis_b)]);

  auto copy_permuted = [so, perm_stride, r](const S* src, S* dst, bool scatter_add) {
    const Index total = shape_numel(so);
    std::vector<Index> idx(static_cast<size_t>(r), 0);
    Index src_off = 0;
    for (Index i = 0; i < total; ++i) {
      if (scatter_add)
        dst[src_off] += src[i];
      else
        dst[i] = src[src_off];
      for (Index ax = r - 1; ax >= 0; --ax) {
        auto a = static_cast<size_t>(ax);
        src_off += perm_stride[a];
        if (++idx[a] < so[a]) break;
        src_off -= perm_stride[a] * so[a];
        idx[a] = 0;
      }
    }
  };

  auto out = detail::alloc_out<S>(so);
  copy_permuted(x.values().data(), out->value.data(), false);
  detail::attach(out, {x}, [copy_permuted](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    copy_permuted(self.grad.data(), px.grad_ref().data(), true);
  });
  return Tensor<S>(out);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = detail::alloc_out<S>(std::move(shape));
  out->value = x.values();
  detail::attach(out, {x}, [](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    if (px.requires_grad) px.grad_ref() += self.grad;
  });
  return Tensor<S>(out);
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  auto out = detail::alloc_out<S>(Shape{});
  out->value[0] = x.values().sum();
  detail::attach(out, {x}, [](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    if (px.requires_grad) px.grad_ref() += self.grad[0];
  });
  return Tensor<S>(out);
}

// Set entries above the diagonal of each trailing [T,T] slice to -inf.
// Composes with the max-subtracted softmax: masked weights come out exactly 0,
// so no gradient reaches masked positions.
template <typename S>
Tensor<S> mask_causal(const Tensor<S>& scores) {
  const Index r = scores.rank();
  if (r < 2 || scores.dim(r - 1) != scores.dim(r - 2))
    throw std::invalid_argument("mask_causal: need trailing square axes, got " + shape_str(scores.shape()));
  const Index t = scores.dim(r - 1);
  const Index slices = scores.size() / (t * t);
  constexpr S neg_inf = -std::numeric_limits<S>::infinity();

  auto out = detail::alloc_out<S>(scores.shape());
  out->value = scores.values();
  S* o = out->value.data();
  for (Index s = 0; s < slices; ++s)
    for (Index i = 0; i < t; ++i)
      for (Index j = i + 1; j < t; ++j) o[(s * t + i) * t + j] = neg_inf;

  detail::attach(out, {scores}, [slices, t](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& dx = px.grad_ref();
    const S* dy = self.grad.data();
    for (Index s = 0; s < slices; ++s)
      for (Index i = 0; i < t; ++i)
        for (Index j = 0; j <= i; ++j) dx[(s * t + i) * t + j] += dy[(s * t + i) * t + j];
  });
  return Tensor<S>(out);
}

// x: [B*T, d] plus table rows 0..T-1 tiled over the batch (per-layer learned
// positions, or the fixed sinusoid); gradient sums over the batch per row.
template <typename S>
Tensor<S> add_positional(const Tensor<S>& x, const Tensor<S>& table, Index seq_len) {
  if (x.rank() != 2 || table.rank() != 2 || x.dim(1) != table.dim(1) || seq_len > table.dim(0) ||
      seq_len < 1 || x.dim(0) % seq_len != 0)
    throw std::invalid_argument("add_positional: x " + shape_str(x.shape()) + ", table " +
                                shape_str(table.shape()) + ", seq_len " + std::to_string(seq_len));
  const Index d = x.dim(1);
  const Index batch = x.dim(0) / seq_len;

  auto out = detail::alloc_out<S>(x.shape());
  const S* in = x.values().data();
  const S* tab = table.values().data();
  S* o = out->value.data();
  for (Index b = 0; b < batch; ++b)
    for (Index i = 0; i < seq_len; ++i) {
      const Index row = (b * seq_len + i) * d;
      Eigen::Map<ArrayX<S>>(o + row, d) =
          Eigen::Map<const ArrayX<S>>(in + row, d) + Eigen::Map<const ArrayX<S>>(tab + i * d, d);
    }

  detail::attach(out, {x, table}, [batch, seq_len, d](detail::Node<S>& self) {
    auto& px = *self.parents[0];
    auto& pt = *self.parents[1];
    if (px.requires_grad) px.grad_ref() += self.grad;
    if (pt.requires_grad) {
      auto& dt = pt.grad_ref();
      const S* dy = self.grad.data();
      for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < seq_len; ++i)
          Eigen::Map<ArrayX<S>>(dt.data() + i * d, d) +=
              Eigen::Map<const ArrayX<S>>(dy + (b * seq_len + i) * d, d);
    }
  });
  return Tensor<S>(out);
}

}  // namespace bytelm
