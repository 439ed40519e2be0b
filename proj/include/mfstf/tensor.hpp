#pragma once

// Dense tensor with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node holding a flat row-major value
// buffer. Operations are free functions; each records a backward closure on
// its output node when gradients are enabled. backward() walks the graph in
// reverse topological order and accumulates (sums) gradients into every
// reachable node that requires them. One graph is confined to one thread;
// detached tensors are freely shareable.

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mfstf/common.hpp"

namespace mfstf {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// batch_stats normalizes by batch statistics like train but leaves running
/// stats untouched; used for feature snapshots outside optimization steps.
enum class Mode { train, eval, batch_stats };

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// Scoped guard: ops performed while alive build no backward graph.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <typename S>
struct TensorNode {
  std::vector<int> shape;
  ArrayX<S> value;
  ArrayX<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;

  ArrayX<S>& ensure_grad() {
    if (grad.size() != value.size()) grad = ArrayX<S>::Zero(value.size());
    return grad;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const std::vector<int>& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<int> shape, ArrayX<S> values, bool requires_grad = false) {
    check(shape_numel(shape) == values.size(),
          "tensor: shape " + shape_str(shape) + " does not match data length " +
              std::to_string(values.size()));
    n_ = std::make_shared<TensorNode<S>>();
    n_->shape = std::move(shape);
    n_->value = std::move(values);
    n_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return Tensor(std::move(shape), ArrayX<S>(), requires_grad, ZeroTag{});
  }

  static Tensor constant(std::vector<int> shape, S v, bool requires_grad = false) {
    ArrayX<S> a = ArrayX<S>::Constant(shape_numel(shape), v);
    return Tensor(std::move(shape), std::move(a), requires_grad);
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    ArrayX<S> a(1);
    a(0) = v;
    return Tensor({1}, std::move(a), requires_grad);
  }

  static Tensor from(std::vector<int> shape, std::initializer_list<S> vals) {
    ArrayX<S> a(static_cast<int64_t>(vals.size()));
    int64_t i = 0;
    for (S v : vals) a(i++) = v;
    return Tensor(std::move(shape), std::move(a));
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return n_->value.size(); }

  ArrayX<S>& values() { return n_->value; }
  const ArrayX<S>& values() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) {
    check(n_->parents.empty(), "set_requires_grad: only valid on leaf tensors");
    n_->requires_grad = rg;
  }

  bool has_grad() const { return n_->grad.size() == n_->value.size(); }
  const ArrayX<S>& grad() const {
    check(has_grad(), "grad: not populated; call backward first");
    return n_->grad;
  }
  ArrayX<S>& grad() {
    check(has_grad(), "grad: not populated; call backward first");
    return n_->grad;
  }
  void zero_grad() {
    if (n_->grad.size() > 0) n_->grad.setZero();
  }

  S item() const {
    check(size() == 1, "item: tensor is not scalar");
    return n_->value(0);
  }

  /// Leaf copy of the values, disconnected from any graph.
  Tensor detach() const { return Tensor(n_->shape, n_->value, false); }

  std::shared_ptr<TensorNode<S>> node() const { return n_; }

 private:
  struct ZeroTag {};
  Tensor(std::vector<int> shape, ArrayX<S>, bool requires_grad, ZeroTag) {
    n_ = std::make_shared<TensorNode<S>>();
    n_->value = ArrayX<S>::Zero(shape_numel(shape));
    n_->shape = std::move(shape);
    n_->requires_grad = requires_grad;
  }

  std::shared_ptr<TensorNode<S>> n_;
};

namespace detail {

/// Makes the output node of an op. Attaches parents and the backward closure
/// only when grads are enabled and some input needs them.
template <typename S>
Tensor<S> make_result(std::vector<int> shape, ArrayX<S> value,
                      std::vector<std::shared_ptr<TensorNode<S>>> parents,
                      std::function<void()> (*bind)(TensorNode<S>*, void*), void* ctx) = delete;

template <typename S>
bool any_requires(std::span<const Tensor<S>> ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

}  // namespace detail

/// Wires `out` into the graph with the given parents and backward closure.
/// No-op under NoGradGuard or when no parent requires gradients.
template <typename S, typename F>
void attach_backward(Tensor<S>& out, std::vector<Tensor<S>> parents, F&& fn) {
  if (!grad_enabled()) return;
  bool need = false;
  for (const auto& p : parents) need = need || p.requires_grad();
  if (!need) return;
  auto n = out.node();
  n->requires_grad = true;
  for (const auto& p : parents) n->parents.push_back(p.node());
  n->backprop = std::forward<F>(fn);
}

/// Reverse-mode sweep from a scalar loss. Every requires_grad tensor reachable
/// from the loss receives its gradient; repeated uses accumulate by summation.
template <typename S>
void backward(const Tensor<S>& loss) {
  check(loss.defined() && loss.size() == 1, "backward: loss must be a scalar tensor");
  check(loss.requires_grad(), "backward: loss is not connected to any gradient tape");

  // Iterative post-order DFS over parent edges; reversed it is topological.
  std::vector<TensorNode<S>*> order;
  std::unordered_set<TensorNode<S>*> seen;
  struct Frame {
    TensorNode<S>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode<S>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()(0) = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop();
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  Tensor<S> out(a.shape(), a.values() + b.values());
  attach_backward(out, {a, b}, [an = a.node().get(), bn = b.node().get(), on = out.node().get()] {
    if (an->requires_grad) an->ensure_grad() += on->grad;
    if (bn->requires_grad) bn->ensure_grad() += on->grad;
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  Tensor<S> out(a.shape(), a.values() - b.values());
  attach_backward(out, {a, b}, [an = a.node().get(), bn = b.node().get(), on = out.node().get()] {
    if (an->requires_grad) an->ensure_grad() += on->grad;
    if (bn->requires_grad) bn->ensure_grad() -= on->grad;
  });
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  Tensor<S> out(a.shape(), a.values() * c);
  attach_backward(out, {a}, [an = a.node().get(), on = out.node().get(), c] {
    an->ensure_grad() += c * on->grad;
  });
  return out;
}

/// Hadamard product.
template <typename S>
Tensor<S> elementwise_mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "elementwise_mul");
  Tensor<S> out(a.shape(), a.values() * b.values());
  attach_backward(out, {a, b}, [an = a.node().get(), bn = b.node().get(), on = out.node().get()] {
    if (an->requires_grad) an->ensure_grad() += on->grad * bn->value;
    if (bn->requires_grad) bn->ensure_grad() += on->grad * an->value;
  });
  return out;
}

/// Elementwise max; on ties the gradient routes to the first argument.
template <typename S>
Tensor<S> maximum(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "maximum");
  Tensor<S> out(a.shape(), a.values().max(b.values()));
  attach_backward(out, {a, b}, [an = a.node().get(), bn = b.node().get(), on = out.node().get()] {
    ArrayX<S> take_a = (an->value >= bn->value).template cast<S>();
    if (an->requires_grad) an->ensure_grad() += on->grad * take_a;
    if (bn->requires_grad) bn->ensure_grad() += on->grad * (S(1) - take_a);
  });
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> out(x.shape(), x.values().max(S(0)));
  attach_backward(out, {x}, [xn = x.node().get(), on = out.node().get()] {
    xn->ensure_grad() += on->grad * (xn->value > S(0)).template cast<S>();
  });
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  ArrayX<S> v(1);
  v(0) = x.values().sum();
  Tensor<S> out({1}, std::move(v));
  attach_backward(out, {x}, [xn = x.node().get(), on = out.node().get()] {
    xn->ensure_grad() += on->grad(0);
  });
  return out;
}

/// Euclidean norm of the flattened tensor. Gradient at the zero tensor is 0.
template <typename S>
Tensor<S> l2_norm(const Tensor<S>& x) {
  double ss = 0.0;
  const auto& xv = x.values();
  for (int64_t i = 0; i < xv.size(); ++i) ss += double(xv(i)) * double(xv(i));
  ArrayX<S> v(1);
  v(0) = static_cast<S>(std::sqrt(ss));
  Tensor<S> out({1}, std::move(v));
  attach_backward(out, {x}, [xn = x.node().get(), on = out.node().get()] {
    const S norm = on->value(0);
    if (norm > S(0)) xn->ensure_grad() += (on->grad(0) / norm) * xn->value;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

namespace detail {
// Channel axis convention: [D] -> 0, [B,D] -> 1, [C,H,W] -> 0, [B,C,H,W] -> 1.
inline int channel_axis(int rank) {
  switch (rank) {
    case 1: return 0;
    case 2: return 1;
    case 3: return 0;
    case 4: return 1;
    default: throw ContractError("concat_channels: unsupported rank " + std::to_string(rank));
  }
}
}  // namespace detail

/// Concatenation along the channel axis, in argument order.
template <typename S>
Tensor<S> concat_channels(std::span<const Tensor<S>> parts) {
  check(!parts.empty(), "concat_channels: no parts");
  const int rank = parts[0].rank();
  const int axis = detail::channel_axis(rank);
  int total_c = 0;
  int64_t inner = 1, outer = 1;  // layout: [outer, channel, inner]
  {
    const auto& s0 = parts[0].shape();
    for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= s0[static_cast<size_t>(i)];
  }
  for (const auto& p : parts) {
    check(p.rank() == rank, "concat_channels: mixed ranks");
    for (int i = 0; i < rank; ++i) {
      if (i != axis)
        check(p.dim(i) == parts[0].dim(i), "concat_channels: non-channel extents differ: " +
                                               shape_str(p.shape()) + " vs " +
                                               shape_str(parts[0].shape()));
    }
    total_c += p.dim(axis);
  }
  std::vector<int> oshape = parts[0].shape();
  oshape[static_cast<size_t>(axis)] = total_c;

  ArrayX<S> out_v(outer * total_c * inner);
  int c_off = 0;
  for (const auto& p : parts) {
    const int pc = p.dim(axis);
    for (int64_t o = 0; o < outer; ++o) {
      out_v.segment((o * total_c + c_off) * inner, static_cast<int64_t>(pc) * inner) =
          p.values().segment(o * pc * inner, static_cast<int64_t>(pc) * inner);
    }
    c_off += pc;
  }
  Tensor<S> out(std::move(oshape), std::move(out_v));

  std::vector<Tensor<S>> parent_vec(parts.begin(), parts.end());
  std::vector<TensorNode<S>*> pn;
  for (const auto& p : parts) pn.push_back(p.node().get());
  attach_backward(out, parent_vec,
                  [pn = std::move(pn), on = out.node().get(), outer, inner, total_c] {
                    int c_off = 0;
                    for (TensorNode<S>* n : pn) {
                      const int pc = n->shape[static_cast<size_t>(detail::channel_axis(
                          static_cast<int>(n->shape.size())))];
                      if (n->requires_grad) {
                        auto& g = n->ensure_grad();
                        for (int64_t o = 0; o < outer; ++o) {
                          g.segment(o * pc * inner, static_cast<int64_t>(pc) * inner) +=
                              on->grad.segment((o * total_c + c_off) * inner,
                                               static_cast<int64_t>(pc) * inner);
                        }
                      }
                      c_off += pc;
                    }
                  });
  return out;
}

template <typename S>
Tensor<S> concat_channels(std::initializer_list<Tensor<S>> parts) {
  std::vector<Tensor<S>> v(parts);
  return concat_channels(std::span<const Tensor<S>>(v));
}

/// Per-channel spatial mean: [C,H,W] -> [C] or [B,C,H,W] -> [B,C].
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  check(x.rank() == 3 || x.rank() == 4, "global_avg_pool: expected rank 3 or 4, got " +
                                            shape_str(x.shape()));
  const bool batched = x.rank() == 4;
  const int B = batched ? x.dim(0) : 1;
  const int C = batched ? x.dim(1) : x.dim(0);
  const int64_t hw = static_cast<int64_t>(x.dim(batched ? 2 : 1)) * x.dim(batched ? 3 : 2);
  check(hw >= 1, "global_avg_pool: empty spatial extent");

  ArrayX<S> v(static_cast<int64_t>(B) * C);
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    v(bc) = static_cast<S>(x.values().segment(bc * hw, hw).template cast<double>().sum() /
                           static_cast<double>(hw));
  }
  std::vector<int> oshape = batched ? std::vector<int>{B, C} : std::vector<int>{C};
  Tensor<S> out(std::move(oshape), std::move(v));
  attach_backward(out, {x}, [xn = x.node().get(), on = out.node().get(), hw] {
    auto& g = xn->ensure_grad();
    const S inv = S(1) / static_cast<S>(hw);
    for (int64_t bc = 0; bc < on->value.size(); ++bc)
      g.segment(bc * hw, hw) += on->grad(bc) * inv;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

/// Affine map W x + b. x: [Din] -> [Dout], or row-batched [B,Din] -> [B,Dout].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& W, const Tensor<S>& b) {
  check(W.rank() == 2, "linear: weight must be rank 2");
  const int dout = W.dim(0), din = W.dim(1);
  check(b.rank() == 1 && b.dim(0) == dout, "linear: bias length must match weight rows");
  check(x.rank() == 1 || x.rank() == 2, "linear: input must be rank 1 or 2");
  const bool batched = x.rank() == 2;
  const int B = batched ? x.dim(0) : 1;
  check(x.dim(batched ? 1 : 0) == din,
        "linear: input width " + std::to_string(x.dim(batched ? 1 : 0)) +
            " does not match weight columns " + std::to_string(din));

  Eigen::Map<const MatRM<S>> Xm(x.values().data(), B, din);
  Eigen::Map<const MatRM<S>> Wm(W.values().data(), dout, din);
  ArrayX<S> v(static_cast<int64_t>(B) * dout);
  Eigen::Map<MatRM<S>> Om(v.data(), B, dout);
  Om.noalias() = Xm * Wm.transpose();
  Om.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.values().data(), dout);

  std::vector<int> oshape = batched ? std::vector<int>{B, dout} : std::vector<int>{dout};
  Tensor<S> out(std::move(oshape), std::move(v));
  attach_backward(out, {x, W, b},
                  [xn = x.node().get(), wn = W.node().get(), bn = b.node().get(),
                   on = out.node().get(), B, din, dout] {
                    Eigen::Map<const MatRM<S>> Gm(on->grad.data(), B, dout);
                    Eigen::Map<const MatRM<S>> Xm(xn->value.data(), B, din);
                    Eigen::Map<const MatRM<S>> Wm(wn->value.data(), dout, din);
                    if (xn->requires_grad) {
                      Eigen::Map<MatRM<S>> Gx(xn->ensure_grad().data(), B, din);
                      Gx.noalias() += Gm * Wm;
                    }
                    if (wn->requires_grad) {
                      Eigen::Map<MatRM<S>> Gw(wn->ensure_grad().data(), dout, din);
                      Gw.noalias() += Gm.transpose() * Xm;
                    }
                    if (bn->requires_grad) {
                      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> Gb(bn->ensure_grad().data(),
                                                                         dout);
                      Gb.noalias() += Gm.colwise().sum().transpose();
                    }
                  });
  return out;
}

/// W x without bias. x: [Din] -> [Dout], or row-batched [B,Din] -> [B,Dout].
template <typename S>
Tensor<S> matmul(const Tensor<S>& x, const Tensor<S>& W) {
  check(W.rank() == 2, "matmul: weight must be rank 2");
  const int dout = W.dim(0), din = W.dim(1);
  check(x.rank() == 1 || x.rank() == 2, "matmul: input must be rank 1 or 2");
  const bool batched = x.rank() == 2;
  const int B = batched ? x.dim(0) : 1;
  check(x.dim(batched ? 1 : 0) == din, "matmul: input width does not match weight columns");

  Eigen::Map<const MatRM<S>> Xm(x.values().data(), B, din);
  Eigen::Map<const MatRM<S>> Wm(W.values().data(), dout, din);
  ArrayX<S> v(static_cast<int64_t>(B) * dout);
  Eigen::Map<MatRM<S>>(v.data(), B, dout).noalias() = Xm * Wm.transpose();

  std::vector<int> oshape = batched ? std::vector<int>{B, dout} : std::vector<int>{dout};
  Tensor<S> out(std::move(oshape), std::move(v));
  attach_backward(out, {x, W},
                  [xn = x.node().get(), wn = W.node().get(), on = out.node().get(), B, din, dout] {
                    Eigen::Map<const MatRM<S>> Gm(on->grad.data(), B, dout);
                    Eigen::Map<const MatRM<S>> Xm(xn->value.data(), B, din);
                    Eigen::Map<const MatRM<S>> Wm(wn->value.data(), dout, din);
                    if (xn->requires_grad)
                      Eigen::Map<MatRM<S>>(xn->ensure_grad().data(), B, din).noalias() += Gm * Wm;
                    if (wn->requires_grad)
                      Eigen::Map<MatRM<S>>(wn->ensure_grad().data(), dout, din).noalias() +=
                          Gm.transpose() * Xm;
                  });
  return out;
}

/// Numerically stabilized softmax over the last axis. [C] or [B,C].
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  check(logits.rank() == 1 || logits.rank() == 2, "softmax: input must be rank 1 or 2");
  check(!logits.values().isNaN().any(), "softmax: NaN input");
  const bool batched = logits.rank() == 2;
  const int B = batched ? logits.dim(0) : 1;
  const int C = batched ? logits.dim(1) : logits.dim(0);

  ArrayX<S> v(static_cast<int64_t>(B) * C);
  for (int bi = 0; bi < B; ++bi) {
    auto row = logits.values().segment(static_cast<int64_t>(bi) * C, C);
    const S mx = row.maxCoeff();
    ArrayX<S> e = (row - mx).exp();
    v.segment(static_cast<int64_t>(bi) * C, C) = e / e.sum();
  }
  Tensor<S> out(logits.shape(), std::move(v));
  attach_backward(out, {logits}, [xn = logits.node().get(), on = out.node().get(), B, C] {
    auto& g = xn->ensure_grad();
    for (int bi = 0; bi < B; ++bi) {
      auto p = on->value.segment(static_cast<int64_t>(bi) * C, C);
      auto gy = on->grad.segment(static_cast<int64_t>(bi) * C, C);
      const S dot = (p * gy).sum();
      g.segment(static_cast<int64_t>(bi) * C, C) += p * (gy - dot);
    }
  });
  return out;
}

inline constexpr double kProbFloor = 1e-12;

/// -log(p[label]) with the probability clamped below at 1e-12.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& probs, int label) {
  check(probs.rank() == 1, "cross_entropy: expected a probability vector");
  check(label >= 0 && label < probs.dim(0),
        "cross_entropy: label " + std::to_string(label) + " outside [0," +
            std::to_string(probs.dim(0)) + ")");
  const S p = probs.values()(label);
  ArrayX<S> v(1);
  v(0) = static_cast<S>(-std::log(std::max(double(p), kProbFloor)));
  Tensor<S> out({1}, std::move(v));
  attach_backward(out, {probs}, [pn = probs.node().get(), on = out.node().get(), label] {
    const double p = double(pn->value(label));
    if (p > kProbFloor) pn->ensure_grad()(label) += on->grad(0) * static_cast<S>(-1.0 / p);
  });
  return out;
}

/// Batch mean of -log(p[b, label_b]). probs: [B,C].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& probs, std::span<const int> labels) {
  check(probs.rank() == 2, "cross_entropy: expected [batch x classes]");
  const int B = probs.dim(0), C = probs.dim(1);
  check(static_cast<int>(labels.size()) == B, "cross_entropy: label count mismatch");
  double acc = 0.0;
  for (int bi = 0; bi < B; ++bi) {
    const int label = labels[static_cast<size_t>(bi)];
    check(label >= 0 && label < C, "cross_entropy: label " + std::to_string(label) +
                                       " outside [0," + std::to_string(C) + ")");
    acc += -std::log(std::max(double(probs.values()(static_cast<int64_t>(bi) * C + label)),
                              kProbFloor));
  }
  ArrayX<S> v(1);
  v(0) = static_cast<S>(acc / B);
  Tensor<S> out({1}, std::move(v));
  std::vector<int> lab(labels.begin(), labels.end());
  attach_backward(out, {probs},
                  [pn = probs.node().get(), on = out.node().get(), lab = std::move(lab), B, C] {
                    auto& g = pn->ensure_grad();
                    for (int bi = 0; bi < B; ++bi) {
                      const int64_t idx = static_cast<int64_t>(bi) * C + lab[static_cast<size_t>(bi)];
                      const double p = double(pn->value(idx));
                      if (p > kProbFloor) g(idx) += on->grad(0) * static_cast<S>(-1.0 / (p * B));
                    }
                  });
  return out;
}

}  // namespace mfstf
