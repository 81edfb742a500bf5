#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "dpsr/ops.hpp"
#include "dpsr/tensor.hpp"

namespace dpsr {

template <typename T>
class Tape;

// Handle to a node recorded on a Tape.
template <typename T>
class Var {
 public:
  using value_type = T;

  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Tensor<T>& grad() const { return tape_->grad(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  std::size_t dim(int axis) const { return value().dim(axis); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in execution order. Node ids are assigned on append, so
// every node's inputs have smaller ids and reverse id order is a valid
// topological order for backward.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(const Var<T>& loss);
  void zero_grad();

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  // Zero tensor of the node's shape when nothing flowed into it.
  const Tensor<T>& grad(std::size_t id) const;
  // Allocates on first use.
  Tensor<T>& grad_accum(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }
  // Number of backward functions run by the last backward() call.
  std::size_t last_backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor<T> value;
    mutable Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
  std::size_t visits_ = 0;
};

// Taped counterparts of the forward primitives. All Vars passed to one call
// must live on the same tape.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias = nullptr);
template <typename T>
Var<T> depthwise_conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias = nullptr);
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias = nullptr);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = kLayerNormEps);
template <typename T>
Var<T> silu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> softplus(const Var<T>& x);
template <typename T>
Var<T> exp(const Var<T>& x);
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);
template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& c);
template <typename T>
Var<T> mul_bcast_w(const Var<T>& x, const Var<T>& s);
template <typename T>
std::pair<Var<T>, Var<T>> split_half(const Var<T>& x);
template <typename T>
Var<T> simple_gate(const Var<T>& x);
template <typename T>
Var<T> mean_pool_w(const Var<T>& x);
template <typename T>
Var<T> max_pool_w(const Var<T>& x);
template <typename T>
Var<T> pixel_shuffle_1d(const Var<T>& x, std::size_t r);
template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> causal_conv_lines(const Var<T>& x, const Var<T>& weight, const Var<T>* bias = nullptr);
template <typename T>
Var<T> selective_scan(const Var<T>& xs, const Var<T>& dt, const Var<T>& a_log, const Var<T>& b, const Var<T>& c,
                      const Var<T>& d);

template <typename T>
inline Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  return x.reshaped(std::move(shape));
}

// Differentiable scalar function of a parameter list, evaluated on the given tape.
using GradCheckFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Max over parameter tensors of
//   max_i |analytic_i - central_difference_i| / max_i max(|analytic_i|, |central_difference_i|)
// (denominator floored at 1e-8).
// Throws NumericError if the function produces a non-finite value.
double grad_check(const GradCheckFn& f, const std::vector<Tensor<double>>& params, double step = 1e-5);

}  // namespace dpsr
