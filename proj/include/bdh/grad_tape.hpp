#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "bdh/tensor.hpp"

namespace bdh {

// Reverse-mode tape over the fixed op set of the BDH-GPU layer graph.
// Nodes are appended in execution order; backward walks them in reverse.
template <typename T>
class GradTape {
 public:
  using TensorT = BasicTensor<T>;

  struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
  };

  GradTape() = default;
  // Backward rules capture the tape's address, so it must stay put.
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  Var leaf(TensorT value, bool requires_grad = true);
  Var constant(TensorT value) { return leaf(std::move(value), false); }

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  // Zero tensor of the right shape if backward never reached v.
  TensorT grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Requires a single-element loss; throws UsageError otherwise.
  void backward(Var loss);
  // Node ids whose backward rule ran, in the order they ran.
  const std::vector<std::size_t>& backward_order() const { return order_; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var mul_const(Var a, TensorT factor);
  Var relu(Var a);
  Var layer_norm(Var a, double eps);
  Var sum(Var a);
  // Row r rotated by positions[r].
  Var rope(Var x, std::vector<std::int64_t> positions, TensorT freqs);
  Var rope(Var x, std::shared_ptr<const RotationTable<T>> table);
  Var gather_rows(Var table, std::vector<int> rows);
  Var select(Var a, std::size_t index);
  Var concat_cols(const std::vector<Var>& parts);
  // out_t = sum_{tau<t} gamma^(t-tau) <q_t,k_tau> v_tau  (+ gamma^t carry q_t when carry is given).
  // carry is d x N state entering the chunk; it is treated as a constant.
  // With grad_through_kv false only q receives gradient.
  Var causal_attention(Var q, Var k, Var v, double gamma, const TensorT* carry, bool grad_through_kv);
  Var cross_entropy(Var logits, std::vector<int> targets);

 private:
  using Backward = std::function<void(const TensorT& grad_out)>;
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(TensorT value, bool requires_grad, Backward backward);
  bool any_grad(std::initializer_list<Var> vars) const;
  // Mutable gradient buffer, zero-initialized on first use.
  TensorT& grad_buffer(Var v);

  std::vector<Node> nodes_;
  std::vector<std::size_t> order_;
};

// Lower-triangular decay mask M[t][tau] = gamma^(t-tau) for tau < t, else 0.
template <typename T>
RowMatrix<T> causal_decay_mask(std::size_t length, double gamma);

}  // namespace bdh
