#include "bdh/grad_tape.hpp"

#include <cmath>

namespace bdh {

template <typename T>
RowMatrix<T> causal_decay_mask(std::size_t length, double gamma) {
  RowMatrix<T> m = RowMatrix<T>::Zero(length, length);
  for (std::size_t t = 0; t < length; ++t) {
    double w = gamma;
    for (std::size_t tau = t; tau-- > 0;) {
      m(t, tau) = static_cast<T>(w);
      w *= gamma;
    }
  }
  return m;
}

template <typename T>
auto GradTape<T>::push(TensorT value, bool requires_grad, Backward backward) -> Var {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
auto GradTape<T>::leaf(TensorT value, bool requires_grad) -> Var {
  return push(std::move(value), requires_grad, nullptr);
}

template <typename T>
bool GradTape<T>::any_grad(std::initializer_list<Var> vars) const {
  for (auto v : vars)
    if (nodes_.at(v.id).requires_grad) return true;
  return false;
}

template <typename T>
auto GradTape<T>::grad_buffer(Var v) -> TensorT& {
  Node& node = nodes_[v.id];
  if (node.grad.empty()) node.grad = TensorT(node.value.shape());
  return node.grad;
}

template <typename T>
auto GradTape<T>::grad(Var v) const -> TensorT {
  const Node& node = nodes_.at(v.id);
  return node.grad.empty() ? TensorT(node.value.shape()) : node.grad;
}

template <typename T>
void GradTape<T>::backward(Var loss) {
  if (nodes_.at(loss.id).value.size() != 1) throw UsageError("backward needs a scalar loss");
  order_.clear();
  for (auto& n : nodes_) n.grad = TensorT();
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss)[0] = T(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || node.grad.empty()) continue;
    order_.push_back(id);
    // Closures only touch the grads of earlier nodes, so node.grad stays put.
    node.backward(node.grad);
  }
}

template <typename T>
auto GradTape<T>::matmul(Var a, Var b) -> Var {
  TensorT out = bdh::matmul(value(a), value(b));
  return push(std::move(out), any_grad({a, b}), [this, a, b](const TensorT& g) {
    if (requires_grad(a)) grad_buffer(a).mat().noalias() += g.mat() * value(b).mat().transpose();
    if (requires_grad(b)) grad_buffer(b).mat().noalias() += value(a).mat().transpose() * g.mat();
  });
}

template <typename T>
auto GradTape<T>::add(Var a, Var b) -> Var {
  if (value(a).shape() != value(b).shape()) throw DimensionError("add shape mismatch");
  TensorT out = value(a);
  out.mat() += value(b).mat();
  return push(std::move(out), any_grad({a, b}), [this, a, b](const TensorT& g) {
    if (requires_grad(a)) grad_buffer(a).mat() += g.mat();
    if (requires_grad(b)) grad_buffer(b).mat() += g.mat();
  });
}

template <typename T>
auto GradTape<T>::mul(Var a, Var b) -> Var {
  if (value(a).shape() != value(b).shape()) throw DimensionError("mul shape mismatch");
  TensorT out = value(a);
  out.mat().array() *= value(b).mat().array();
  return push(std::move(out), any_grad({a, b}), [this, a, b](const TensorT& g) {
    if (requires_grad(a)) grad_buffer(a).mat().array() += g.mat().array() * value(b).mat().array();
    if (requires_grad(b)) grad_buffer(b).mat().array() += g.mat().array() * value(a).mat().array();
  });
}

template <typename T>
auto GradTape<T>::mul_const(Var a, TensorT factor) -> Var {
  if (value(a).shape() != factor.shape()) throw DimensionError("mul_const shape mismatch");
  TensorT out = value(a);
  out.mat().array() *= factor.mat().array();
  return push(std::move(out), any_grad({a}), [this, a, factor = std::move(factor)](const TensorT& g) {
    grad_buffer(a).mat().array() += g.mat().array() * factor.mat().array();
  });
}

template <typename T>
auto GradTape<T>::relu(Var a) -> Var {
  TensorT out = bdh::relu(value(a));
  return push(std::move(out), any_grad({a}), [this, a](const TensorT& g) {
    auto& ga = grad_buffer(a);
    ga.mat().array() += (value(a).mat().array() > T(0)).select(g.mat().array(), T(0));
  });
}

template <typename T>
auto GradTape<T>::layer_norm(Var a, double eps) -> Var {
  const TensorT& x = value(a);
  if (x.cols() < 2) throw DimensionError("layer_norm needs at least two features");
  TensorT out(x.shape());
  std::vector<T> inv_std(x.rows());
  const std::size_t d = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0;
    for (auto v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0;
    for (auto v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(inv);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) o[c] = static_cast<T>((in[c] - mean) * inv);
  }
  const bool rg = any_grad({a});
  Var result = push(std::move(out), rg, nullptr);
  if (rg) {
    nodes_[result.id].backward = [this, a, result, inv_std = std::move(inv_std)](const TensorT& g) {
      const TensorT& y = value(result);
      auto& ga = grad_buffer(a);
      const std::size_t d = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto gy = g.row(r);
        auto yr = y.row(r);
        double mean_g = 0, mean_gy = 0;
        for (std::size_t c = 0; c < d; ++c) {
          mean_g += gy[c];
          mean_gy += static_cast<double>(gy[c]) * yr[c];
        }
        mean_g /= static_cast<double>(d);
        mean_gy /= static_cast<double>(d);
        auto gr = ga.row(r);
        for (std::size_t c = 0; c < d; ++c)
          gr[c] += static_cast<T>(inv_std[r] * (gy[c] - mean_g - yr[c] * mean_gy));
      }
    };
  }
  return result;
}

template <typename T>
auto GradTape<T>::sum(Var a) -> Var {
  TensorT out({1});
  double s = 0;
  for (auto v : value(a).values()) s += v;
  out[0] = static_cast<T>(s);
  return push(std::move(out), any_grad({a}), [this, a](const TensorT& g) {
    grad_buffer(a).mat().array() += g[0];
  });
}

template <typename T>
auto GradTape<T>::rope(Var x, std::vector<std::int64_t> positions, TensorT freqs) -> Var {
  TensorT out = rope_rotate_rows(value(x), positions, freqs);
  return push(std::move(out), any_grad({x}),
              [this, x, positions = std::move(positions), freqs = std::move(freqs)](const TensorT& g) {
                // Transpose of a rotation is the rotation by the negated angle.
                std::vector<std::int64_t> back(positions.size());
                for (std::size_t i = 0; i < back.size(); ++i) back[i] = -positions[i];
                grad_buffer(x).mat() += rope_rotate_rows(g, back, freqs).mat();
              });
}

template <typename T>
auto GradTape<T>::rope(Var x, std::shared_ptr<const RotationTable<T>> table) -> Var {
  TensorT out = table->apply(value(x), false);
  return push(std::move(out), any_grad({x}), [this, x, table = std::move(table)](const TensorT& g) {
    grad_buffer(x).mat() += table->apply(g, true).mat();
  });
}

template <typename T>
auto GradTape<T>::gather_rows(Var table, std::vector<int> rows) -> Var {
  const TensorT& tab = value(table);
  if (tab.rank() != 2) throw DimensionError("gather_rows expects a matrix");
  TensorT out({rows.size(), tab.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= tab.rows()) throw IndexError("row index out of range");
    out.mat().row(r) = tab.mat().row(rows[r]);
  }
  return push(std::move(out), any_grad({table}), [this, table, rows = std::move(rows)](const TensorT& g) {
    auto& gt = grad_buffer(table);
    for (std::size_t r = 0; r < rows.size(); ++r) gt.mat().row(rows[r]) += g.mat().row(r);
  });
}

template <typename T>
auto GradTape<T>::select(Var a, std::size_t index) -> Var {
  TensorT out = value(a).slice(index);
  return push(std::move(out), any_grad({a}), [this, a, index](const TensorT& g) {
    auto& ga = grad_buffer(a);
    const std::size_t stride = g.size();
    for (std::size_t k = 0; k < stride; ++k) ga[index * stride + k] += g[k];
  });
}

template <typename T>
auto GradTape<T>::concat_cols(const std::vector<Var>& parts) -> Var {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (auto p : parts) {
    if (value(p).rows() != rows) throw DimensionError("concat_cols row mismatch");
    cols += value(p).cols();
    rg = rg || requires_grad(p);
  }
  TensorT out({rows, cols});
  std::size_t offset = 0;
  for (auto p : parts) {
    const auto& v = value(p);
    out.mat().middleCols(offset, v.cols()) = v.mat();
    offset += v.cols();
  }
  return push(std::move(out), rg, [this, parts](const TensorT& g) {
    std::size_t offset = 0;
    for (auto p : parts) {
      const std::size_t c = value(p).cols();
      if (requires_grad(p)) grad_buffer(p).mat() += g.mat().middleCols(offset, c);
      offset += c;
    }
  });
}

template <typename T>
auto GradTape<T>::causal_attention(Var q, Var k, Var v, double gamma, const TensorT* carry, bool grad_through_kv)
    -> Var {
  const TensorT& Q = value(q);
  const TensorT& K = value(k);
  const TensorT& V = value(v);
  const std::size_t S = Q.rows();
  if (K.rows() != S || V.rows() != S || K.cols() != Q.cols())
    throw DimensionError("causal_attention shape mismatch");
  if (carry && (carry->rows() != V.cols() || carry->cols() != Q.cols()))
    throw DimensionError("attention carry must be d x N");
  const RowMatrix<T> mask = causal_decay_mask<T>(S, gamma);
  RowMatrix<T> W = (Q.mat() * K.mat().transpose()).cwiseProduct(mask);
  TensorT out({S, V.cols()});
  out.mat().noalias() = W * V.mat();
  std::vector<T> carry_scale;
  TensorT carry_copy;
  if (carry) {
    carry_scale.resize(S);
    double g = 1;
    for (std::size_t t = 0; t < S; ++t, g *= gamma) carry_scale[t] = static_cast<T>(g);
    RowMatrix<T> read = Q.mat() * carry->mat().transpose();
    for (std::size_t t = 0; t < S; ++t) out.mat().row(t) += carry_scale[t] * read.row(t);
    carry_copy = *carry;
  }
  const bool rg = requires_grad(q) || (grad_through_kv && (requires_grad(k) || requires_grad(v)));
  return push(std::move(out), rg,
              [this, q, k, v, grad_through_kv, mask, W = std::move(W), carry_scale = std::move(carry_scale),
               carry_copy = std::move(carry_copy)](const TensorT& g) {
                const auto& Qm = value(q).mat();
                const auto& Km = value(k).mat();
                const auto& Vm = value(v).mat();
                const RowMatrix<T> dA = (g.mat() * Vm.transpose()).cwiseProduct(mask);
                if (requires_grad(q)) {
                  auto& gq = grad_buffer(q);
                  gq.mat().noalias() += dA * Km;
                  if (!carry_copy.empty()) {
                    RowMatrix<T> back = g.mat() * carry_copy.mat();
                    for (std::size_t t = 0; t < carry_scale.size(); ++t) gq.mat().row(t) += carry_scale[t] * back.row(t);
                  }
                }
                if (!grad_through_kv) return;
                if (requires_grad(k)) grad_buffer(k).mat().noalias() += dA.transpose() * Qm;
                if (requires_grad(v)) grad_buffer(v).mat().noalias() += W.transpose() * g.mat();
              });
}

template <typename T>
auto GradTape<T>::cross_entropy(Var logits, std::vector<int> targets) -> Var {
  const TensorT& L = value(logits);
  if (L.rows() != targets.size()) throw DimensionError("one target per logit row required");
  const std::size_t V = L.cols();
  TensorT probs(L.shape());
  double total = 0;
  for (std::size_t r = 0; r < L.rows(); ++r) {
    const int tgt = targets[r];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= V) throw IndexError("target out of range");
    auto row = L.row(r);
    double mx = row[0];
    for (auto x : row) mx = std::max(mx, static_cast<double>(x));
    double z = 0;
    for (auto x : row) z += std::exp(x - mx);
    auto p = probs.row(r);
    for (std::size_t c = 0; c < V; ++c) p[c] = static_cast<T>(std::exp(row[c] - mx) / z);
    total += std::log(z) + mx - row[tgt];
  }
  TensorT out({1});
  out[0] = static_cast<T>(total / static_cast<double>(targets.size()));
  return push(std::move(out), any_grad({logits}),
              [this, logits, targets = std::move(targets), probs = std::move(probs)](const TensorT& g) {
                auto& gl = grad_buffer(logits);
                const T scale = g[0] / static_cast<T>(targets.size());
                for (std::size_t r = 0; r < targets.size(); ++r) {
                  auto p = probs.row(r);
                  auto gr = gl.row(r);
                  for (std::size_t c = 0; c < p.size(); ++c) gr[c] += scale * p[c];
                  gr[targets[r]] -= scale;
                }
              });
}

template class GradTape<float>;
template class GradTape<double>;
template RowMatrix<float> causal_decay_mask<float>(std::size_t, double);
template RowMatrix<double> causal_decay_mask<double>(std::size_t, double);

}  // namespace bdh
