#pragma once

#include <vector>

#include "bdh/graph_kernel.hpp"
#include "bdh/sparse_graph.hpp"

namespace bdh {

// Two-layer nonnegative circuits on n + 2d nodes: neurons 0..n-1, then 2d
// synaptic-layer nodes. (He^2 - Hi^2) restricted to the neurons equals D E.
struct NonnegCircuit {
  std::size_t n = 0, d = 0;
  SparseGraph He, Hi;
};

// D is n x d, E is d x n.
NonnegCircuit decompose_nonneg_circuit(const DenseMatrix& D, const DenseMatrix& E);

// Two-hop composition H^2 restricted to the listed nodes (in list order),
// summing over every intermediate node.
SparseGraph square_subgraph(const SparseGraph& H, const std::vector<std::size_t>& V);

// Attention with a sparse synapse graph: values are pushed through
// E' = [relu(E); relu(-E)] onto 2d designated neurons (the first 2d), gs links
// each designated neuron to every neuron, and gy reads those neurons with the
// split decoder. The output equals Dy E sigma x of the dense form.
struct SparseAttention {
  std::size_t n = 0, d = 0;
  SparseGraph gs;          // 2dn edges of weight 1
  DenseMatrix value_prep;  // E', 2d x n
  std::vector<std::size_t> designated;
  SparseGraph gy_e, gy_i;

  // n-vector with E' y on the designated neurons and zero elsewhere.
  std::vector<double> prepare_value(const std::vector<double>& y) const;
};

SparseAttention sparsify_attention_graph(const DenseMatrix& Dy, const DenseMatrix& E);
SparseAttention sparsify_attention_graph(const ModelParams& params);

// Synapse state living on the edges of a SparseAttention gs.
class SparseAttentionState {
 public:
  explicit SparseAttentionState(const SparseAttention& graph);
  // sigma(i,j) <- gamma * sigma(i,j) + prep(y)(i) x(j) on gs edges.
  void observe(const std::vector<double>& key, const std::vector<double>& value, double gamma = 1.0);
  // (gy_e - gy_i) sigma x.
  std::vector<double> read(const std::vector<double>& query) const;
  const std::vector<double>& sigma() const { return sigma_; }

 private:
  const SparseAttention* graph_;
  std::vector<double> sigma_;
};

}  // namespace bdh
