#include "bdh/circuits.hpp"

#include <map>

namespace bdh {

namespace {

// E' = [relu(E); relu(-E)], 2d x n.
DenseMatrix split_encoder(const DenseMatrix& E) {
  const Eigen::Index d = E.rows(), n = E.cols();
  DenseMatrix out(2 * d, n);
  out.topRows(d) = E.cwiseMax(0.0);
  out.bottomRows(d) = (-E).cwiseMax(0.0);
  return out;
}

// D^e = [relu(D), relu(-D)], D^i = [relu(-D), relu(D)], both n x 2d, so that
// (D^e - D^i) E' = D E.
void split_decoder(const DenseMatrix& D, DenseMatrix& De, DenseMatrix& Di) {
  const Eigen::Index n = D.rows(), d = D.cols();
  De.resize(n, 2 * d);
  Di.resize(n, 2 * d);
  De.leftCols(d) = D.cwiseMax(0.0);
  De.rightCols(d) = (-D).cwiseMax(0.0);
  Di.leftCols(d) = (-D).cwiseMax(0.0);
  Di.rightCols(d) = D.cwiseMax(0.0);
}

SparseGraph circuit(const DenseMatrix& Dpart, const DenseMatrix& Ep) {
  const std::size_t n = Dpart.rows(), s2 = Dpart.cols();
  SparseGraph g(n + s2);
  for (std::size_t s = 0; s < s2; ++s) {
    // Skip synaptic nodes that cannot carry anything through.
    const bool has_in = (Dpart.col(s).array() != 0.0).any();
    const bool has_out = (Ep.row(s).array() != 0.0).any();
    if (!has_in || !has_out) continue;
    for (std::size_t i = 0; i < n; ++i)
      if (Dpart(i, s) != 0.0) g.add_edge(i, n + s, Dpart(i, s));
    for (std::size_t j = 0; j < n; ++j)
      if (Ep(s, j) != 0.0) g.add_edge(n + s, j, Ep(s, j));
  }
  return g;
}

}  // namespace

NonnegCircuit decompose_nonneg_circuit(const DenseMatrix& D, const DenseMatrix& E) {
  if (D.cols() != E.rows() || D.rows() != E.cols()) throw DimensionError("need D: n x d and E: d x n");
  DenseMatrix De, Di;
  split_decoder(D, De, Di);
  const DenseMatrix Ep = split_encoder(E);
  return {static_cast<std::size_t>(D.rows()), static_cast<std::size_t>(D.cols()), circuit(De, Ep), circuit(Di, Ep)};
}

SparseGraph square_subgraph(const SparseGraph& H, const std::vector<std::size_t>& V) {
  std::vector<long> local(H.n(), -1);
  for (std::size_t k = 0; k < V.size(); ++k) {
    if (V[k] >= H.n()) throw IndexError("subgraph node out of range");
    if (local[V[k]] >= 0) throw ParameterError("subgraph node listed twice");
    local[V[k]] = static_cast<long>(k);
  }
  std::vector<std::vector<std::pair<std::size_t, double>>> out_edges(H.n());
  for (const auto& e : H.edges()) out_edges[e.i].push_back({e.j, e.w});
  std::map<std::pair<std::size_t, std::size_t>, double> acc;
  for (const auto& first : H.edges()) {
    if (local[first.i] < 0) continue;
    for (const auto& [b, w] : out_edges[first.j])
      if (local[b] >= 0) acc[{std::size_t(local[first.i]), std::size_t(local[b])}] += first.w * w;
  }
  SparseGraph g(V.size());
  for (const auto& [key, w] : acc) g.add_edge(key.first, key.second, w);
  return g;
}

std::vector<double> SparseAttention::prepare_value(const std::vector<double>& y) const {
  if (y.size() != n) throw DimensionError("value length mismatch");
  const Eigen::VectorXd p = value_prep * Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  std::vector<double> out(n, 0.0);
  for (std::size_t s = 0; s < designated.size(); ++s) out[designated[s]] = p[s];
  return out;
}

SparseAttention sparsify_attention_graph(const DenseMatrix& Dy, const DenseMatrix& E) {
  if (Dy.cols() != E.rows() || Dy.rows() != E.cols()) throw DimensionError("need Dy: n x d and E: d x n");
  const std::size_t n = Dy.rows(), d = Dy.cols();
  if (n < 2 * d) throw DimensionError("sparse attention needs n >= 2d designated neurons");
  SparseAttention sa;
  sa.n = n;
  sa.d = d;
  sa.value_prep = split_encoder(E);
  for (std::size_t s = 0; s < 2 * d; ++s) sa.designated.push_back(s);
  sa.gs = SparseGraph(n);
  for (std::size_t s : sa.designated)
    for (std::size_t j = 0; j < n; ++j) sa.gs.add_edge(s, j, 1.0);
  DenseMatrix De, Di;
  split_decoder(Dy, De, Di);
  sa.gy_e = SparseGraph(n);
  sa.gy_i = SparseGraph(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < 2 * d; ++s) {
      if (De(i, s) != 0.0) sa.gy_e.add_edge(i, sa.designated[s], De(i, s));
      if (Di(i, s) != 0.0) sa.gy_i.add_edge(i, sa.designated[s], Di(i, s));
    }
  return sa;
}

SparseAttention sparsify_attention_graph(const ModelParams& params) {
  const auto m = neuron_matrices(params);
  return sparsify_attention_graph(m.Dy, m.E);
}

SparseAttentionState::SparseAttentionState(const SparseAttention& graph)
    : graph_(&graph), sigma_(graph.gs.edge_count(), 0.0) {}

void SparseAttentionState::observe(const std::vector<double>& key, const std::vector<double>& value, double gamma) {
  if (key.size() != graph_->n) throw DimensionError("key length mismatch");
  const auto v = graph_->prepare_value(value);
  const auto& edges = graph_->gs.edges();
  for (std::size_t k = 0; k < edges.size(); ++k)
    sigma_[k] = gamma * sigma_[k] + edges[k].w * v[edges[k].i] * key[edges[k].j];
}

std::vector<double> SparseAttentionState::read(const std::vector<double>& query) const {
  if (query.size() != graph_->n) throw DimensionError("query length mismatch");
  std::vector<double> a(graph_->n, 0.0);
  const auto& edges = graph_->gs.edges();
  for (std::size_t k = 0; k < edges.size(); ++k) a[edges[k].i] += sigma_[k] * query[edges[k].j];
  auto pos = graph_->gy_e.apply(a);
  const auto neg = graph_->gy_i.apply(a);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] -= neg[i];
  return pos;
}

}  // namespace bdh
