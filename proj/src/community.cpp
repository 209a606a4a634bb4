#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "bdh/analysis.hpp"

namespace bdh {

double modularity(const SparseGraph& g, const std::vector<std::size_t>& partition) {
  if (partition.size() != g.n()) throw DimensionError("partition must assign every node");
  g.require_nonnegative("modularity");
  const double w = g.total_weight();
  if (!(w > 0)) return 0.0;
  const std::size_t k = partition.empty() ? 0 : *std::max_element(partition.begin(), partition.end()) + 1;
  std::vector<double> s_out(k, 0.0), s_in(k, 0.0);
  double inside = 0;
  for (const auto& e : g.edges()) {
    s_out[partition[e.i]] += e.w;
    s_in[partition[e.j]] += e.w;
    if (partition[e.i] == partition[e.j]) inside += e.w;
  }
  double null = 0;
  for (std::size_t c = 0; c < k; ++c) null += s_out[c] * s_in[c];
  return inside / w - null / (w * w);
}

namespace {

// Weighted digraph for one Louvain level. Self loops are kept apart since
// they never change a move's gain.
struct Level {
  std::size_t n = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> out, in;
  std::vector<double> s_out, s_in;
  double w = 0;
};

Level make_level(std::size_t n, const std::vector<Edge>& edges) {
  Level L;
  L.n = n;
  L.out.resize(n);
  L.in.resize(n);
  L.s_out.assign(n, 0.0);
  L.s_in.assign(n, 0.0);
  for (const auto& e : edges) {
    L.s_out[e.i] += e.w;
    L.s_in[e.j] += e.w;
    L.w += e.w;
    if (e.i != e.j) {
      L.out[e.i].emplace_back(e.j, e.w);
      L.in[e.j].emplace_back(e.i, e.w);
    }
  }
  return L;
}

double level_q(const Level& L, const std::vector<std::size_t>& comm, const std::vector<Edge>& edges) {
  std::vector<double> so(L.n, 0.0), si(L.n, 0.0);
  double inside = 0;
  for (const auto& e : edges) {
    so[comm[e.i]] += e.w;
    si[comm[e.j]] += e.w;
    if (comm[e.i] == comm[e.j]) inside += e.w;
  }
  double null = 0;
  for (std::size_t c = 0; c < L.n; ++c) null += so[c] * si[c];
  return inside / L.w - null / (L.w * L.w);
}

constexpr double kMinGain = 1e-7;

// Local moves until a pass gains less than kMinGain. Returns true if any node moved.
bool local_moves(const Level& L, const std::vector<Edge>& edges, std::vector<std::size_t>& comm, Rng& rng) {
  std::vector<double> tot_out(L.s_out), tot_in(L.s_in);
  std::vector<std::size_t> order(L.n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> link(L.n, 0.0);
  std::vector<std::size_t> touched;
  bool moved_any = false;
  double q = level_q(L, comm, edges);
  const double w2 = L.w * L.w;
  for (;;) {
    bool moved = false;
    for (std::size_t i : order) {
      touched.clear();
      auto visit = [&](std::size_t j, double wt) {
        const std::size_t c = comm[j];
        if (link[c] == 0.0) touched.push_back(c);
        link[c] += wt;
      };
      for (auto [j, wt] : L.out[i]) visit(j, wt);
      for (auto [j, wt] : L.in[i]) visit(j, wt);
      const std::size_t old = comm[i];
      tot_out[old] -= L.s_out[i];
      tot_in[old] -= L.s_in[i];
      auto gain = [&](std::size_t c) {
        return link[c] / L.w - (L.s_out[i] * tot_in[c] + L.s_in[i] * tot_out[c]) / w2;
      };
      std::size_t best = old;
      double best_gain = gain(old);
      for (std::size_t c : touched) {
        const double gc = gain(c);
        if (gc > best_gain + 1e-15) {
          best_gain = gc;
          best = c;
        }
      }
      for (std::size_t c : touched) link[c] = 0.0;
      link[old] = 0.0;
      comm[i] = best;
      tot_out[best] += L.s_out[i];
      tot_in[best] += L.s_in[i];
      if (best != old) moved = moved_any = true;
    }
    const double nq = level_q(L, comm, edges);
    if (!moved || nq - q < kMinGain) break;
    q = nq;
  }
  return moved_any;
}

void renumber(std::vector<std::size_t>& comm) {
  std::unordered_map<std::size_t, std::size_t> ids;
  for (auto& c : comm) c = ids.emplace(c, ids.size()).first->second;
}

std::vector<std::size_t> louvain_once(const SparseGraph& g, Rng& rng) {
  std::vector<std::size_t> assign(g.n());
  std::iota(assign.begin(), assign.end(), 0);
  std::vector<Edge> edges = g.edges();
  std::size_t n = g.n();
  for (;;) {
    Level L = make_level(n, edges);
    std::vector<std::size_t> comm(n);
    std::iota(comm.begin(), comm.end(), 0);
    if (!local_moves(L, edges, comm, rng)) break;
    renumber(comm);
    const std::size_t k = *std::max_element(comm.begin(), comm.end()) + 1;
    for (auto& a : assign) a = comm[a];
    std::unordered_map<std::uint64_t, double> merged;
    for (const auto& e : edges) merged[static_cast<std::uint64_t>(comm[e.i]) * k + comm[e.j]] += e.w;
    edges.clear();
    for (const auto& [key, wt] : merged) edges.push_back({key / k, key % k, wt});
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    if (k == n) break;
    n = k;
  }
  renumber(assign);
  return assign;
}

}  // namespace

LouvainResult louvain(const SparseGraph& g, std::size_t n_seeds, std::uint64_t seed) {
  if (g.n() == 0) throw ParameterError("louvain needs a nonempty graph");
  g.require_nonnegative("louvain");
  LouvainResult best;
  best.partition.resize(g.n());
  std::iota(best.partition.begin(), best.partition.end(), 0);
  best.Q = modularity(g, best.partition);
  if (!(g.total_weight() > 0)) return best;
  for (std::size_t s = 0; s < std::max<std::size_t>(n_seeds, 1); ++s) {
    Rng rng(seed + s);
    auto part = louvain_once(g, rng);
    const double q = modularity(g, part);
    if (q > best.Q) best = {std::move(part), q};
  }
  return best;
}

BaselineGraphs random_baseline_graphs(std::size_t n, std::size_t m, std::size_t d, std::uint64_t seed) {
  const std::uint64_t cells = static_cast<std::uint64_t>(n) * n;
  if (m > cells) throw ParameterError("m exceeds n^2");
  if (d == 0) throw ParameterError("d must be positive");
  Rng rng(seed);
  BaselineGraphs out;

  out.gnm = SparseGraph(n);
  std::vector<std::uint64_t> picked;
  if (2 * m > cells) {
    picked.resize(cells);
    std::iota(picked.begin(), picked.end(), 0);
    std::shuffle(picked.begin(), picked.end(), rng);
    picked.resize(m);
  } else {
    std::unordered_set<std::uint64_t> seen;
    std::uniform_int_distribution<std::uint64_t> cell(0, cells - 1);
    while (picked.size() < m)
      if (auto c = cell(rng); seen.insert(c).second) picked.push_back(c);
  }
  std::sort(picked.begin(), picked.end());
  for (auto c : picked) out.gnm.add_edge(c / n, c % n, 1.0);

  out.lowrank = SparseGraph(n);
  if (m == 0) {
    out.beta_lowrank = std::numeric_limits<double>::infinity();
    return out;
  }
  std::normal_distribution<float> normal(0.0f, 1.0f);
  RowMatrix<float> P1(n, d), P2(n, d);
  for (Eigen::Index i = 0; i < P1.size(); ++i) P1.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < P2.size(); ++i) P2.data()[i] = normal(rng);
  RowMatrix<float> M = P1 * P2.transpose();
  std::vector<float> vals(M.data(), M.data() + M.size());
  std::nth_element(vals.begin(), vals.begin() + (m - 1), vals.end(), std::greater<float>());
  const float beta = vals[m - 1];
  if (!(beta > 0)) throw ParameterError("m too large for a positive low-rank threshold");
  out.beta_lowrank = beta;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (M(i, j) >= beta) out.lowrank.add_edge(i, j, M(i, j));
  return out;
}

ModularityReport modularity_report(const DenseMatrix& g, double beta, std::size_t lowrank_d, std::uint64_t seed,
                                   std::size_t n_seeds) {
  ModularityReport r;
  r.beta = beta;
  const auto graph = threshold_graph(g, beta);
  r.m = graph.edge_count();
  if (r.m == 0) throw ParameterError("threshold leaves no edges");
  auto best = louvain(graph, n_seeds, seed);
  r.Q = best.Q;
  r.partition = std::move(best.partition);
  const auto base = random_baseline_graphs(graph.n(), r.m, lowrank_d, seed);
  r.Q_gnm = louvain(base.gnm, n_seeds, seed).Q;
  r.Q_lowrank = louvain(base.lowrank, n_seeds, seed).Q;
  return r;
}

namespace {

std::vector<LogBin> log_bins(const std::vector<std::size_t>& degree) {
  const std::size_t mx = degree.empty() ? 0 : *std::max_element(degree.begin(), degree.end());
  std::vector<LogBin> bins{{0, 1, 0}};
  for (std::size_t lo = 1; lo <= mx; lo *= 2) bins.push_back({lo, lo * 2, 0});
  for (std::size_t k : degree) {
    std::size_t b = 0;
    while (k >= bins[b].hi) ++b;
    ++bins[b].count;
  }
  return bins;
}

}  // namespace

DegreeDistribution degree_distribution(const SparseGraph& g) {
  DegreeDistribution d;
  d.in_degree.assign(g.n(), 0);
  d.out_degree.assign(g.n(), 0);
  // Edge (i, j) carries j's signal to i: it leaves j and enters i.
  for (const auto& e : g.edges()) {
    ++d.out_degree[e.j];
    ++d.in_degree[e.i];
  }
  d.in_hist = log_bins(d.in_degree);
  d.out_hist = log_bins(d.out_degree);
  return d;
}

}  // namespace bdh
