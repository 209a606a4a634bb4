#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "bdh/analysis.hpp"

using namespace bdh;

namespace {

ModelConfig small_config(std::size_t n = 32, std::size_t d = 8, std::size_t heads = 2, std::size_t layers = 3) {
  ModelConfig c;
  c.n = n;
  c.d = d;
  c.heads = heads;
  c.layers = layers;
  c.vocab_size = 256;
  c.dropout = 0.0;
  return c;
}

std::vector<int> random_tokens(std::size_t T, Rng& rng) {
  std::vector<int> t(T);
  for (auto& x : t) x = static_cast<int>(rng() % 256);
  return t;
}

// Undirected graph stored with both directions.
SparseGraph undirected(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  SparseGraph g(n);
  for (auto [i, j] : pairs) {
    g.add_edge(i, j, 1.0);
    g.add_edge(j, i, 1.0);
  }
  return g;
}

SparseGraph planted_sbm(std::size_t n, std::size_t blocks, double p_in, double p_out, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::bernoulli_distribution in(p_in), out(p_out);
  const std::size_t size = n / blocks;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (i / size == j / size ? in(rng) : out(rng)) pairs.emplace_back(i, j);
  return undirected(n, pairs);
}

// Best agreement with the planted blocks over community relabelings (majority vote).
double block_agreement(const std::vector<std::size_t>& part, std::size_t blocks) {
  const std::size_t n = part.size(), size = n / blocks;
  std::map<std::size_t, std::map<std::size_t, std::size_t>> votes;
  for (std::size_t i = 0; i < n; ++i) ++votes[part[i]][i / size];
  // Each found community maps to its majority block; blocks may not be shared.
  std::set<std::size_t> used;
  std::size_t agree = 0;
  for (auto& [comm, v] : votes) {
    auto best = std::max_element(v.begin(), v.end(), [](auto& a, auto& b) { return a.second < b.second; });
    if (used.insert(best->first).second) agree += best->second;
  }
  return static_cast<double>(agree) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("feed-forward graph blocks match slicing of the full product") {
  auto p = init_params<float>(small_config(), 1);
  const auto& c = p.config;
  const std::size_t N = c.neurons_per_head();
  for (Decoder which : {Decoder::X, Decoder::Y}) {
    const auto& dec = which == Decoder::X ? p.decoder_x : p.decoder_y;
    DenseMatrix Dfull(c.n, c.d), Efull(c.d, c.n);
    for (std::size_t h = 0; h < c.heads; ++h)
      for (std::size_t a = 0; a < c.d; ++a)
        for (std::size_t k = 0; k < N; ++k) Dfull(h * N + k, a) = dec.slice(h)(a, k);
    for (std::size_t i = 0; i < c.n; ++i)
      for (std::size_t a = 0; a < c.d; ++a) Efull(a, i) = p.encoder(i, a);
    const DenseMatrix full = Dfull * Efull;
    double block_sum = 0;
    for (std::size_t a = 0; a < c.heads; ++a)
      for (std::size_t b = 0; b < c.heads; ++b) {
        const auto g = extract_ffn_graph(p, a, b, which);
        CHECK((g - full.block(a * N, b * N, N, N)).cwiseAbs().maxCoeff() < 1e-6);
        block_sum += g.sum();
      }
    CHECK(block_sum == doctest::Approx(full.sum()).epsilon(1e-9));
  }
  CHECK_THROWS_AS(extract_ffn_graph(p, 2, 0, Decoder::X), IndexError);
  CHECK_THROWS_AS(extract_ffn_graph(p, 0, 5, Decoder::Y), IndexError);
}

TEST_CASE("identity-like parameters give a diagonal block") {
  auto c = small_config(8, 4, 2, 1);
  auto p = init_params<float>(c, 2);
  p.decoder_x.fill(0.0f);
  p.encoder.fill(0.0f);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t k = 0; k < 4; ++k) {
      auto s = p.decoder_x.slice(h);
      s(k, k) = 1.0f;
      p.decoder_x.set_slice(h, s);
      p.encoder(h * 4 + k, k) = 1.0f;
    }
  const auto g = extract_ffn_graph(p, 0, 1, Decoder::X);
  CHECK(g.isApprox(DenseMatrix::Identity(4, 4)));
}

TEST_CASE("thresholding") {
  DenseMatrix m(3, 3);
  m << 0.0, 0.5, 2.0, 1.0, 0.0, 3.0, 0.0, 0.0, 0.0;
  CHECK(threshold_graph(m, 0.0).edge_count() == 4);
  CHECK(threshold_graph(m, 1.0).edge_count() == 3);
  CHECK(threshold_graph(m, 3.5).edge_count() == 0);
  CHECK_THROWS_AS(threshold_graph(m, -1.0), ParameterError);
  CHECK_THROWS_AS(threshold_graph(DenseMatrix::Ones(2, 3), 0.0), DimensionError);
}

TEST_CASE("element histogram and its symmetric part") {
  Rng rng(3);
  std::normal_distribution<double> normal;
  DenseMatrix sym(50, 40);
  for (Eigen::Index i = 0; i < 1000; ++i) {
    const double x = normal(rng);
    sym.data()[2 * i] = x;
    sym.data()[2 * i + 1] = -x;
  }
  auto h = element_histogram(sym, 20);
  CHECK(h.total() == 2000);
  CHECK(h.skew_mass() == 0);

  DenseMatrix skewed = sym.cwiseAbs();
  auto hs = element_histogram(skewed, 21);
  CHECK(hs.counts.size() % 2 == 0);
  CHECK(hs.total() == 2000);
  for (std::size_t k = 0; k < hs.counts.size(); ++k) {
    CHECK(hs.skew[k] >= 0);
    CHECK(hs.symmetric[k] + hs.skew[k] == hs.counts[k]);
  }
  CHECK(hs.skew_mass() > 1900);

  DenseMatrix g(400, 400);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  auto hn = element_histogram(g, 40);
  CHECK(hn.skew_mass() < 0.02 * hn.total());
  CHECK_THROWS_AS(element_histogram(g, 9), ParameterError);
}

TEST_CASE("modularity by hand") {
  // Two disjoint 4-cliques.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) pairs.emplace_back(4 * b + i, 4 * b + j);
  auto g = undirected(8, pairs);
  CHECK(modularity(g, {0, 0, 0, 0, 1, 1, 1, 1}) == doctest::Approx(0.5));
  CHECK(modularity(g, std::vector<std::size_t>(8, 0)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(modularity(g, {0, 1}), DimensionError);

  // A directed example evaluated term by term: edges 0->1 (2), 1->0 (1), 1->2 (1), partition {0,1},{2}.
  SparseGraph d(3, {{0, 1, 2.0}, {1, 0, 1.0}, {1, 2, 1.0}});
  // w = 4. {0,1},{2}: inside 3, S_out = {4, 0}, S_in = {3, 1}: Q = 3/4 - 12/16.
  CHECK(modularity(d, {0, 0, 1}) == doctest::Approx(0.0));
  // {0},{1,2}: inside 1, S_out = {2, 2}, S_in = {1, 3}: Q = 1/4 - 8/16.
  CHECK(modularity(d, {0, 1, 1}) == doctest::Approx(-0.25));

  Rng rng(4);
  auto base = random_baseline_graphs(300, 3000, 8, 5);
  std::vector<std::size_t> random_part(300);
  for (auto& c : random_part) c = rng() % 5;
  CHECK(std::abs(modularity(base.gnm, random_part)) < 0.05);
}

TEST_CASE("louvain recovers a planted partition") {
  Rng rng(5);
  auto g = planted_sbm(400, 4, 0.2, 0.01, rng);
  auto r = louvain(g, 5, 1);
  CHECK(r.Q > 0.5);
  CHECK(block_agreement(r.partition, 4) >= 0.95);
  CHECK(r.Q == doctest::Approx(modularity(g, r.partition)));

  std::vector<std::size_t> random_part(400);
  for (auto& c : random_part) c = rng() % 4;
  CHECK(r.Q >= modularity(g, random_part));
  std::vector<std::size_t> singletons(400);
  std::iota(singletons.begin(), singletons.end(), 0);
  CHECK(r.Q >= modularity(g, singletons));
}

TEST_CASE("louvain keeps disconnected components apart") {
  // Three paths of five nodes.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i) pairs.emplace_back(5 * c + i, 5 * c + i + 1);
  auto g = undirected(15, pairs);
  auto r = louvain(g, 3, 0);
  std::map<std::size_t, std::set<std::size_t>> comps;
  for (std::size_t i = 0; i < 15; ++i) comps[r.partition[i]].insert(i / 5);
  for (auto& [comm, cs] : comps) CHECK(cs.size() == 1);
  CHECK(comps.size() >= 3);
  CHECK_THROWS_AS(louvain(SparseGraph(0)), ParameterError);
}

TEST_CASE("random baselines") {
  auto b = random_baseline_graphs(200, 800, 8, 6);
  CHECK(b.gnm.edge_count() == 800);
  CHECK_NOTHROW(b.gnm.validate());
  CHECK(b.lowrank.edge_count() >= 800);
  CHECK(b.lowrank.edge_count() <= 802);
  CHECK(b.beta_lowrank > 0);
  for (const auto& e : b.lowrank.edges()) CHECK(e.w >= b.beta_lowrank);
  auto dense = random_baseline_graphs(10, 30, 2, 1);
  CHECK(dense.gnm.edge_count() == 30);
  CHECK_THROWS_AS(random_baseline_graphs(10, 90, 2, 1), ParameterError);
  CHECK_THROWS_AS(random_baseline_graphs(10, 101, 2, 1), ParameterError);
}

TEST_CASE("degree distributions") {
  // 3-regular digraph on 10 nodes: i -> i+1, i+2, i+3.
  SparseGraph reg(10);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t s = 1; s <= 3; ++s) reg.add_edge((i + s) % 10, i, 1.0);
  auto d = degree_distribution(reg);
  for (std::size_t k : d.in_degree) CHECK(k == 3);
  for (std::size_t k : d.out_degree) CHECK(k == 3);
  std::size_t nonempty = 0;
  for (const auto& b : d.in_hist)
    if (b.count) {
      ++nonempty;
      CHECK(b.count == 10);
      CHECK((b.lo <= 3 && 3 < b.hi));
    }
  CHECK(nonempty == 1);

  // Star: hub 0 sends to every leaf.
  SparseGraph star(9);
  for (std::size_t i = 1; i < 9; ++i) star.add_edge(i, 0, 1.0);
  auto s = degree_distribution(star);
  CHECK(s.out_degree[0] == 8);
  CHECK(s.in_degree[0] == 0);
  for (std::size_t i = 1; i < 9; ++i) CHECK((s.in_degree[i] == 1 && s.out_degree[i] == 0));

  auto base = random_baseline_graphs(100, 700, 4, 2);
  auto dd = degree_distribution(base.gnm);
  CHECK(std::accumulate(dd.in_degree.begin(), dd.in_degree.end(), std::size_t{0}) == 700);
  CHECK(std::accumulate(dd.out_degree.begin(), dd.out_degree.end(), std::size_t{0}) == 700);
  std::size_t binned = 0;
  for (const auto& b : dd.out_hist) binned += b.count;
  CHECK(binned == 100);
}

namespace {

double exhaustive_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
  return u;
}

// P(U >= observed) over all relabelings of the pooled sample.
double exact_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> all(a);
  all.insert(all.end(), b.begin(), b.end());
  const std::size_t N = all.size(), n1 = a.size();
  const double u_obs = exhaustive_u(a, b);
  std::vector<bool> pick(N, false);
  std::fill(pick.begin(), pick.begin() + n1, true);
  double hit = 0, total = 0;
  do {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < N; ++i) (pick[i] ? x : y).push_back(all[i]);
    total += 1;
    hit += exhaustive_u(x, y) >= u_obs - 1e-12;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return hit / total;
}

}  // namespace

TEST_CASE("Mann-Whitney U against exhaustive counting") {
  Rng rng(7);
  std::uniform_int_distribution<int> small(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(1 + rng() % 8), b(1 + rng() % 8);
    for (auto& v : a) v = small(rng);  // plenty of ties
    for (auto& v : b) v = small(rng);
    const auto r = mann_whitney_u(a, b);
    CHECK(r.U == doctest::Approx(exhaustive_u(a, b)));
    CHECK(r.U_max == a.size() * b.size());
    CHECK((r.U >= 0 && r.U <= r.U_max));
    CHECK((r.rank_biserial >= -1 && r.rank_biserial <= 1));
  }
  auto simple = mann_whitney_u({1, 2}, {0});
  CHECK(simple.U == 2);
  CHECK(simple.rank_biserial == 1);

  std::vector<double> hi(50), lo(50);
  for (int i = 0; i < 50; ++i) {
    hi[i] = 100 + i;
    lo[i] = i;
  }
  auto sep = mann_whitney_u(hi, lo);
  CHECK(sep.U == 2500);
  CHECK(sep.U_max == 2500);
  CHECK(sep.p_one_sided < 1e-14);

  auto same = mann_whitney_u({3, 1, 2}, {2, 3, 1});
  CHECK(same.U == 4.5);
  CHECK(same.rank_biserial == 0);
  auto flat = mann_whitney_u({1, 1, 1}, {1, 1});
  CHECK(flat.p_one_sided == 0.5);
  CHECK(flat.rank_biserial == 0);
  CHECK_THROWS_AS(mann_whitney_u({}, {1.0}), ParameterError);
}

TEST_CASE("Mann-Whitney normal approximation tracks the permutation p-value") {
  Rng rng(8);
  std::normal_distribution<double> normal;
  double worst = 0;
  for (std::size_t n1 = 4; n1 <= 10; n1 += 3)
    for (std::size_t n2 = 4; n2 <= 10; n2 += 3)
      for (int trial = 0; trial < 3; ++trial) {
        std::vector<double> a(n1), b(n2);
        for (auto& v : a) v = normal(rng) + 0.7;
        for (auto& v : b) v = normal(rng);
        worst = std::max(worst, std::abs(mann_whitney_u(a, b).p_one_sided - exact_p(a, b)));
      }
  CHECK(worst <= 0.02);
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 45}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(spearman({1}, {1}), ParameterError);
}

TEST_CASE("sigma reconstruction reproduces the attention read") {
  for (double gamma : {1.0, 0.8}) {
    auto c = small_config(32, 8, 2, 3);
    if (gamma < 1) c.alibi_gamma = {gamma, 0.95};
    auto p = init_params<float>(c, 9);
    Rng rng(10);
    const auto tokens = random_tokens(12, rng);
    auto [logits, trace] = forward_parallel<float>(p, tokens);
    for (std::size_t l = 0; l < c.layers; ++l)
      for (std::size_t h = 0; h < c.heads; ++h) {
        const auto K = head_keys(trace, p, l, h);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
          const auto rho = reconstruct_state(trace, p, l, h, t, trace.v[l]);
          const Eigen::VectorXd a = rho * K.mat().row(t).transpose().cast<double>();
          const auto& att = trace.attention[l * c.heads + h];
          for (std::size_t k = 0; k < c.d; ++k) CHECK(std::abs(a[k] - att(t, k)) < 1e-5);
        }
      }
    // Neuron-space sigma read against a direct weighted sum of past y.
    const std::size_t N = c.neurons_per_head();
    for (std::size_t h = 0; h < c.heads; ++h) {
      const auto K = head_keys(trace, p, 2, h);
      const std::size_t t = 9;
      const auto sigma = reconstruct_sigma(trace, p, 2, h, t);
      const Eigen::VectorXd read = sigma * K.mat().row(t).transpose().cast<double>();
      Eigen::VectorXd direct = Eigen::VectorXd::Zero(N);
      for (std::size_t tau = 0; tau < t; ++tau) {
        const double w = std::pow(c.gamma(h), double(t - tau)) * K.mat().row(tau).cast<double>().dot(K.mat().row(t).cast<double>());
        for (std::size_t i = 0; i < N; ++i) direct[i] += w * trace.y[1](tau, h * N + i);
      }
      CHECK((read - direct).cwiseAbs().maxCoeff() < 1e-5 * (1 + direct.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("sigma reconstruction edge cases") {
  auto c = small_config();
  auto p = init_params<float>(c, 11);
  Rng rng(12);
  const auto tokens = random_tokens(6, rng);
  auto [logits, trace] = forward_parallel<float>(p, tokens);
  const auto one = reconstruct_sigma(trace, p, 1, 0, 1);
  Eigen::JacobiSVD<DenseMatrix> svd(one);
  const auto sv = svd.singularValues();
  CHECK(sv[1] <= 1e-6 * std::max(1.0, sv[0]));
  CHECK(reconstruct_sigma(trace, p, 1, 0, 0).cwiseAbs().maxCoeff() == 0);
  CHECK_THROWS_AS(reconstruct_sigma(trace, p, 1, 0, 7), IndexError);
  CHECK_THROWS_AS(reconstruct_sigma(trace, p, 0, 0, 3), IndexError);
  CHECK_THROWS_AS(reconstruct_sigma(trace, p, 1, 2, 3), IndexError);

  auto zero = trace;
  for (auto& y : zero.y) y.fill(0.0f);
  CHECK(reconstruct_sigma(zero, p, 2, 1, 6).cwiseAbs().maxCoeff() == 0);

  DenseMatrix m(2, 2);
  m << -1, 0.5, 0.05, 2;
  const auto pos = positive_part(m, 0.1);
  CHECK(pos(0, 0) == 0);
  CHECK(pos(1, 0) == 0);
  CHECK(pos(0, 1) == 0.5);
}

TEST_CASE("synapse probe follows the full reconstruction") {
  auto c = small_config(32, 8, 2, 3);
  c.alibi_gamma = {0.9, 1.0};
  auto p = init_params<float>(c, 13);
  Rng rng(14);
  const auto tokens = random_tokens(10, rng);
  auto [logits, trace] = forward_parallel<float>(p, tokens);
  for (Synapse s : {Synapse{1, 0, 3, 7}, Synapse{2, 1, 15, 0}, Synapse{1, 1, 5, 5}}) {
    auto tr = probe_synapse(p, tokens, s);
    REQUIRE(tr.value.size() == tokens.size());
    CHECK(tr.tokens == tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const double full = reconstruct_sigma(trace, p, s.layer, s.head, t + 1)(s.i, s.j);
      CHECK(std::abs(tr.value[t] - full) < 1e-6 * (1 + std::abs(full)));
    }
  }
  auto zero = trace;
  zero.y[0].fill(0.0f);
  auto flat = probe_synapse(zero, p, tokens, {1, 0, 3, 7});
  for (double v : flat.value) CHECK(v == 0);
  CHECK_THROWS_AS(probe_synapse(p, tokens, {1, 0, 16, 0}), IndexError);
}

namespace {

// Background activity everywhere except neuron 0 of y (layer 0) and neuron 5
// of x (layer 1), which fire together only at a marker position.
ActivationTrace planted_trace(const ModelConfig& c, std::size_t T, bool marker, Rng& rng) {
  ActivationTrace t;
  std::bernoulli_distribution on(0.4);
  std::uniform_real_distribution<float> val(0.1f, 1.0f);
  for (std::size_t l = 0; l < c.layers; ++l) {
    Tensor x({T, c.n}), y({T, c.n});
    for (std::size_t r = 0; r < T; ++r)
      for (std::size_t k = 0; k < c.n; ++k) {
        if (on(rng)) x(r, k) = val(rng);
        if (on(rng)) y(r, k) = val(rng);
      }
    t.x.push_back(x);
    t.y.push_back(y);
  }
  for (std::size_t r = 0; r < T; ++r) {
    t.y[0](r, 0) = 0;
    t.x[1](r, 5) = 0;
  }
  if (marker) {
    const std::size_t r = rng() % T;
    for (std::size_t k = 0; k < c.n; ++k) {
      t.y[0](r, k) = 0;
      t.x[1](r, k) = 0;
    }
    t.y[0](r, 0) = 1;
    t.x[1](r, 5) = 1;
  }
  return t;
}

}  // namespace

TEST_CASE("concept synapse search") {
  auto c = small_config(16, 4, 1, 2);
  auto p = init_params<float>(c, 15);
  p.rope_freqs.fill(0.0f);
  Rng rng(16);
  std::vector<ActivationTrace> pos, neg;
  for (int i = 0; i < 12; ++i) {
    pos.push_back(planted_trace(c, 10, true, rng));
    neg.push_back(planted_trace(c, 10, false, rng));
  }
  auto found = find_concept_synapses(p, pos, neg, 5);
  REQUIRE(found.size() == 5);
  CHECK(found[0].synapse == Synapse{1, 0, 0, 5});
  CHECK(found[0].test.rank_biserial == 1.0);
  CHECK(found[1].test.rank_biserial < 1.0);

  auto null = find_concept_synapses(p, pos, pos, 10);
  for (const auto& r : null) CHECK(r.test.rank_biserial <= 0.2);
  CHECK(find_concept_synapses(p, pos, neg, 0).empty());
  CHECK_THROWS_AS(find_concept_synapses(p, pos, {}, 3), ParameterError);

  auto real = init_params<float>(small_config(), 17);
  auto texts = find_concept_synapses(real, std::vector<std::string>{"the euro", "a dollar"}, std::vector<std::string>{"a cat", "the dog"}, 3, 500);
  CHECK(texts.size() == 3);
  for (std::size_t k = 1; k < texts.size(); ++k) CHECK(texts[k - 1].test.rank_biserial >= texts[k].test.rank_biserial);
}

TEST_CASE("sparsity trace") {
  auto c = small_config();
  auto p = init_params<float>(c, 18);
  Rng rng(19);
  auto [logits, trace] = forward_parallel<float>(p, random_tokens(5, rng));
  auto s = sparsity_trace(trace, p, 8);
  REQUIRE(s.fraction.size() == 5);
  REQUIRE(s.by_bucket.size() == 5);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t l = 0; l < c.layers; ++l) {
      CHECK((s.fraction[t][l] >= 0 && s.fraction[t][l] <= 1));
      const auto row = trace.y[l].row(t);
      const auto nz = std::count_if(row.begin(), row.end(), [](float v) { return v > 0; });
      CHECK(s.fraction[t][l] == doctest::Approx(double(nz) / c.n));
      for (double b : s.by_bucket[t][l]) CHECK((b >= 0 && b <= 1));
    }
  auto zero = trace;
  for (auto& y : zero.y) y.fill(0.0f);
  for (auto& row : sparsity_trace(zero, p).fraction)
    for (double f : row) CHECK(f == 0);
  auto dense = trace;
  for (auto& y : dense.y) y.fill(0.5f);
  auto full = sparsity_trace(dense, p, 8);
  for (auto& row : full.fraction)
    for (double f : row) CHECK(f == 1);
  // Buckets partition the neurons, so a dense layer is dense in every populated bucket.
  for (double b : full.by_bucket[0][0]) CHECK((b == 0 || b == 1));
}

TEST_CASE("Markov low-rank propagation") {
  CHECK(markov_lowrank_experiment(64, 4, 64, 1) < 1e-6);
  CHECK(markov_lowrank_experiment(64, 4, 80, 1) < 1e-6);
  double small = 0, large = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    small += markov_lowrank_experiment(256, 4, 16, s);
    large += markov_lowrank_experiment(256, 4, 128, s);
  }
  CHECK(large < small);
  CHECK(markov_lowrank_experiment(512, 4, 128, 3, LowRankVariant::Linear) >
        markov_lowrank_experiment(512, 4, 128, 3, LowRankVariant::ReluBias));
  CHECK_THROWS_AS(markov_lowrank_experiment(16, 0, 8, 1), ParameterError);
  CHECK_THROWS_AS(markov_lowrank_experiment(16, 2, 1, 1), ParameterError);
}

TEST_CASE("selective activation estimates the overlap ratio") {
  const std::size_t n = 4096, d = 256;
  const double bound = 4 * std::sqrt(std::log(double(n)) / d);
  auto full = fscore_experiment(100, 100, 100, n, d, 1);
  CHECK(full.rho == 1.0);
  CHECK(std::abs(full.w - 1.0) <= bound);
  int ok = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto e = fscore_experiment(200, 300, 0, n, d, s);
    CHECK(e.rho == 0.0);
    ok += std::abs(e.w) <= bound;
  }
  CHECK(ok >= 95);
  auto part = fscore_experiment(400, 100, 50, n, d, 3);
  CHECK(part.rho == doctest::Approx(std::sqrt(50.0 / 400 * 50.0 / 100)));
  CHECK_THROWS_AS(fscore_experiment(10, 10, 11, n, d, 1), ParameterError);
  CHECK_THROWS_AS(fscore_experiment(3000, 3000, 100, n, d, 1), ParameterError);
}

TEST_CASE("linear attention capacity") {
  CHECK(attention_capacity_experiment(256, 16, 1, 1) < 1e-6);
  CHECK(attention_capacity_experiment(256, 16, 200, 2, KeyMode::Orthogonal) < 1e-5);
  double root = 0, full = 0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    root += attention_capacity_experiment(1024, 32, 32, s);
    full += attention_capacity_experiment(1024, 32, 1024, s);
  }
  CHECK(root < full);
  CHECK_THROWS_AS(attention_capacity_experiment(16, 4, 17, 1, KeyMode::Orthogonal), ParameterError);
}

TEST_CASE("LSH bucketing") {
  Rng rng(20);
  std::normal_distribution<double> normal;
  const std::size_t n = 512, a = 16;
  double near_overlap = 0, far_overlap = 0;
  for (int trial = 0; trial < 100; ++trial) {
    DenseMatrix lambdas(n, a);
    for (Eigen::Index i = 0; i < lambdas.size(); ++i) lambdas.data()[i] = normal(rng);
    std::vector<double> v(a), w(a), u(a);
    for (auto& x : v) x = normal(rng);
    for (auto& x : u) x = normal(rng);
    Eigen::Map<Eigen::VectorXd> V(v.data(), a), U(u.data(), a);
    V.normalize();
    U -= U.dot(V) * V;
    U.normalize();
    // w at cosine 0.95 from v; u orthogonal to v.
    Eigen::Map<Eigen::VectorXd>(w.data(), a) = 0.95 * V + std::sqrt(1 - 0.95 * 0.95) * U;
    const auto bv = lsh_bucketize(v, lambdas, 0.5), bw = lsh_bucketize(w, lambdas, 0.5),
               bu = lsh_bucketize(u, lambdas, 0.5);
    std::vector<double> neg(v);
    for (auto& x : neg) x = -x;
    const auto bn = lsh_bucketize(neg, lambdas, 0.5);
    double self = 0, flip = 0, count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK((bv[i] == 0 || bv[i] == 1));
      self += bv[i] * bv[i];
      count += bv[i] != 0;
      flip += bv[i] * bn[i];
      near_overlap += bv[i] * bw[i];
      far_overlap += bv[i] * bu[i];
    }
    CHECK(self == count);
    CHECK(flip == 0);
  }
  CHECK(near_overlap > far_overlap);
  CHECK_THROWS_AS(lsh_bucketize({1.0, 2.0}, DenseMatrix::Ones(3, 3), 0.0), DimensionError);
}
