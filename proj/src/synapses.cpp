#include <algorithm>
#include <cmath>
#include <tuple>

#include "bdh/analysis.hpp"

namespace bdh {

namespace {

void check_layer_head(const ActivationTrace& trace, const ModelParams& params, std::size_t layer, std::size_t head) {
  if (layer >= trace.x.size() || layer >= params.config.layers) throw IndexError("layer out of range");
  if (head >= params.config.heads) throw IndexError("head out of range");
  if (trace.x[layer].cols() != params.config.n) throw DimensionError("trace does not match the model width");
}

// Columns [head*N, (head+1)*N) of m.
Tensor head_block(const Tensor& m, std::size_t head, std::size_t N) {
  Tensor out({m.rows(), N});
  out.mat() = m.mat().middleCols(static_cast<Eigen::Index>(head * N), static_cast<Eigen::Index>(N));
  return out;
}

const Tensor& y_before(const ActivationTrace& trace, std::size_t layer) {
  if (layer == 0) throw IndexError("sigma needs layer >= 1 (the first layer has no y below it)");
  return trace.y[layer - 1];
}

}  // namespace

Tensor head_keys(const ActivationTrace& trace, const ModelParams& params, std::size_t layer, std::size_t head) {
  check_layer_head(trace, params, layer, head);
  const auto x = head_block(trace.x[layer], head, params.config.neurons_per_head());
  std::vector<std::int64_t> pos(x.rows());
  for (std::size_t r = 0; r < pos.size(); ++r) pos[r] = trace.start + static_cast<std::int64_t>(r);
  return RotationTable<float>(pos, params.rope_freqs.slice(head)).apply(x, false);
}

DenseMatrix reconstruct_state(const ActivationTrace& trace, const ModelParams& params, std::size_t layer,
                              std::size_t head, std::size_t t, const Tensor& values) {
  check_layer_head(trace, params, layer, head);
  if (t > trace.tokens()) throw IndexError("t is beyond the trace");
  if (values.rows() < t) throw DimensionError("values must have a row per token");
  const auto K = head_keys(trace, params, layer, head);
  const double gamma = params.config.gamma(head);
  const auto T = static_cast<Eigen::Index>(t);
  DenseMatrix W = values.mat().topRows(T).cast<double>();
  double w = gamma;
  for (Eigen::Index tau = T; tau-- > 0;) {
    W.row(tau) *= w;
    w *= gamma;
  }
  return W.transpose() * K.mat().topRows(T).cast<double>();
}

DenseMatrix reconstruct_sigma(const ActivationTrace& trace, const ModelParams& params, std::size_t layer,
                              std::size_t head, std::size_t t) {
  check_layer_head(trace, params, layer, head);
  const auto y = head_block(y_before(trace, layer), head, params.config.neurons_per_head());
  return reconstruct_state(trace, params, layer, head, t, y);
}

DenseMatrix positive_part(const DenseMatrix& sigma, double threshold) {
  return (sigma.array() > threshold).select(sigma, 0.0);
}

SynapseTrace probe_synapse(const ActivationTrace& trace, const ModelParams& params, const std::vector<int>& tokens,
                           const Synapse& s) {
  check_layer_head(trace, params, s.layer, s.head);
  const std::size_t N = params.config.neurons_per_head();
  if (s.i >= N || s.j >= N) throw IndexError("synapse neuron out of range");
  const auto& y = y_before(trace, s.layer);
  const auto K = head_keys(trace, params, s.layer, s.head);
  const double gamma = params.config.gamma(s.head);
  SynapseTrace out{s, {}, tokens};
  double sigma = 0;
  for (std::size_t tau = 0; tau < trace.tokens(); ++tau) {
    sigma = gamma * (sigma + double(y(tau, s.head * N + s.i)) * K(tau, s.j));
    out.value.push_back(sigma);
  }
  return out;
}

SynapseTrace probe_synapse(const ModelParams& params, const std::vector<int>& tokens, const Synapse& synapse) {
  auto [logits, trace] = forward_parallel<float>(params, tokens);
  return probe_synapse(trace, params, tokens, synapse);
}

namespace {

std::vector<int> bytes_of(const std::string& s) {
  std::vector<int> out;
  for (unsigned char c : s) out.push_back(c);
  return out;
}

}  // namespace

std::vector<RankedSynapse> find_concept_synapses(const ModelParams& params,
                                                 const std::vector<ActivationTrace>& positive,
                                                 const std::vector<ActivationTrace>& contrast, std::size_t top_k,
                                                 std::size_t pool_size) {
  if (positive.empty() || contrast.empty()) throw ParameterError("both text sets must be nonempty");
  if (top_k == 0 || pool_size == 0) return {};
  const auto& c = params.config;
  const std::size_t N = c.neurons_per_head();
  std::vector<const ActivationTrace*> all;
  for (const auto& t : positive) all.push_back(&t);
  for (const auto& t : contrast) all.push_back(&t);
  for (const auto* t : all)
    if (t->tokens() == 0) throw ParameterError("empty text");

  // Candidate pool: co-activation counts of (y_i > 0, k_j != 0) per (layer, head).
  struct Cand {
    double count;
    Synapse s;
  };
  std::vector<Cand> pool;
  for (std::size_t l = 1; l < c.layers; ++l)
    for (std::size_t h = 0; h < c.heads; ++h) {
      DenseMatrix counts = DenseMatrix::Zero(N, N);
      for (const auto* t : all) {
        const auto y = head_block(t->y[l - 1], h, N);
        const auto K = head_keys(*t, params, l, h);
        const DenseMatrix yb = (y.mat().array() > 0.0f).cast<double>();
        const DenseMatrix kb = (K.mat().array() != 0.0f).cast<double>();
        counts.noalias() += yb.transpose() * kb;
      }
      std::vector<Cand> local;
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
          if (counts(i, j) > 0) local.push_back({counts(i, j), {l, h, i, j}});
      auto by_count = [](const Cand& a, const Cand& b) { return a.count > b.count; };
      if (local.size() > pool_size) {
        std::nth_element(local.begin(), local.begin() + pool_size, local.end(), by_count);
        local.resize(pool_size);
      }
      pool.insert(pool.end(), local.begin(), local.end());
      if (pool.size() > pool_size) {
        std::nth_element(pool.begin(), pool.begin() + pool_size, pool.end(), by_count);
        pool.resize(pool_size);
      }
    }

  // End-of-text sigma (after the final byte) for each candidate.
  std::vector<std::vector<double>> pos_vals(pool.size()), neg_vals(pool.size());
  for (std::size_t l = 1; l < c.layers; ++l)
    for (std::size_t h = 0; h < c.heads; ++h) {
      std::vector<std::size_t> here;
      for (std::size_t k = 0; k < pool.size(); ++k)
        if (pool[k].s.layer == l && pool[k].s.head == h) here.push_back(k);
      if (here.empty()) continue;
      for (std::size_t tx = 0; tx < all.size(); ++tx) {
        const auto sigma = reconstruct_sigma(*all[tx], params, l, h, all[tx]->tokens());
        for (std::size_t k : here) {
          const double v = sigma(pool[k].s.i, pool[k].s.j);
          (tx < positive.size() ? pos_vals : neg_vals)[k].push_back(v);
        }
      }
    }

  std::vector<RankedSynapse> ranked;
  for (std::size_t k = 0; k < pool.size(); ++k) ranked.push_back({pool[k].s, mann_whitney_u(pos_vals[k], neg_vals[k])});
  auto key = [](const RankedSynapse& r) {
    return std::make_tuple(-r.test.rank_biserial, r.synapse.layer, r.synapse.head, r.synapse.i, r.synapse.j);
  };
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  if (ranked.size() > top_k) ranked.resize(top_k);
  return ranked;
}

std::vector<RankedSynapse> find_concept_synapses(const ModelParams& params,
                                                 const std::vector<std::string>& positive_texts,
                                                 const std::vector<std::string>& contrast_texts, std::size_t top_k,
                                                 std::size_t pool_size) {
  auto traces = [&](const std::vector<std::string>& texts) {
    std::vector<ActivationTrace> out;
    for (const auto& s : texts) out.push_back(forward_parallel<float>(params, bytes_of(s)).second);
    return out;
  };
  if (positive_texts.empty() || contrast_texts.empty()) throw ParameterError("both text sets must be nonempty");
  return find_concept_synapses(params, traces(positive_texts), traces(contrast_texts), top_k, pool_size);
}

SparsityTrace sparsity_trace(const ActivationTrace& trace, const ModelParams& params, std::size_t rope_buckets) {
  const auto& c = params.config;
  SparsityTrace out;
  const std::size_t T = trace.tokens(), L = trace.y.size();
  out.fraction.assign(T, std::vector<double>(L, 0.0));
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t t = 0; t < T; ++t) {
      const auto row = trace.y[l].row(t);
      const auto nz = std::count_if(row.begin(), row.end(), [](float v) { return v > 0; });
      out.fraction[t][l] = row.empty() ? 0.0 : static_cast<double>(nz) / static_cast<double>(row.size());
    }
  if (rope_buckets == 0) return out;

  // Log-spaced buckets over the pair frequencies of all heads.
  const std::size_t N = c.neurons_per_head();
  double lo = INFINITY, hi = 0;
  for (float f : params.rope_freqs.values())
    if (f > 0) {
      lo = std::min(lo, double(f));
      hi = std::max(hi, double(f));
    }
  std::vector<std::size_t> bucket(c.n, 0), size(rope_buckets, 0);
  for (std::size_t k = 0; k < c.n; ++k) {
    const double f = params.rope_freqs(k / N, (k % N) / 2);
    std::size_t b = 0;
    if (f > 0 && hi > lo)
      b = std::min(rope_buckets - 1, static_cast<std::size_t>(std::floor(static_cast<double>(rope_buckets) *
                                                                          std::log(f / lo) / std::log(hi / lo))));
    bucket[k] = b;
    ++size[b];
  }
  out.by_bucket.assign(T, std::vector<std::vector<double>>(L, std::vector<double>(rope_buckets, 0.0)));
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t t = 0; t < T; ++t) {
      auto& dst = out.by_bucket[t][l];
      const auto row = trace.y[l].row(t);
      for (std::size_t k = 0; k < row.size(); ++k)
        if (row[k] > 0) dst[bucket[k]] += 1;
      for (std::size_t b = 0; b < rope_buckets; ++b) dst[b] = size[b] ? dst[b] / static_cast<double>(size[b]) : 0.0;
    }
  return out;
}

}  // namespace bdh
