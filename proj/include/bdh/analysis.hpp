#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdh/model.hpp"
#include "bdh/sparse_graph.hpp"

namespace bdh {

// ---- feed-forward graph ----

enum class Decoder { X, Y };

// Block of D E with rows in head_a (receiving neurons) and columns in head_b
// (sending neurons). Entry (i, j) is the weight from neuron j of head_b to
// neuron i of head_a.
DenseMatrix extract_ffn_graph(const ModelParams& params, std::size_t head_a, std::size_t head_b, Decoder which);

// Entries >= beta, weights kept.
SparseGraph threshold_graph(const DenseMatrix& g, double beta);

struct ElementHistogram {
  std::vector<double> edges;      // bins + 1, symmetric around 0
  std::vector<double> counts;     // f(x)
  std::vector<double> symmetric;  // min(f(x), f(-x))
  std::vector<double> skew;       // f(x) - symmetric

  double total() const;
  double skew_mass() const;
};

ElementHistogram element_histogram(const DenseMatrix& g, std::size_t bins);

// ---- communities ----

// Newman modularity of a weighted digraph:
//   Q = (1/w) sum_{c_i = c_j} M(i,j) - (1/w^2) sum_c S_c^out S_c^in.
double modularity(const SparseGraph& g, const std::vector<std::size_t>& partition);

struct LouvainResult {
  std::vector<std::size_t> partition;  // community ids 0..k-1
  double Q = 0;
};

// Best of n_seeds Louvain runs (local moves in shuffled order, then aggregation).
LouvainResult louvain(const SparseGraph& g, std::size_t n_seeds = 5, std::uint64_t seed = 0);

struct BaselineGraphs {
  SparseGraph gnm;
  SparseGraph lowrank;
  double beta_lowrank = 0;  // threshold on P1 P2^T that leaves m entries
};

// Uniform m-edge digraph (unit weights) and a thresholded product of two
// n x d standard-normal matrices with the same edge count.
BaselineGraphs random_baseline_graphs(std::size_t n, std::size_t m, std::size_t d, std::uint64_t seed);

struct ModularityReport {
  double beta = 0;
  std::size_t m = 0;
  double Q = 0;
  double Q_gnm = 0;
  double Q_lowrank = 0;
  std::vector<std::size_t> partition;
};

ModularityReport modularity_report(const DenseMatrix& g, double beta, std::size_t lowrank_d, std::uint64_t seed,
                                   std::size_t n_seeds = 5);

struct LogBin {
  std::size_t lo = 0, hi = 0;  // degrees in [lo, hi)
  std::size_t count = 0;
};

struct DegreeDistribution {
  std::vector<std::size_t> in_degree, out_degree;
  std::vector<LogBin> in_hist, out_hist;  // first bin holds degree 0, then powers of two
};

DegreeDistribution degree_distribution(const SparseGraph& g);

// ---- statistics ----

struct ConceptTestResult {
  double U = 0;  // pairs with a > b, ties count one half
  double U_max = 0;
  double p_one_sided = 0.5;  // alternative: a tends to exceed b
  double rank_biserial = 0;
};

ConceptTestResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

// ---- state reconstruction and probing ----

// sigma_t = sum_{tau < t} gamma^(t - tau) |y_{tau, layer-1}><k_{tau, layer}|
// restricted to one head, where k is the rotated x of that head. The query
// sigma_t k_t is the neuron-space counterpart of the model's attention read.
// Requires layer >= 1.
DenseMatrix reconstruct_sigma(const ActivationTrace& trace, const ModelParams& params, std::size_t layer,
                              std::size_t head, std::size_t t);

// Same accumulation with arbitrary per-token values (rows of values) in place of y.
DenseMatrix reconstruct_state(const ActivationTrace& trace, const ModelParams& params, std::size_t layer,
                              std::size_t head, std::size_t t, const Tensor& values);

// Rotated x of one head at one layer (tokens x n/h), as the model uses it for keys and queries.
Tensor head_keys(const ActivationTrace& trace, const ModelParams& params, std::size_t layer, std::size_t head);

// Keeps entries > threshold.
DenseMatrix positive_part(const DenseMatrix& sigma, double threshold = 0.0);

struct Synapse {
  std::size_t layer = 0, head = 0, i = 0, j = 0;
  bool operator==(const Synapse&) const = default;
};

struct SynapseTrace {
  Synapse synapse;
  std::vector<double> value;  // value[t] = sigma_{t+1}(i, j), i.e. after token t
  std::vector<int> tokens;
};

SynapseTrace probe_synapse(const ModelParams& params, const std::vector<int>& tokens, const Synapse& synapse);
SynapseTrace probe_synapse(const ActivationTrace& trace, const ModelParams& params, const std::vector<int>& tokens,
                           const Synapse& synapse);

struct RankedSynapse {
  Synapse synapse;
  ConceptTestResult test;
};

// Candidates are the pairs with the most co-activations (y_i > 0 and k_j != 0
// in the same token) over all texts, at most pool_size of them. Each is scored
// by the Mann-Whitney separation of its end-of-text sigma between the sets.
std::vector<RankedSynapse> find_concept_synapses(const ModelParams& params,
                                                 const std::vector<std::string>& positive_texts,
                                                 const std::vector<std::string>& contrast_texts, std::size_t top_k,
                                                 std::size_t pool_size = 100000);
std::vector<RankedSynapse> find_concept_synapses(const ModelParams& params,
                                                 const std::vector<ActivationTrace>& positive,
                                                 const std::vector<ActivationTrace>& contrast, std::size_t top_k,
                                                 std::size_t pool_size = 100000);

struct SparsityTrace {
  std::vector<std::vector<double>> fraction;  // [token][layer]
  // [token][layer][bucket]; empty unless buckets were requested
  std::vector<std::vector<std::vector<double>>> by_bucket;
};

// Nonzero means > 0. With rope_buckets > 0, neurons are also grouped by the
// rotation frequency of their pair into log-spaced buckets.
SparsityTrace sparsity_trace(const ActivationTrace& trace, const ModelParams& params, std::size_t rope_buckets = 0);

// ---- micro-experiments ----

enum class LowRankVariant { ReluBias, Linear };

// Random out-degree-r walk matrix G' (rows sum to 1), factorized through a
// random projection of rank d-1 plus one bias coordinate. Returns the worst
// L1 error over basis inputs. d >= n uses the exact identity factorization.
double markov_lowrank_experiment(std::size_t n, std::size_t r, std::size_t d, std::uint64_t seed,
                                 LowRankVariant variant = LowRankVariant::ReluBias);

struct FScoreSample {
  double w = 0;
  double rho = 0;
};

// Hidden layer of n nodes; A and B overlap in exactly c nodes.
FScoreSample fscore_experiment(std::size_t a, std::size_t b, std::size_t c, std::size_t n, std::size_t d,
                               std::uint64_t seed);

enum class KeyMode { Random, Orthogonal };

// Mean L2 error of reading back each stored value from a linear-attention
// state holding t (key, value) pairs with unit keys in R^n and unit values in R^d.
double attention_capacity_experiment(std::size_t n, std::size_t d, std::size_t t, std::uint64_t seed,
                                     KeyMode keys = KeyMode::Random);

// b_i = 1 when lambda_i . v >= threshold, else 0. lambdas is n x a.
std::vector<double> lsh_bucketize(const std::vector<double>& v, const DenseMatrix& lambdas, double threshold);

}  // namespace bdh
