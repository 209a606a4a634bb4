#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bdh/grad_tape.hpp"
#include "bdh/tensor.hpp"

namespace bdh {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct MergeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t n = 4096;
  std::size_t d = 256;
  std::size_t layers = 6;
  std::size_t heads = 4;
  std::size_t vocab_size = 256;
  double dropout = 0.05;
  // Token periods of the slowest and fastest rotating pair; max <= 0 means n.
  double rope_wavelength_min = 1.0;
  double rope_wavelength_max = 0.0;
  // Per-head decay of the attention state; empty means 1 (no damping) for every head.
  std::vector<double> alibi_gamma;
  double eps = 1e-5;

  void validate() const;
  std::size_t neurons_per_head() const { return n / heads; }
  std::size_t pairs_per_head() const { return n / (2 * heads); }
  double gamma(std::size_t head) const { return alibi_gamma.empty() ? 1.0 : alibi_gamma.at(head); }
  double wavelength_max() const { return rope_wavelength_max > 0 ? rope_wavelength_max : static_cast<double>(n); }

  bool operator==(const ModelConfig&) const = default;
};

// Geometric per-head decays from gamma_min (head 0) up to 1 (last head).
std::vector<double> geometric_alibi(std::size_t heads, double gamma_min);

std::uint64_t param_count(std::uint64_t n, std::uint64_t d, std::uint64_t vocab_size);
std::uint64_t param_count(const ModelConfig& config);

template <typename T>
struct BasicModelParams {
  ModelConfig config;
  BasicTensor<T> encoder;          // E: n x d
  BasicTensor<T> decoder_x;        // h x d x (n/h)
  BasicTensor<T> decoder_y;        // h x d x (n/h)
  BasicTensor<T> token_embedding;  // V x d
  BasicTensor<T> readout;          // d x V
  BasicTensor<T> rope_freqs;       // h x (n/2h), angular frequency per neuron pair

  template <typename U>
  BasicModelParams<U> cast() const {
    return {config, encoder.template cast<U>(), decoder_x.template cast<U>(), decoder_y.template cast<U>(),
            token_embedding.template cast<U>(), readout.template cast<U>(), rope_freqs.template cast<U>()};
  }
  // Throws ConfigError when tensor shapes disagree with config.
  void check_shapes() const;
  // Trainable tensors in a fixed order (rope_freqs excluded).
  std::vector<BasicTensor<T>*> trainable();
  std::vector<const BasicTensor<T>*> trainable() const;
};
using ModelParams = BasicModelParams<float>;

inline constexpr const char* kTrainableNames[] = {"encoder", "decoder_x", "decoder_y", "token_embedding",
                                                  "readout"};

template <typename T>
struct BasicStreamState {
  std::vector<BasicTensor<T>> rho;  // layers*heads entries of d x (n/h), index l*heads + h
  std::int64_t t = 0;

  BasicTensor<T>& at(std::size_t layer, std::size_t head, std::size_t heads) { return rho[layer * heads + head]; }
  const BasicTensor<T>& at(std::size_t layer, std::size_t head, std::size_t heads) const {
    return rho[layer * heads + head];
  }
};
using StreamState = BasicStreamState<float>;

template <typename T>
BasicStreamState<T> fresh_state(const ModelConfig& config);

// Per-layer activations of one sequence, rows indexed by token.
template <typename T>
struct BasicActivationTrace {
  std::vector<BasicTensor<T>> x;          // L entries of T x n
  std::vector<BasicTensor<T>> y;          // L entries of T x n (before dropout)
  std::vector<BasicTensor<T>> v;          // L+1 entries of T x d; v[0] is the embedding, v[l+1] leaves layer l
  std::vector<BasicTensor<T>> attention;  // L*h entries of T x d, index l*heads + h
  std::int64_t start = 0;                 // absolute position of row 0

  std::size_t tokens() const { return x.empty() ? 0 : x[0].rows(); }
};
using ActivationTrace = BasicActivationTrace<float>;

template <typename T>
BasicModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Geometric wavelength schedule within each head, as angular frequencies.
template <typename T>
BasicTensor<T> rope_frequencies(const ModelConfig& config);

struct ForwardOptions {
  Rng* dropout_rng = nullptr;      // training mode when set
  bool detach_attention = false;   // keys and values get no gradient
};

// Tape variables for the trainable tensors.
template <typename T>
struct ParamVars {
  typename GradTape<T>::Var encoder, decoder_x, decoder_y, token_embedding, readout;
};

template <typename T>
ParamVars<T> register_params(GradTape<T>& tape, const BasicModelParams<T>& params, bool requires_grad);

template <typename T>
struct ForwardGraph {
  using Var = typename GradTape<T>::Var;
  Var logits;
  std::vector<Var> x, y, v, attention;
  std::vector<Var> keys;  // rotated x per (layer, head)
};

// Records the token-parallel forward on the tape. carry supplies the attention
// state and position the chunk starts from; it is never differentiated.
template <typename T>
ForwardGraph<T> build_forward(GradTape<T>& tape, const ParamVars<T>& vars, const BasicModelParams<T>& params,
                              std::span<const int> tokens, const BasicStreamState<T>* carry,
                              const ForwardOptions& options);

// State after the chunk recorded in graph, given the state it started from.
template <typename T>
BasicStreamState<T> advance_state(const GradTape<T>& tape, const ForwardGraph<T>& graph,
                                  const BasicModelParams<T>& params, const BasicStreamState<T>& carry,
                                  std::size_t chunk_length);

template <typename T>
std::pair<BasicTensor<T>, BasicActivationTrace<T>> forward_parallel(const BasicModelParams<T>& params,
                                                                     std::span<const int> tokens,
                                                                     Rng* dropout_rng = nullptr);

template <typename T>
BasicTensor<T> forward_step(const BasicModelParams<T>& params, BasicStreamState<T>& state, int token);

// forward_step warns once when a stream runs past this position; rotation
// angles then carry float32-scale phase error.
inline constexpr std::int64_t kRotationPositionBudget = std::int64_t{1} << 24;

std::vector<int> generate(const ModelParams& params, std::span<const int> prompt, std::size_t n_tokens,
                          double temperature, std::uint64_t seed);

ModelParams concat_models(const ModelParams& a, const ModelParams& b);

template <typename T>
struct LossGraph {
  std::unique_ptr<GradTape<T>> tape;
  ParamVars<T> vars;
  ForwardGraph<T> graph;
  typename GradTape<T>::Var loss;
  double value = 0;
};

// Next-token cross entropy of tokens[0..T) against tokens[1..T].
template <typename T>
LossGraph<T> loss_next_token(const BasicModelParams<T>& params, std::span<const int> tokens,
                             const BasicStreamState<T>* carry = nullptr, const ForwardOptions& options = {});

// Gradients of the trainable tensors after loss_graph.tape->backward(loss).
template <typename T>
BasicModelParams<T> gradients(const LossGraph<T>& loss_graph, const BasicModelParams<T>& params);

}  // namespace bdh
