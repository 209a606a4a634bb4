#include <cmath>
#include <numbers>
#include <string>

#include "bdh/model.hpp"

namespace bdh {

void ModelConfig::validate() const {
  if (heads == 0) throw ConfigError("heads must be positive");
  if (n == 0 || n % heads != 0) throw ConfigError("n must be a positive multiple of heads");
  if (n % (2 * heads) != 0) throw ConfigError("n must be a multiple of 2*heads (rotation pairs neurons)");
  // Layer norm over the d axis needs two features.
  if (d < 2) throw ConfigError("d must be at least 2");
  if (layers == 0) throw ConfigError("layers must be positive");
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (!(rope_wavelength_min > 0) || wavelength_max() < rope_wavelength_min)
    throw ConfigError("rope wavelength range must satisfy 0 < min <= max");
  if (!alibi_gamma.empty()) {
    if (alibi_gamma.size() != heads) throw ConfigError("alibi_gamma needs one value per head");
    for (double g : alibi_gamma)
      if (!(g > 0 && g <= 1)) throw ConfigError("alibi_gamma values must lie in (0, 1]");
  }
}

std::vector<double> geometric_alibi(std::size_t heads, double gamma_min) {
  if (!(gamma_min > 0 && gamma_min <= 1)) throw ConfigError("gamma_min must lie in (0, 1]");
  std::vector<double> out(heads, 1.0);
  for (std::size_t h = 0; h + 1 < heads; ++h)
    out[h] = std::pow(gamma_min, 1.0 - static_cast<double>(h) / static_cast<double>(heads - 1));
  if (heads == 1) out[0] = gamma_min;
  return out;
}

std::uint64_t param_count(std::uint64_t n, std::uint64_t d, std::uint64_t vocab_size) {
  if (n == 0 || d == 0 || vocab_size == 0) throw ConfigError("param_count needs positive n, d, vocab_size");
  return 3 * n * d + 2 * vocab_size * d;
}

std::uint64_t param_count(const ModelConfig& config) { return param_count(config.n, config.d, config.vocab_size); }

template <typename T>
void BasicModelParams<T>::check_shapes() const {
  config.validate();
  const auto& c = config;
  const std::size_t N = c.neurons_per_head();
  auto expect = [](const BasicTensor<T>& t, const Shape& s, const char* name) {
    if (t.shape() != s)
      throw ConfigError(std::string(name) + " has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(s));
  };
  expect(encoder, {c.n, c.d}, "encoder");
  expect(decoder_x, {c.heads, c.d, N}, "decoder_x");
  expect(decoder_y, {c.heads, c.d, N}, "decoder_y");
  expect(token_embedding, {c.vocab_size, c.d}, "token_embedding");
  expect(readout, {c.d, c.vocab_size}, "readout");
  expect(rope_freqs, {c.heads, c.pairs_per_head()}, "rope_freqs");
}

template <typename T>
std::vector<BasicTensor<T>*> BasicModelParams<T>::trainable() {
  return {&encoder, &decoder_x, &decoder_y, &token_embedding, &readout};
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicModelParams<T>::trainable() const {
  return {&encoder, &decoder_x, &decoder_y, &token_embedding, &readout};
}

template <typename T>
BasicStreamState<T> fresh_state(const ModelConfig& config) {
  BasicStreamState<T> s;
  s.rho.assign(config.layers * config.heads, BasicTensor<T>({config.d, config.neurons_per_head()}));
  s.t = 0;
  return s;
}

template <typename T>
BasicTensor<T> rope_frequencies(const ModelConfig& config) {
  const std::size_t P = config.pairs_per_head();
  const double lo = config.rope_wavelength_min, hi = config.wavelength_max();
  BasicTensor<T> freqs({config.heads, P});
  for (std::size_t h = 0; h < config.heads; ++h)
    for (std::size_t i = 0; i < P; ++i) {
      const double frac = P > 1 ? static_cast<double>(i) / static_cast<double>(P - 1) : 0.0;
      const double wavelength = lo * std::pow(hi / lo, frac);
      freqs(h, i) = static_cast<T>(2.0 * std::numbers::pi / wavelength);
    }
  return freqs;
}

template <typename T>
BasicModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const double std = 0.02;
  const std::size_t N = config.neurons_per_head();
  BasicModelParams<T> p;
  p.config = config;
  p.encoder = random_normal<T>({config.n, config.d}, std, rng);
  p.decoder_x = random_normal<T>({config.heads, config.d, N}, std, rng);
  p.decoder_y = random_normal<T>({config.heads, config.d, N}, std, rng);
  p.token_embedding = random_normal<T>({config.vocab_size, config.d}, std, rng);
  p.readout = random_normal<T>({config.d, config.vocab_size}, std, rng);
  p.rope_freqs = rope_frequencies<T>(config);
  return p;
}

template <typename T>
ParamVars<T> register_params(GradTape<T>& tape, const BasicModelParams<T>& params, bool requires_grad) {
  ParamVars<T> v;
  v.encoder = tape.leaf(params.encoder, requires_grad);
  v.decoder_x = tape.leaf(params.decoder_x, requires_grad);
  v.decoder_y = tape.leaf(params.decoder_y, requires_grad);
  v.token_embedding = tape.leaf(params.token_embedding, requires_grad);
  v.readout = tape.leaf(params.readout, requires_grad);
  return v;
}

template <typename T>
ForwardGraph<T> build_forward(GradTape<T>& tape, const ParamVars<T>& vars, const BasicModelParams<T>& params,
                              std::span<const int> tokens, const BasicStreamState<T>* carry,
                              const ForwardOptions& options) {
  const ModelConfig& c = params.config;
  if (tokens.empty()) throw UsageError("forward needs at least one token");
  for (int tok : tokens)
    if (tok < 0 || static_cast<std::size_t>(tok) >= c.vocab_size) throw IndexError("token out of range");
  const std::size_t S = tokens.size();
  const std::int64_t t0 = carry ? carry->t : 0;
  std::vector<std::int64_t> positions(S);
  for (std::size_t i = 0; i < S; ++i) positions[i] = t0 + static_cast<std::int64_t>(i);

  std::vector<std::shared_ptr<const RotationTable<T>>> rotations;
  for (std::size_t h = 0; h < c.heads; ++h)
    rotations.push_back(std::make_shared<const RotationTable<T>>(positions, params.rope_freqs.slice(h)));

  ForwardGraph<T> g;
  auto v = tape.layer_norm(tape.gather_rows(vars.token_embedding, std::vector<int>(tokens.begin(), tokens.end())),
                           c.eps);
  g.v.push_back(v);
  for (std::size_t l = 0; l < c.layers; ++l) {
    std::vector<typename GradTape<T>::Var> xs, ys;
    for (std::size_t h = 0; h < c.heads; ++h) {
      auto x = tape.relu(tape.matmul(v, tape.select(vars.decoder_x, h)));
      auto k = tape.rope(x, rotations[h]);
      auto a = tape.causal_attention(k, k, v, c.gamma(h), carry ? &carry->at(l, h, c.heads) : nullptr,
                                     !options.detach_attention);
      auto y = tape.mul(tape.relu(tape.matmul(tape.layer_norm(a, c.eps), tape.select(vars.decoder_y, h))), x);
      xs.push_back(x);
      ys.push_back(y);
      g.keys.push_back(k);
      g.attention.push_back(a);
    }
    auto x_all = c.heads == 1 ? xs[0] : tape.concat_cols(xs);
    auto y_all = c.heads == 1 ? ys[0] : tape.concat_cols(ys);
    g.x.push_back(x_all);
    g.y.push_back(y_all);
    auto y_used = y_all;
    if (options.dropout_rng && c.dropout > 0) {
      BasicTensor<T> mask({S, c.n});
      std::bernoulli_distribution keep(1.0 - c.dropout);
      const T scale = static_cast<T>(1.0 / (1.0 - c.dropout));
      for (auto& m : mask.values()) m = keep(*options.dropout_rng) ? scale : T(0);
      y_used = tape.mul_const(y_all, std::move(mask));
    }
    auto ye = tape.layer_norm(tape.matmul(y_used, vars.encoder), c.eps);
    v = tape.layer_norm(tape.add(v, ye), c.eps);
    g.v.push_back(v);
  }
  g.logits = tape.matmul(v, vars.readout);
  return g;
}

template <typename T>
BasicStreamState<T> advance_state(const GradTape<T>& tape, const ForwardGraph<T>& graph,
                                  const BasicModelParams<T>& params, const BasicStreamState<T>& carry,
                                  std::size_t chunk_length) {
  const ModelConfig& c = params.config;
  BasicStreamState<T> next = carry;
  next.t = carry.t + static_cast<std::int64_t>(chunk_length);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const auto& V = tape.value(graph.v[l]);
    for (std::size_t h = 0; h < c.heads; ++h) {
      const auto& K = tape.value(graph.keys[l * c.heads + h]);
      const double gamma = c.gamma(h);
      RowMatrix<T> weighted = V.mat();
      double w = gamma;
      for (std::size_t tau = chunk_length; tau-- > 0;) {
        weighted.row(tau) *= static_cast<T>(w);
        w *= gamma;
      }
      auto& rho = next.at(l, h, c.heads);
      rho.mat() *= static_cast<T>(std::pow(gamma, static_cast<double>(chunk_length)));
      rho.mat().noalias() += weighted.transpose() * K.mat();
    }
  }
  return next;
}

template <typename T>
std::pair<BasicTensor<T>, BasicActivationTrace<T>> forward_parallel(const BasicModelParams<T>& params,
                                                                     std::span<const int> tokens,
                                                                     Rng* dropout_rng) {
  GradTape<T> tape;
  auto vars = register_params(tape, params, false);
  ForwardOptions options;
  options.dropout_rng = dropout_rng;
  auto g = build_forward<T>(tape, vars, params, tokens, nullptr, options);
  BasicActivationTrace<T> trace;
  for (auto v : g.x) trace.x.push_back(tape.value(v));
  for (auto v : g.y) trace.y.push_back(tape.value(v));
  for (auto v : g.v) trace.v.push_back(tape.value(v));
  for (auto v : g.attention) trace.attention.push_back(tape.value(v));
  return {tape.value(g.logits), std::move(trace)};
}

template <typename T>
LossGraph<T> loss_next_token(const BasicModelParams<T>& params, std::span<const int> tokens,
                             const BasicStreamState<T>* carry, const ForwardOptions& options) {
  if (tokens.size() < 2) throw UsageError("loss needs at least two tokens");
  LossGraph<T> lg;
  lg.tape = std::make_unique<GradTape<T>>();
  auto& tape = *lg.tape;
  lg.vars = register_params(tape, params, true);
  lg.graph = build_forward(tape, lg.vars, params, tokens.first(tokens.size() - 1), carry, options);
  lg.loss = tape.cross_entropy(lg.graph.logits, std::vector<int>(tokens.begin() + 1, tokens.end()));
  lg.value = tape.value(lg.loss)[0];
  return lg;
}

template <typename T>
BasicModelParams<T> gradients(const LossGraph<T>& lg, const BasicModelParams<T>& params) {
  BasicModelParams<T> g;
  g.config = params.config;
  g.encoder = lg.tape->grad(lg.vars.encoder);
  g.decoder_x = lg.tape->grad(lg.vars.decoder_x);
  g.decoder_y = lg.tape->grad(lg.vars.decoder_y);
  g.token_embedding = lg.tape->grad(lg.vars.token_embedding);
  g.readout = lg.tape->grad(lg.vars.readout);
  g.rope_freqs = BasicTensor<T>(params.rope_freqs.shape());
  return g;
}

ModelParams concat_models(const ModelParams& a, const ModelParams& b) {
  const auto& ca = a.config;
  const auto& cb = b.config;
  if (ca.d != cb.d) throw MergeError("cannot merge: d differs");
  if (ca.heads != cb.heads) throw MergeError("cannot merge: head counts differ");
  if (ca.vocab_size != cb.vocab_size) throw MergeError("cannot merge: vocab_size differs");
  if (ca.layers != cb.layers) throw MergeError("cannot merge: layer counts differ");
  if (ca.eps != cb.eps) throw MergeError("cannot merge: eps differs");
  if (ca.alibi_gamma != cb.alibi_gamma) throw MergeError("cannot merge: alibi_gamma differs");
  a.check_shapes();
  b.check_shapes();

  ModelParams m;
  m.config = ca;
  m.config.n = ca.n + cb.n;
  const std::size_t H = ca.heads, d = ca.d;
  const std::size_t Na = ca.neurons_per_head(), Nb = cb.neurons_per_head(), N = Na + Nb;
  m.encoder = Tensor({m.config.n, d});
  m.decoder_x = Tensor({H, d, N});
  m.decoder_y = Tensor({H, d, N});
  m.rope_freqs = Tensor({H, N / 2});
  for (std::size_t h = 0; h < H; ++h) {
    // Neurons of head h: a's block, then b's block.
    m.encoder.mat().middleRows(h * N, Na) = a.encoder.mat().middleRows(h * Na, Na);
    m.encoder.mat().middleRows(h * N + Na, Nb) = b.encoder.mat().middleRows(h * Nb, Nb);
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t i = 0; i < Na; ++i) {
        m.decoder_x.at({h, k, i}) = a.decoder_x.at({h, k, i});
        m.decoder_y.at({h, k, i}) = a.decoder_y.at({h, k, i});
      }
      for (std::size_t i = 0; i < Nb; ++i) {
        m.decoder_x.at({h, k, Na + i}) = b.decoder_x.at({h, k, i});
        m.decoder_y.at({h, k, Na + i}) = b.decoder_y.at({h, k, i});
      }
    }
    for (std::size_t p = 0; p < Na / 2; ++p) m.rope_freqs(h, p) = a.rope_freqs(h, p);
    for (std::size_t p = 0; p < Nb / 2; ++p) m.rope_freqs(h, Na / 2 + p) = b.rope_freqs(h, p);
  }
  m.token_embedding = a.token_embedding;
  m.token_embedding.mat() = (a.token_embedding.mat() + b.token_embedding.mat()) * 0.5f;
  m.readout = a.readout;
  m.readout.mat() = (a.readout.mat() + b.readout.mat()) * 0.5f;
  return m;
}

#define BDH_MODEL_INSTANTIATE(T)                                                                             \
  template struct BasicModelParams<T>;                                                                       \
  template BasicStreamState<T> fresh_state<T>(const ModelConfig&);                                           \
  template BasicTensor<T> rope_frequencies<T>(const ModelConfig&);                                           \
  template BasicModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                            \
  template ParamVars<T> register_params(GradTape<T>&, const BasicModelParams<T>&, bool);                     \
  template ForwardGraph<T> build_forward(GradTape<T>&, const ParamVars<T>&, const BasicModelParams<T>&,      \
                                         std::span<const int>, const BasicStreamState<T>*,                   \
                                         const ForwardOptions&);                                             \
  template BasicStreamState<T> advance_state(const GradTape<T>&, const ForwardGraph<T>&,                     \
                                             const BasicModelParams<T>&, const BasicStreamState<T>&,         \
                                             std::size_t);                                                   \
  template std::pair<BasicTensor<T>, BasicActivationTrace<T>> forward_parallel(                              \
      const BasicModelParams<T>&, std::span<const int>, Rng*);                                               \
  template LossGraph<T> loss_next_token(const BasicModelParams<T>&, std::span<const int>,                    \
                                        const BasicStreamState<T>*, const ForwardOptions&);                  \
  template BasicModelParams<T> gradients(const LossGraph<T>&, const BasicModelParams<T>&);

BDH_MODEL_INSTANTIATE(float)
BDH_MODEL_INSTANTIATE(double)

}  // namespace bdh
