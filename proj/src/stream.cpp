#include <atomic>
#include <iostream>

#include "bdh/model.hpp"

namespace bdh {

namespace {

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void layer_norm_inplace(Vec<T>& v, double eps) {
  const double mean = v.template cast<double>().mean();
  const double var = (v.template cast<double>().array() - mean).square().mean();
  const double inv = 1.0 / std::sqrt(var + eps);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>((v[i] - mean) * inv);
}

std::atomic<bool> position_warning_issued{false};

}  // namespace

template <typename T>
BasicTensor<T> forward_step(const BasicModelParams<T>& params, BasicStreamState<T>& state, int token) {
  const ModelConfig& c = params.config;
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) throw IndexError("token out of range");
  if (state.rho.size() != c.layers * c.heads) throw DimensionError("stream state does not match the model");
  if (state.t >= kRotationPositionBudget && !position_warning_issued.exchange(true))
    std::cerr << "warning: stream position " << state.t << " exceeds the rotation precision budget\n";

  const std::size_t d = c.d, N = c.neurons_per_head();
  Vec<T> v = params.token_embedding.mat().row(token).transpose();
  layer_norm_inplace(v, c.eps);
  Vec<T> y(c.n), k(N), a(d);
  for (std::size_t l = 0; l < c.layers; ++l) {
    for (std::size_t h = 0; h < c.heads; ++h) {
      ConstMatrixMap<T> Dx(params.decoder_x.data() + h * d * N, d, N);
      ConstMatrixMap<T> Dy(params.decoder_y.data() + h * d * N, d, N);
      Vec<T> x = (Dx.transpose() * v).cwiseMax(T(0));
      // Key/query at absolute angle t.
      for (std::size_t p = 0; p < N / 2; ++p) {
        double cs, sn;
        rope_angle(state.t, static_cast<double>(params.rope_freqs(h, p)), cs, sn);
        k[2 * p] = static_cast<T>(cs * x[2 * p] - sn * x[2 * p + 1]);
        k[2 * p + 1] = static_cast<T>(sn * x[2 * p] + cs * x[2 * p + 1]);
      }
      auto rho = state.at(l, h, c.heads).mat();
      a.noalias() = rho * k;  // reads only tau < t
      const T gamma = static_cast<T>(c.gamma(h));
      rho.noalias() += v * k.transpose();
      if (gamma != T(1)) rho *= gamma;
      layer_norm_inplace(a, c.eps);
      y.segment(h * N, N) = (Dy.transpose() * a).cwiseMax(T(0)).cwiseProduct(x);
    }
    Vec<T> ye = params.encoder.mat().transpose() * y;
    layer_norm_inplace(ye, c.eps);
    v += ye;
    layer_norm_inplace(v, c.eps);
  }
  ++state.t;
  BasicTensor<T> logits({c.vocab_size});
  Eigen::Map<Vec<T>>(logits.data(), c.vocab_size) = params.readout.mat().transpose() * v;
  return logits;
}

std::vector<int> generate(const ModelParams& params, std::span<const int> prompt, std::size_t n_tokens,
                          double temperature, std::uint64_t seed) {
  if (prompt.empty()) throw UsageError("generate needs a non-empty prompt");
  if (!(temperature > 0)) throw ParameterError("temperature must be positive");
  Rng rng(seed);
  auto state = fresh_state<float>(params.config);
  Tensor logits;
  for (int tok : prompt) logits = forward_step(params, state, tok);
  std::vector<int> out;
  out.reserve(n_tokens);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const int next = sample_categorical(logits, temperature, rng);
    out.push_back(next);
    if (i + 1 < n_tokens) logits = forward_step(params, state, next);
  }
  return out;
}

template Tensor forward_step(const ModelParams&, StreamState&, int);
template TensorD forward_step(const BasicModelParams<double>&, BasicStreamState<double>&, int);

}  // namespace bdh
