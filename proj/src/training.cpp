#include "bdh/training.hpp"

#include <algorithm>
#include <cmath>

namespace bdh {

void TrainConfig::validate() const {
  // lr_peak = lr_final = 0 is allowed so a run can be a null update.
  if (!(lr_peak >= 0) || !(lr_final >= 0) || lr_final > lr_peak)
    throw ConfigError("learning rates must satisfy lr_peak >= lr_final >= 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be > 0");
  if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
}

double lr_at(std::size_t step, const TrainConfig& c) {
  if (step < c.warmup_steps) return c.lr_peak * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  if (step >= c.steps) return c.lr_final;
  const double frac = static_cast<double>(step - c.warmup_steps) / static_cast<double>(c.steps - c.warmup_steps);
  return c.lr_peak + (c.lr_final - c.lr_peak) * frac;
}

AdamW::AdamW(const ModelParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* t : params.trainable()) {
    m_.emplace_back(t->size(), 0.0);
    v_.emplace_back(t->size(), 0.0);
  }
}

void AdamW::step(ModelParams& params, const ModelParams& grads, double lr, double weight_decay) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto ps = params.trainable();
  auto gs = grads.trainable();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& p = ps[k]->values();
    const auto& g = gs[k]->values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * double(g[i]) * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + weight_decay * p[i];
      p[i] = static_cast<float>(p[i] - lr * update);
    }
  }
}

double global_grad_norm(const ModelParams& grads) {
  double s = 0;
  for (const auto* t : grads.trainable())
    for (float g : t->values()) s += double(g) * g;
  return std::sqrt(s);
}

double clip_global_norm(ModelParams& grads, double clip_norm) {
  const double norm = global_grad_norm(grads);
  if (norm > clip_norm) {
    const float scale = static_cast<float>(clip_norm / norm);
    for (auto* t : grads.trainable()) t->mat() *= scale;
  }
  return norm;
}

namespace {

std::vector<double> y_sparsity(const GradTape<float>& tape, const ForwardGraph<float>& g) {
  std::vector<double> out;
  for (const auto& y : g.y) {
    const auto& v = tape.value(y).values();
    const auto nz = std::count_if(v.begin(), v.end(), [](float a) { return a > 0; });
    out.push_back(static_cast<double>(nz) / static_cast<double>(v.size()));
  }
  return out;
}

}  // namespace

TrainResult train(ModelParams params, const TaskStream& stream, const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  params.config.validate();
  params.check_shapes();
  if (stream.vocab_size() > params.config.vocab_size) throw ConfigError("stream vocabulary exceeds the model's");

  const std::size_t B = config.batch_size, S = config.seq_len;
  std::vector<std::unique_ptr<TaskStream>> streams;
  std::vector<StreamState> carry;
  std::vector<int> last;
  std::vector<Rng> dropout;
  for (std::size_t b = 0; b < B; ++b) {
    streams.push_back(stream.fork(b));
    carry.push_back(fresh_state<float>(params.config));
    last.push_back(streams.back()->next());
    dropout.emplace_back(config.seed * 1000003 + b);
  }

  AdamW opt(params);
  TrainMetrics metrics;
  ModelParams last_good = params;
  std::vector<int> tokens(S + 1);
  for (std::size_t step = 0; step < config.steps; ++step) {
    ModelParams grads;
    double loss = 0;
    std::vector<double> sparsity;
    const bool sample = config.sparsity_every > 0 && step % config.sparsity_every == 0;
    for (std::size_t b = 0; b < B; ++b) {
      tokens[0] = last[b];
      for (std::size_t i = 1; i <= S; ++i) tokens[i] = streams[b]->next();
      last[b] = tokens[S];
      ForwardOptions opts;
      opts.dropout_rng = params.config.dropout > 0 ? &dropout[b] : nullptr;
      opts.detach_attention = config.detach_attention;
      auto lg = loss_next_token(params, tokens, &carry[b], opts);
      lg.tape->backward(lg.loss);
      auto g = gradients(lg, params);
      if (b == 0) {
        grads = std::move(g);
      } else {
        auto dst = grads.trainable();
        auto src = g.trainable();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k]->mat() += src[k]->mat();
      }
      loss += lg.value;
      if (sample && b == 0) sparsity = y_sparsity(*lg.tape, lg.graph);
      carry[b] = advance_state(*lg.tape, lg.graph, params, carry[b], S);
    }
    loss /= static_cast<double>(B);
    if (B > 1)
      for (auto* t : grads.trainable()) t->mat() /= static_cast<float>(B);

    const double norm = global_grad_norm(grads);
    if (!std::isfinite(loss) || !std::isfinite(norm))
      throw TrainingDiverged("training diverged at step " + std::to_string(step), last_good, step, metrics);
    clip_global_norm(grads, config.clip_norm);
    const double lr = lr_at(step, config);
    last_good = params;
    opt.step(params, grads, lr, config.weight_decay);

    StepMetrics sm{step, loss, lr, norm, std::move(sparsity)};
    if (on_step) on_step(sm, params);
    metrics.steps.push_back(std::move(sm));
  }
  return {std::move(params), std::move(metrics)};
}

namespace {

// Runs the model over tokens as one sequence; visit(t, logits_row_ptr, y per layer) per input position.
template <typename Visit>
void run_continuous(const ModelParams& params, const std::vector<int>& tokens, std::size_t chunk, Visit visit) {
  auto carry = fresh_state<float>(params.config);
  for (std::size_t start = 0; start + 1 < tokens.size(); start += chunk) {
    const std::size_t len = std::min(chunk, tokens.size() - 1 - start);
    GradTape<float> tape;
    auto vars = register_params(tape, params, false);
    auto g = build_forward<float>(tape, vars, params, std::span<const int>(tokens).subspan(start, len), &carry, {});
    visit(start, len, tape, g);
    carry = advance_state(tape, g, params, carry, len);
  }
}

double row_loss(const Tensor& logits, std::size_t r, int target) {
  const auto row = logits.row(r);
  const float mx = *std::max_element(row.begin(), row.end());
  double z = 0;
  for (float v : row) z += std::exp(double(v) - mx);
  return std::log(z) + mx - row[target];
}

}  // namespace

RepetitionReport evaluate_repetition(const ModelParams& params, std::uint64_t seed, std::size_t periods,
                                     std::size_t chunk, RepetitionSpec spec) {
  RepetitionStream stream(spec, seed);
  const auto tokens = stream.take(periods * spec.period() + 1);
  const std::size_t L = params.config.layers;
  RepetitionReport rep;
  double correct[3] = {0, 0, 0}, count[3] = {0, 0, 0};
  std::vector<double> active[3], rows[3];
  for (auto& a : active) a.assign(L, 0.0);
  for (auto& r : rows) r.assign(L, 0.0);
  double loss = 0;
  run_continuous(params, tokens, chunk, [&](std::size_t start, std::size_t len, const GradTape<float>& tape,
                                            const ForwardGraph<float>& g) {
    const auto& logits = tape.value(g.logits);
    for (std::size_t r = 0; r < len; ++r) {
      const std::size_t pos = start + r;
      const int target = tokens[pos + 1];
      const auto row = logits.row(r);
      const int guess = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      const int tphase = static_cast<int>(RepetitionStream::phase_at(pos + 1, spec));
      correct[tphase] += guess == target;
      count[tphase] += 1;
      loss += row_loss(logits, r, target);
      const int iphase = static_cast<int>(RepetitionStream::phase_at(pos, spec));
      for (std::size_t l = 0; l < L; ++l) {
        const auto yr = tape.value(g.y[l]).row(r);
        const auto nz = std::count_if(yr.begin(), yr.end(), [](float a) { return a > 0; });
        active[iphase][l] += static_cast<double>(nz) / static_cast<double>(yr.size());
        rows[iphase][l] += 1;
      }
    }
  });
  auto frac = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  rep.accuracy_warmup = frac(correct[0], count[0]);
  rep.accuracy_introduction = frac(correct[1], count[1]);
  rep.accuracy_repetition = frac(correct[2], count[2]);
  std::vector<double>* outs[3] = {&rep.sparsity_warmup, &rep.sparsity_introduction, &rep.sparsity_repetition};
  for (int p = 0; p < 3; ++p)
    for (std::size_t l = 0; l < L; ++l) outs[p]->push_back(frac(active[p][l], rows[p][l]));
  rep.mean_loss = loss / static_cast<double>(tokens.size() - 1);
  return rep;
}

double evaluate_loss(const ModelParams& params, TaskStream& stream, std::size_t n_tokens, std::size_t chunk) {
  const auto tokens = stream.take(n_tokens + 1);
  double loss = 0;
  run_continuous(params, tokens, chunk, [&](std::size_t start, std::size_t len, const GradTape<float>& tape,
                                            const ForwardGraph<float>& g) {
    const auto& logits = tape.value(g.logits);
    for (std::size_t r = 0; r < len; ++r) loss += row_loss(logits, r, tokens[start + r + 1]);
  });
  return loss / static_cast<double>(n_tokens);
}

}  // namespace bdh
