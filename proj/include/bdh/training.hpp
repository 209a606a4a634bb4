#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdh/model.hpp"
#include "bdh/tasks.hpp"

namespace bdh {

struct TrainConfig {
  double lr_peak = 1e-3;
  std::size_t warmup_steps = 1000;
  double lr_final = 1e-4;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  std::size_t seq_len = 256;
  std::size_t batch_size = 1;
  std::size_t steps = 1000;
  bool detach_attention = false;
  std::uint64_t seed = 0;
  // Record per-layer y sparsity every this many steps (0: never).
  std::size_t sparsity_every = 0;

  void validate() const;
};

double lr_at(std::size_t step, const TrainConfig& config);

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;  // before clipping
  std::vector<double> sparsity;  // nonzero fraction of y per layer; empty when not sampled
};

struct TrainMetrics {
  std::vector<StepMetrics> steps;
};

struct TrainResult {
  ModelParams params;
  TrainMetrics metrics;
};

struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& what, ModelParams last_good, std::size_t step, TrainMetrics metrics)
      : std::runtime_error(what), last_good(std::move(last_good)), step(step), metrics(std::move(metrics)) {}
  ModelParams last_good;
  std::size_t step;
  TrainMetrics metrics;
};

// Decoupled-weight-decay Adam over the trainable tensors.
class AdamW {
 public:
  AdamW(const ModelParams& params, double beta1 = 0.9, double beta2 = 0.95, double eps = 1e-8);
  void step(ModelParams& params, const ModelParams& grads, double lr, double weight_decay);
  std::size_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

double global_grad_norm(const ModelParams& grads);
// Scales grads so their global L2 norm is at most clip_norm. Returns the norm before clipping.
double clip_global_norm(ModelParams& grads, double clip_norm);

using StepCallback = std::function<void(const StepMetrics&, const ModelParams&)>;

// TBPTT: each batch stream keeps its attention state across minibatches while
// gradients stop at minibatch boundaries. Throws TrainingDiverged on a non-finite loss.
TrainResult train(ModelParams params, const TaskStream& stream, const TrainConfig& config,
                  const StepCallback& on_step = {});

// Greedy next-token accuracy and y activity on a fresh repetition stream,
// evaluated as one continuous sequence (state carried across chunks).
struct RepetitionReport {
  double accuracy_repetition = 0;  // repetitions 2..reps
  double accuracy_introduction = 0;
  double accuracy_warmup = 0;
  std::vector<double> sparsity_introduction;  // per layer, mean nonzero fraction of y
  std::vector<double> sparsity_repetition;
  std::vector<double> sparsity_warmup;
  double mean_loss = 0;
};

RepetitionReport evaluate_repetition(const ModelParams& params, std::uint64_t seed, std::size_t periods,
                                     std::size_t chunk = 256, RepetitionSpec spec = {});

// Mean next-token loss over a stream evaluated as one continuous sequence.
double evaluate_loss(const ModelParams& params, TaskStream& stream, std::size_t tokens, std::size_t chunk = 256);

}  // namespace bdh
