#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bdh/model.hpp"
#include "bdh/sparse_graph.hpp"

namespace bdh {

// Parameters of the local edge-reweighting dynamics. All graph weights are >= 0.
// u holds one retention factor per gs edge (same order as gs.edges()): at each
// read round sigma <- u * sigma, so u = 1 keeps the state and u = 0 clears it.
struct KernelModel {
  std::size_t n = 0;
  std::size_t layers = 1;
  SparseGraph gx_e, gx_i, gy_e, gy_i, gs;
  std::vector<double> u;

  void validate() const;
};

// Multipliers on the four rule families. All 1 for the real dynamics; anything
// else is a deliberately broken kernel used to check that tests can fail.
struct KernelRates {
  double read = 1.0;
  double hebbian = 1.0;
  double gy = 1.0;
  double gx = 1.0;
};

struct KernelState {
  std::vector<double> X, Y, A, Xe, Xi, Ye, Yi;
  std::vector<std::vector<double>> sigma;  // [layer][gs edge]
  std::uint64_t round = 0;
};

KernelState initial_state(const KernelModel& model);

// One synchronous round: communication reads the pre-round state and commits,
// then the node-local computation of the same column runs.
void run_round(const KernelModel& model, KernelState& state, const KernelRates& rates = {});

// Loads x_in into X at a token boundary and runs 4L rounds. Returns X.
// A non-empty y_in also replaces Y (the value fed to layer 0's Hebbian update);
// when empty, Y carries over from the previous token's last layer.
std::vector<double> step_token(const KernelModel& model, KernelState& state, std::span<const double> x_in,
                               std::span<const double> y_in = {}, const KernelRates& rates = {});

struct NormfreeTrace {
  std::vector<std::vector<double>> x_out;       // per token
  std::vector<std::vector<DenseMatrix>> sigma;  // per token, per layer, after the token
};

// Dense reference for the layer-norm-free state equations (no rotation):
//   a = sigma_l x;  sigma_l <- u .* sigma_l + (y x^T) .* gs;  y <- relu(gy a) .* x;  x <- x + relu(gx y)
// y starts as y_inputs[t] when given, else carries over from the previous token.
struct KernelInputs {
  std::vector<std::vector<double>> x;
  std::vector<std::vector<double>> y;  // empty, or one per token
};

NormfreeTrace normfree_forward(const DenseMatrix& gx, const DenseMatrix& gy, const DenseMatrix& gs,
                               const DenseMatrix& u, std::size_t layers, const KernelInputs& inputs);

// Max abs difference over X outputs and sigma entries between the kernel and
// the dense reference on the same inputs.
double verify_equivalence(const KernelModel& model, const KernelInputs& inputs, const KernelRates& rates = {});

// Random instances for equivalence checks.
SparseGraph random_sparse_graph(std::size_t n, double density, double max_w, Rng& rng);
// Sparse random kernel with weights scaled so activity stays O(1).
KernelModel random_kernel_model(std::size_t n, std::size_t layers, Rng& rng);
// About 60% of entries active, values in [0, 1).
std::vector<double> random_activity(std::size_t n, Rng& rng);
KernelInputs random_kernel_inputs(std::size_t n, std::size_t tokens, Rng& rng);

inline constexpr std::size_t kDenseNeuronLimit = 2048;

// Neuron-level matrices of a tensor model (heads flattened): Dx, Dy are n x d, E is d x n.
struct NeuronMatrices {
  DenseMatrix Dx, Dy, E;
};
NeuronMatrices neuron_matrices(const ModelParams& params);

// Dense graph form: G_x = Dx E and G_y = Dy E split into positive/negative
// parts, complete gs, retention per edge from the key neuron's head decay.
KernelModel from_tensor_model(const ModelParams& params);

}  // namespace bdh
