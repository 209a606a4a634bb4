#include <algorithm>
#include <cmath>

#include "bdh/analysis.hpp"

namespace bdh {

DenseMatrix extract_ffn_graph(const ModelParams& params, std::size_t head_a, std::size_t head_b, Decoder which) {
  const auto& c = params.config;
  if (head_a >= c.heads || head_b >= c.heads) throw IndexError("head index out of range");
  const std::size_t N = c.neurons_per_head();
  // rows of head_a's decoder (N x d) times head_b's slice of the encoder (d x N)
  const auto& dec = which == Decoder::X ? params.decoder_x : params.decoder_y;
  const auto block = dec.slice(head_a);  // d x N
  DenseMatrix D(N, c.d), E(c.d, N);
  for (std::size_t a = 0; a < c.d; ++a)
    for (std::size_t k = 0; k < N; ++k) {
      D(k, a) = block(a, k);
      E(a, k) = params.encoder(head_b * N + k, a);
    }
  return D * E;
}

SparseGraph threshold_graph(const DenseMatrix& g, double beta) {
  if (!(beta >= 0)) throw ParameterError("beta must be >= 0");
  if (g.rows() != g.cols()) throw DimensionError("threshold_graph needs a square matrix");
  SparseGraph out(static_cast<std::size_t>(g.rows()));
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      if (g(i, j) >= beta && g(i, j) != 0.0) out.add_edge(i, j, g(i, j));
  return out;
}

double ElementHistogram::total() const {
  double s = 0;
  for (double c : counts) s += c;
  return s;
}

double ElementHistogram::skew_mass() const {
  double s = 0;
  for (double c : skew) s += c;
  return s;
}

ElementHistogram element_histogram(const DenseMatrix& g, std::size_t bins) {
  if (bins < 10) throw ParameterError("element_histogram needs at least 10 bins");
  // Even bin count so every bin has a mirror image around 0.
  bins += bins % 2;
  double range = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
  if (!(range > 0)) range = 1.0;
  ElementHistogram h;
  h.edges.resize(bins + 1);
  for (std::size_t k = 0; k <= bins; ++k) h.edges[k] = -range + 2.0 * range * static_cast<double>(k) / bins;
  h.counts.assign(bins, 0.0);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double x = g.data()[i];
    auto k = static_cast<std::size_t>(std::floor((x + range) / (2.0 * range) * static_cast<double>(bins)));
    h.counts[std::min(k, bins - 1)] += 1;
  }
  h.symmetric.resize(bins);
  h.skew.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    h.symmetric[k] = std::min(h.counts[k], h.counts[bins - 1 - k]);
    h.skew[k] = h.counts[k] - h.symmetric[k];
  }
  return h;
}

}  // namespace bdh
