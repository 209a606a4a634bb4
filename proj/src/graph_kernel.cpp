#include "bdh/graph_kernel.hpp"

#include <algorithm>
#include <cmath>

namespace bdh {

namespace {

void check_graph(const SparseGraph& g, std::size_t n, const char* name) {
  if (g.n() != n) throw DimensionError(std::string(name) + " has the wrong node count");
  g.validate();
  g.require_nonnegative(name);
}

void zero(std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); }

DenseMatrix positive_part(const DenseMatrix& m) { return m.cwiseMax(0.0); }
DenseMatrix negative_part(const DenseMatrix& m) { return (-m).cwiseMax(0.0); }

}  // namespace

void KernelModel::validate() const {
  if (layers == 0) throw ParameterError("kernel needs at least one layer");
  check_graph(gx_e, n, "gx_e");
  check_graph(gx_i, n, "gx_i");
  check_graph(gy_e, n, "gy_e");
  check_graph(gy_i, n, "gy_i");
  check_graph(gs, n, "gs");
  if (u.size() != gs.edge_count()) throw DimensionError("u needs one entry per gs edge");
  for (double r : u)
    if (!(r >= 0.0 && r <= 1.0)) throw ParameterError("retention u must lie in [0, 1]");
}

KernelState initial_state(const KernelModel& model) {
  KernelState s;
  for (auto* v : {&s.X, &s.Y, &s.A, &s.Xe, &s.Xi, &s.Ye, &s.Yi}) v->assign(model.n, 0.0);
  s.sigma.assign(model.layers, std::vector<double>(model.gs.edge_count(), 0.0));
  return s;
}

void run_round(const KernelModel& m, KernelState& s, const KernelRates& rates) {
  const std::size_t phase = s.round % 4;
  const std::size_t layer = (s.round / 4) % m.layers;
  auto& sigma = s.sigma[layer];
  const auto& gs = m.gs.edges();
  switch (phase) {
    case 0: {
      // X(j), sigma(i,j) -> A(i); then damping and reset of the X counters.
      for (std::size_t k = 0; k < gs.size(); ++k) s.A[gs[k].i] += rates.read * sigma[k] * s.X[gs[k].j];
      for (std::size_t k = 0; k < gs.size(); ++k) sigma[k] *= m.u[k];
      zero(s.Xe);
      zero(s.Xi);
      break;
    }
    case 1: {
      // Y(i), X(j) -> sigma(i,j), the Hebbian increment.
      for (std::size_t k = 0; k < gs.size(); ++k)
        sigma[k] += rates.hebbian * gs[k].w * s.Y[gs[k].i] * s.X[gs[k].j];
      zero(s.Y);
      zero(s.Ye);
      zero(s.Yi);
      break;
    }
    case 2: {
      for (const auto& e : m.gy_e.edges()) s.Ye[e.i] += rates.gy * e.w * s.A[e.j];
      for (const auto& e : m.gy_i.edges()) s.Yi[e.i] += rates.gy * e.w * s.A[e.j];
      for (std::size_t i = 0; i < m.n; ++i) s.Y[i] = std::max(0.0, s.Ye[i] - s.Yi[i]) * s.X[i];
      zero(s.A);
      break;
    }
    default: {
      for (const auto& e : m.gx_e.edges()) s.Xe[e.i] += rates.gx * e.w * s.Y[e.j];
      for (const auto& e : m.gx_i.edges()) s.Xi[e.i] += rates.gx * e.w * s.Y[e.j];
      for (std::size_t i = 0; i < m.n; ++i) s.X[i] += std::max(0.0, s.Xe[i] - s.Xi[i]);
      break;
    }
  }
  ++s.round;
}

std::vector<double> step_token(const KernelModel& model, KernelState& state, std::span<const double> x_in,
                               std::span<const double> y_in, const KernelRates& rates) {
  if (x_in.size() != model.n) throw DimensionError("input length does not match the kernel");
  if (state.round % (4 * model.layers) != 0) throw UsageError("tokens enter only at a 4L-round boundary");
  for (double v : x_in)
    if (!(v >= 0.0)) throw ParameterError("kernel input must be nonnegative");
  if (!y_in.empty()) {
    if (y_in.size() != model.n) throw DimensionError("y seed length does not match the kernel");
    for (double v : y_in)
      if (!(v >= 0.0)) throw ParameterError("kernel input must be nonnegative");
    state.Y.assign(y_in.begin(), y_in.end());
  }
  state.X.assign(x_in.begin(), x_in.end());
  for (std::size_t r = 0; r < 4 * model.layers; ++r) run_round(model, state, rates);
  return state.X;
}

NormfreeTrace normfree_forward(const DenseMatrix& gx, const DenseMatrix& gy, const DenseMatrix& gs,
                               const DenseMatrix& u, std::size_t layers, const KernelInputs& inputs) {
  const Eigen::Index n = gx.rows();
  for (const DenseMatrix* m : {&gx, &gy, &gs, &u})
    if (m->rows() != n || m->cols() != n) throw DimensionError("dense graph shape mismatch");
  if (layers == 0) throw ParameterError("need at least one layer");
  using Vec = Eigen::VectorXd;
  std::vector<DenseMatrix> sigma(layers, DenseMatrix::Zero(n, n));
  Vec y = Vec::Zero(n);
  NormfreeTrace trace;
  if (!inputs.y.empty() && inputs.y.size() != inputs.x.size()) throw DimensionError("need one y seed per token");
  for (std::size_t t = 0; t < inputs.x.size(); ++t) {
    const auto& in = inputs.x[t];
    if (static_cast<Eigen::Index>(in.size()) != n) throw DimensionError("input length mismatch");
    if (!inputs.y.empty()) {
      if (static_cast<Eigen::Index>(inputs.y[t].size()) != n) throw DimensionError("input length mismatch");
      y = Eigen::Map<const Vec>(inputs.y[t].data(), n);
    }
    Vec x = Eigen::Map<const Vec>(in.data(), n);
    for (std::size_t l = 0; l < layers; ++l) {
      Vec a = sigma[l] * x;
      sigma[l] = u.cwiseProduct(sigma[l]) + (y * x.transpose()).cwiseProduct(gs);
      y = (gy * a).cwiseMax(0.0).cwiseProduct(x);
      x += (gx * y).cwiseMax(0.0);
    }
    trace.x_out.emplace_back(x.data(), x.data() + n);
    trace.sigma.push_back(sigma);
  }
  return trace;
}

double verify_equivalence(const KernelModel& model, const KernelInputs& inputs, const KernelRates& rates) {
  model.validate();
  const DenseMatrix gx = model.gx_e.to_dense() - model.gx_i.to_dense();
  const DenseMatrix gy = model.gy_e.to_dense() - model.gy_i.to_dense();
  const DenseMatrix gs = model.gs.to_dense();
  DenseMatrix u = DenseMatrix::Ones(model.n, model.n);
  for (std::size_t k = 0; k < model.gs.edge_count(); ++k) {
    const auto& e = model.gs.edges()[k];
    u(e.i, e.j) = model.u[k];
  }
  const auto oracle = normfree_forward(gx, gy, gs, u, model.layers, inputs);

  auto state = initial_state(model);
  double worst = 0;
  for (std::size_t t = 0; t < inputs.x.size(); ++t) {
    std::span<const double> y_seed;
    if (!inputs.y.empty()) y_seed = inputs.y[t];
    const auto x = step_token(model, state, inputs.x[t], y_seed, rates);
    for (std::size_t i = 0; i < model.n; ++i) worst = std::max(worst, std::abs(x[i] - oracle.x_out[t][i]));
    for (std::size_t l = 0; l < model.layers; ++l)
      for (std::size_t k = 0; k < model.gs.edge_count(); ++k) {
        const auto& e = model.gs.edges()[k];
        worst = std::max(worst, std::abs(state.sigma[l][k] - oracle.sigma[t][l](e.i, e.j)));
      }
  }
  return worst;
}

NeuronMatrices neuron_matrices(const ModelParams& params) {
  const auto& c = params.config;
  const std::size_t n = c.n, d = c.d, N = c.neurons_per_head();
  NeuronMatrices m{DenseMatrix(n, d), DenseMatrix(n, d), params.encoder.mat().cast<double>().transpose()};
  for (std::size_t h = 0; h < c.heads; ++h)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t k = 0; k < N; ++k) {
        m.Dx(h * N + k, a) = params.decoder_x.at({h, a, k});
        m.Dy(h * N + k, a) = params.decoder_y.at({h, a, k});
      }
  return m;
}

KernelModel from_tensor_model(const ModelParams& params) {
  const auto& c = params.config;
  c.validate();
  if (c.n > kDenseNeuronLimit)
    throw SizeError("dense graph form needs n <= " + std::to_string(kDenseNeuronLimit) +
                    "; use the sparsified attention construction instead");
  const auto m = neuron_matrices(params);
  const DenseMatrix gx = m.Dx * m.E;
  const DenseMatrix gy = m.Dy * m.E;
  KernelModel k;
  k.n = c.n;
  k.layers = c.layers;
  k.gx_e = SparseGraph::from_dense(positive_part(gx));
  k.gx_i = SparseGraph::from_dense(negative_part(gx));
  k.gy_e = SparseGraph::from_dense(positive_part(gy));
  k.gy_i = SparseGraph::from_dense(negative_part(gy));
  k.gs = SparseGraph(c.n);
  k.u.reserve(c.n * c.n);
  const std::size_t N = c.neurons_per_head();
  for (std::size_t i = 0; i < c.n; ++i)
    for (std::size_t j = 0; j < c.n; ++j) {
      k.gs.add_edge(i, j, 1.0);
      k.u.push_back(c.gamma(j / N));
    }
  return k;
}

SparseGraph random_sparse_graph(std::size_t n, double density, double max_w, Rng& rng) {
  std::bernoulli_distribution keep(density);
  std::uniform_real_distribution<double> w(0.0, max_w);
  SparseGraph g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (keep(rng)) g.add_edge(i, j, w(rng));
  return g;
}

KernelModel random_kernel_model(std::size_t n, std::size_t layers, Rng& rng) {
  const double p = 0.3, scale = 4.0 / (p * static_cast<double>(n));
  KernelModel m;
  m.n = n;
  m.layers = layers;
  m.gx_e = random_sparse_graph(n, p, scale, rng);
  m.gx_i = random_sparse_graph(n, p, scale, rng);
  m.gy_e = random_sparse_graph(n, p, scale, rng);
  m.gy_i = random_sparse_graph(n, p, 0.5 * scale, rng);
  m.gs = random_sparse_graph(n, 0.6, 1.0, rng);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  for (std::size_t k = 0; k < m.gs.edge_count(); ++k) m.u.push_back(u(rng));
  return m;
}

std::vector<double> random_activity(std::size_t n, Rng& rng) {
  std::bernoulli_distribution on(0.6);
  std::uniform_real_distribution<double> v(0.0, 1.0);
  std::vector<double> out(n, 0.0);
  for (auto& x : out)
    if (on(rng)) x = v(rng);
  return out;
}

KernelInputs random_kernel_inputs(std::size_t n, std::size_t tokens, Rng& rng) {
  KernelInputs in;
  for (std::size_t t = 0; t < tokens; ++t) {
    in.x.push_back(random_activity(n, rng));
    in.y.push_back(random_activity(n, rng));
  }
  return in;
}

}  // namespace bdh
