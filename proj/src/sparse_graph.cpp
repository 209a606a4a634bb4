#include "bdh/sparse_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bdh {

SparseGraph::SparseGraph(std::size_t n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)) { validate(); }

SparseGraph SparseGraph::from_dense(const DenseMatrix& m, double drop_below) {
  if (m.rows() != m.cols()) throw DimensionError("graph matrix must be square");
  SparseGraph g(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (std::abs(m(i, j)) > drop_below) g.edges_.push_back({std::size_t(i), std::size_t(j), m(i, j)});
  return g;
}

void SparseGraph::add_edge(std::size_t i, std::size_t j, double w) {
  if (i >= n_ || j >= n_) throw IndexError("edge endpoint out of range");
  edges_.push_back({i, j, w});
}

void SparseGraph::validate() const {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(edges_.size());
  for (const auto& e : edges_) {
    if (e.i >= n_ || e.j >= n_) throw IndexError("edge endpoint out of range");
    if (!std::isfinite(e.w)) throw ParameterError("edge weight is not finite");
    pairs.emplace_back(e.i, e.j);
  }
  std::sort(pairs.begin(), pairs.end());
  if (std::adjacent_find(pairs.begin(), pairs.end()) != pairs.end()) throw ParameterError("duplicate edge");
}

bool SparseGraph::nonnegative() const {
  return std::all_of(edges_.begin(), edges_.end(), [](const Edge& e) { return e.w >= 0; });
}

void SparseGraph::require_nonnegative(const std::string& what) const {
  if (!nonnegative()) throw ParameterError(what + " has a negative edge weight");
}

DenseMatrix SparseGraph::to_dense() const {
  DenseMatrix m = DenseMatrix::Zero(n_, n_);
  for (const auto& e : edges_) m(e.i, e.j) += e.w;
  return m;
}

std::vector<double> SparseGraph::apply(const std::vector<double>& z) const {
  if (z.size() != n_) throw DimensionError("vector length does not match graph");
  std::vector<double> out(n_, 0.0);
  for (const auto& e : edges_) out[e.i] += e.w * z[e.j];
  return out;
}

double SparseGraph::total_weight() const {
  double s = 0;
  for (const auto& e : edges_) s += e.w;
  return s;
}

void SparseGraph::write(std::ostream& out) const {
  out << "bdh-graph v1 " << n_ << ' ' << edges_.size() << '\n';
  char buf[64];
  for (const auto& e : edges_) {
    std::snprintf(buf, sizeof buf, "%.9g", e.w);
    out << e.i << ' ' << e.j << ' ' << buf << '\n';
  }
}

SparseGraph SparseGraph::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty graph file");
  std::istringstream head(line);
  std::string magic, version;
  std::size_t n = 0, m = 0;
  if (!(head >> magic >> version >> n >> m) || magic != "bdh-graph" || version != "v1")
    throw FormatError("bad graph header: " + line);
  SparseGraph g(n);
  g.edges_.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    if (!std::getline(in, line)) throw FormatError("graph file truncated at edge " + std::to_string(k));
    std::istringstream row(line);
    long long i = -1, j = -1;
    double w = 0;
    std::string extra;
    if (!(row >> i >> j >> w) || (row >> extra) || i < 0 || j < 0)
      throw FormatError("bad edge line " + std::to_string(k + 2) + ": " + line);
    g.edges_.push_back({std::size_t(i), std::size_t(j), w});
  }
  g.validate();
  return g;
}

void SparseGraph::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write(out);
}

SparseGraph SparseGraph::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read(in);
}

}  // namespace bdh
