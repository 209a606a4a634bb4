#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdh/tensor.hpp"

namespace bdh {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SizeError : std::length_error {
  using std::length_error::length_error;
};

using DenseMatrix = RowMatrix<double>;

struct Edge {
  std::size_t i;
  std::size_t j;
  double w;
  bool operator==(const Edge&) const = default;
};

// Directed weighted graph. Edge (i, j, w) is matrix entry M(i, j) = w.
class SparseGraph {
 public:
  SparseGraph() = default;
  explicit SparseGraph(std::size_t n) : n_(n) {}
  SparseGraph(std::size_t n, std::vector<Edge> edges);

  // Nonzero entries of m; entries with |w| <= drop_below are skipped.
  static SparseGraph from_dense(const DenseMatrix& m, double drop_below = 0.0);

  std::size_t n() const { return n_; }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }

  // Appends without the duplicate check; call validate() after bulk construction.
  void add_edge(std::size_t i, std::size_t j, double w);
  // Bounds, finiteness and duplicate pairs.
  void validate() const;
  bool nonnegative() const;
  void require_nonnegative(const std::string& what) const;

  DenseMatrix to_dense() const;
  // y = M z
  std::vector<double> apply(const std::vector<double>& z) const;
  double total_weight() const;

  void write(std::ostream& out) const;
  static SparseGraph read(std::istream& in);
  void save(const std::string& path) const;
  static SparseGraph load(const std::string& path);

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
};

}  // namespace bdh
