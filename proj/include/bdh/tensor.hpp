#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bdh {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Dense row-major array. Rank-0 is not used; scalars are shape {1}.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);
  BasicTensor(Shape shape, std::initializer_list<T> data);

  static BasicTensor from_matrix(const RowMatrix<T>& m);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view: all leading axes flattened into rows, last axis is columns.
  std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  MatrixMap<T> mat() { return MatrixMap<T>(data_.data(), rows(), cols()); }
  ConstMatrixMap<T> mat() const { return ConstMatrixMap<T>(data_.data(), rows(), cols()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;

  // Slice along axis 0; the result has rank-1 lower (or {cols} for a matrix).
  BasicTensor slice(std::size_t index) const;
  void set_slice(std::size_t index, const BasicTensor& value);
  BasicTensor reshaped(Shape shape) const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;
  void fill(T value);

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& v, double eps);
// Rotates every row of x (all rows share the position).
template <typename T>
BasicTensor<T> rope_rotate(const BasicTensor<T>& x, std::int64_t position, const BasicTensor<T>& freqs);
// Row r of x is rotated by positions[r].
template <typename T>
BasicTensor<T> rope_rotate_rows(const BasicTensor<T>& x, std::span<const std::int64_t> positions,
                                const BasicTensor<T>& freqs);
template <typename T>
BasicTensor<T> alibi_decay(const BasicTensor<T>& state, const BasicTensor<T>& gamma_per_slot);
template <typename T>
double cross_entropy_logits(const BasicTensor<T>& logits, std::span<const int> targets);

// Below this temperature sampling is greedy with ties going to the lowest index.
inline constexpr double kGreedyTemperature = 1e-4;
int sample_categorical(std::span<const float> logits, double temperature, Rng& rng);
int sample_categorical(const Tensor& logits, double temperature, Rng& rng);

// cos/sin of position * freq, evaluated in double so every code path agrees.
inline void rope_angle(std::int64_t position, double freq, double& c, double& s) {
  const double angle = static_cast<double>(position) * freq;
  c = std::cos(angle);
  s = std::sin(angle);
}

// cos/sin of every (row position, pair frequency), built once and reused by
// every layer and by the backward pass.
template <typename T>
struct RotationTable {
  std::size_t rows = 0, pairs = 0;
  std::vector<T> cos, sin;  // rows x pairs

  RotationTable(std::span<const std::int64_t> positions, const BasicTensor<T>& freqs);
  // inverse rotates by the negated angles.
  BasicTensor<T> apply(const BasicTensor<T>& x, bool inverse) const;
};

template <typename T>
BasicTensor<T> random_normal(Shape shape, double stddev, Rng& rng);
template <typename T>
BasicTensor<T> random_uniform(Shape shape, double lo, double hi, Rng& rng);

}  // namespace bdh
