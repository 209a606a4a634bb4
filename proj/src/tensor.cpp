#include "bdh/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace bdh {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::initializer_list<T> data)
    : BasicTensor(std::move(shape), std::vector<T>(data)) {}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_matrix(const RowMatrix<T>& m) {
  BasicTensor out({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  out.mat() = m;
  return out;
}

template <typename T>
T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) {
  return const_cast<T&>(std::as_const(*this).at(index));
}

template <typename T>
const T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw IndexError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw IndexError("index out of range on axis " + std::to_string(axis));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return data_[flat];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::slice(std::size_t index) const {
  if (index >= shape_.at(0)) throw IndexError("slice index out of range");
  Shape sub(shape_.begin() + 1, shape_.end());
  if (sub.empty()) sub = {1};
  const std::size_t stride = data_.size() / shape_[0];
  return BasicTensor(sub, std::vector<T>(data_.begin() + index * stride, data_.begin() + (index + 1) * stride));
}

template <typename T>
void BasicTensor<T>::set_slice(std::size_t index, const BasicTensor& value) {
  if (index >= shape_.at(0)) throw IndexError("slice index out of range");
  const std::size_t stride = data_.size() / shape_[0];
  if (value.size() != stride) throw DimensionError("slice size mismatch");
  std::copy(value.data_.begin(), value.data_.end(), data_.begin() + index * stride);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) throw DimensionError("reshape changes element count");
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects matrices");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  BasicTensor<T> out({a.dim(0), b.dim(1)});
  out.mat().noalias() = a.mat() * b.mat();
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  BasicTensor<T> out = a;
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& v, double eps) {
  if (v.cols() < 2) throw DimensionError("layer_norm needs at least two features");
  BasicTensor<T> out(v.shape());
  const std::size_t d = v.cols();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto in = v.row(r);
    double mean = 0;
    for (auto x : in) mean += x;
    mean /= static_cast<double>(d);
    double var = 0;
    for (auto x : in) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) o[c] = static_cast<T>((in[c] - mean) * inv);
  }
  return out;
}

namespace {

template <typename T>
void rotate_row(std::span<T> row, std::int64_t position, const BasicTensor<T>& freqs) {
  for (std::size_t p = 0; p < freqs.size(); ++p) {
    double c, s;
    rope_angle(position, static_cast<double>(freqs[p]), c, s);
    const double a = row[2 * p], b = row[2 * p + 1];
    row[2 * p] = static_cast<T>(c * a - s * b);
    row[2 * p + 1] = static_cast<T>(s * a + c * b);
  }
}

template <typename T>
void check_rope(const BasicTensor<T>& x, const BasicTensor<T>& freqs) {
  if (x.cols() % 2 != 0) throw DimensionError("rope_rotate needs an even last axis");
  if (freqs.size() != x.cols() / 2) throw DimensionError("rope_rotate expects one frequency per pair");
}

}  // namespace

template <typename T>
BasicTensor<T> rope_rotate(const BasicTensor<T>& x, std::int64_t position, const BasicTensor<T>& freqs) {
  check_rope(x, freqs);
  BasicTensor<T> out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) rotate_row(out.row(r), position, freqs);
  return out;
}

template <typename T>
BasicTensor<T> rope_rotate_rows(const BasicTensor<T>& x, std::span<const std::int64_t> positions,
                                const BasicTensor<T>& freqs) {
  check_rope(x, freqs);
  if (positions.size() != x.rows()) throw DimensionError("one position per row required");
  BasicTensor<T> out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) rotate_row(out.row(r), positions[r], freqs);
  return out;
}

template <typename T>
RotationTable<T>::RotationTable(std::span<const std::int64_t> positions, const BasicTensor<T>& freqs)
    : rows(positions.size()), pairs(freqs.size()), cos(rows * pairs), sin(rows * pairs) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < pairs; ++p) {
      double c, s;
      rope_angle(positions[r], static_cast<double>(freqs[p]), c, s);
      cos[r * pairs + p] = static_cast<T>(c);
      sin[r * pairs + p] = static_cast<T>(s);
    }
}

template <typename T>
BasicTensor<T> RotationTable<T>::apply(const BasicTensor<T>& x, bool inverse) const {
  if (x.rows() != rows || x.cols() != 2 * pairs) throw DimensionError("rotation table shape mismatch");
  BasicTensor<T> out(x.shape());
  const T sign = inverse ? T(-1) : T(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * 2 * pairs;
    T* o = out.data() + r * 2 * pairs;
    const T* c = cos.data() + r * pairs;
    const T* s = sin.data() + r * pairs;
    for (std::size_t p = 0; p < pairs; ++p) {
      const T a = in[2 * p], b = in[2 * p + 1], sn = sign * s[p];
      o[2 * p] = c[p] * a - sn * b;
      o[2 * p + 1] = sn * a + c[p] * b;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> alibi_decay(const BasicTensor<T>& state, const BasicTensor<T>& gamma_per_slot) {
  if (gamma_per_slot.size() != state.dim(0)) throw DimensionError("one gamma per leading slot required");
  for (auto g : gamma_per_slot.values())
    if (!(g > T(0) && g <= T(1))) throw ParameterError("alibi gamma must lie in (0, 1]");
  BasicTensor<T> out = state;
  const std::size_t stride = state.size() / state.dim(0);
  for (std::size_t s = 0; s < state.dim(0); ++s)
    for (std::size_t k = 0; k < stride; ++k) out[s * stride + k] *= gamma_per_slot[s];
  return out;
}

template <typename T>
double cross_entropy_logits(const BasicTensor<T>& logits, std::span<const int> targets) {
  if (logits.rows() != targets.size()) throw DimensionError("one target per logit row required");
  const std::size_t V = logits.cols();
  double total = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int tgt = targets[r];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= V) throw IndexError("target out of range");
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (auto v : row) z += std::exp(static_cast<double>(v) - mx);
    total += std::log(z) + mx - static_cast<double>(row[tgt]);
  }
  return total / static_cast<double>(targets.size());
}

int sample_categorical(std::span<const float> logits, double temperature, Rng& rng) {
  if (!(temperature > 0)) throw ParameterError("temperature must be positive");
  if (logits.empty()) throw DimensionError("empty logits");
  const auto best = std::max_element(logits.begin(), logits.end());  // first maximum
  if (temperature < kGreedyTemperature) return static_cast<int>(best - logits.begin());
  std::vector<double> weights(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    weights[i] = std::exp((static_cast<double>(logits[i]) - *best) / temperature);
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return dist(rng);
}

int sample_categorical(const Tensor& logits, double temperature, Rng& rng) {
  return sample_categorical(std::span<const float>(logits.data(), logits.size()), temperature, rng);
}

template <typename T>
BasicTensor<T> random_normal(Shape shape, double stddev, Rng& rng) {
  BasicTensor<T> out(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
BasicTensor<T> random_uniform(Shape shape, double lo, double hi, Rng& rng) {
  BasicTensor<T> out(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

#define BDH_INSTANTIATE(T)                                                                          \
  template class BasicTensor<T>;                                                                    \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                              \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, double);                                \
  template BasicTensor<T> rope_rotate(const BasicTensor<T>&, std::int64_t, const BasicTensor<T>&);  \
  template BasicTensor<T> rope_rotate_rows(const BasicTensor<T>&, std::span<const std::int64_t>,    \
                                           const BasicTensor<T>&);                                  \
  template BasicTensor<T> alibi_decay(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template double cross_entropy_logits(const BasicTensor<T>&, std::span<const int>);                \
  template BasicTensor<T> random_normal<T>(Shape, double, Rng&);                                    \
  template BasicTensor<T> random_uniform<T>(Shape, double, double, Rng&);

BDH_INSTANTIATE(float)
BDH_INSTANTIATE(double)
template struct RotationTable<float>;
template struct RotationTable<double>;

}  // namespace bdh
