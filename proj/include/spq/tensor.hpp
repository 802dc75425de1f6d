#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spq {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// True when every dim of `from` equals the matching dim of `to` or is 1.
bool broadcast_compatible(const Shape& from, const Shape& to);

/// Elementwise broadcast of two same-rank shapes; throws on mismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b);

/// Maps a linear row-major index of `target` onto the linear index of a
/// broadcast-compatible `source` shape (collapsed dims have stride 0).
class BroadcastIndexer {
 public:
  BroadcastIndexer(const Shape& source, const Shape& target);
  std::size_t operator()(std::size_t target_index) const;

 private:
  std::vector<std::size_t> target_dims_;
  std::vector<std::size_t> source_strides_;
  bool identity_ = false;
};

namespace detail {

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    for (std::size_t d : shape_) {
      if (d == 0) throw std::invalid_argument("tensor: zero-sized dimension");
    }
    if (values_.size() != numel(shape_)) {
      throw std::invalid_argument("tensor: value count " + std::to_string(values_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::span<const T> values() const { return values_; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const Dense&) const = default;

 protected:
  Shape shape_;
  std::vector<T> values_;
};

}  // namespace detail

/// Dense real-valued tensor: references, oracles and parameters.
class RationalTensor : public detail::Dense<double> {
 public:
  RationalTensor() = default;
  RationalTensor(Shape shape, std::vector<double> values);
  static RationalTensor zeros(Shape shape);
  static RationalTensor scalar(double v) { return RationalTensor({1}, {v}); }
  bool operator==(const RationalTensor&) const = default;
};

/// Integer payload held in a 64-bit lane. The logical precision is only
/// enforced at protocol exits.
class IntTensor : public detail::Dense<std::int64_t> {
 public:
  IntTensor() = default;
  IntTensor(Shape shape, std::vector<std::int64_t> values);
  std::int64_t max_abs() const;
  bool operator==(const IntTensor&) const = default;
};

/// Strictly positive scales; collapsed dims are stored with size 1.
class ScaleTensor : public detail::Dense<double> {
 public:
  ScaleTensor() = default;
  ScaleTensor(Shape shape, std::vector<double> values);
  static ScaleTensor uniform(std::size_t rank, double value);
  bool operator==(const ScaleTensor&) const = default;
};

/// Logical bit precision p: payloads live in [-(2^p - 1), 2^p - 1].
class Precision {
 public:
  static constexpr int kMin = 2;
  static constexpr int kMax = 15;

  constexpr Precision() = default;
  explicit Precision(int bits);

  int bits() const { return bits_; }
  std::int64_t max_magnitude() const { return (std::int64_t{1} << bits_) - 1; }
  bool operator==(const Precision&) const = default;

 private:
  int bits_ = 7;
};

/// The pair {x, s}; D(x, s) = x / s.
class ScaledTensor {
 public:
  ScaledTensor() = default;
  ScaledTensor(IntTensor data, ScaleTensor scale, Precision precision = {});

  const IntTensor& data() const { return data_; }
  const ScaleTensor& scale() const { return scale_; }
  Precision precision() const { return precision_; }
  const Shape& shape() const { return data_.shape(); }
  std::size_t rank() const { return data_.rank(); }
  std::size_t size() const { return data_.size(); }

  /// Scale value paired with data element `i`.
  double scale_at(std::size_t i) const;
  ScaleTensor dense_scale() const;
  bool in_range() const { return data_.max_abs() <= precision_.max_magnitude(); }

  bool operator==(const ScaledTensor&) const = default;

 private:
  IntTensor data_;
  ScaleTensor scale_;
  Precision precision_;
};

ScaleTensor broadcast_scale(const ScaleTensor& s, const Shape& target);
IntTensor broadcast_payload(const IntTensor& x, const Shape& target);
RationalTensor broadcast_values(const RationalTensor& r, const Shape& target);

// Shape transformations. Payload and scale move together, so the
// de-quantized value is carried over without rounding.
ScaledTensor transpose(const ScaledTensor& t, std::span<const std::size_t> axes);
ScaledTensor transpose(const ScaledTensor& t);  // swaps the last two axes
RationalTensor transpose(const RationalTensor& t, std::span<const std::size_t> axes);
RationalTensor transpose(const RationalTensor& t);

ScaledTensor concat(std::span<const ScaledTensor> ts, std::size_t axis);
RationalTensor concat(std::span<const RationalTensor> ts, std::size_t axis);

/// Half-open range [begin, end) along `axis`.
ScaledTensor slice(const ScaledTensor& t, std::size_t axis, std::size_t begin, std::size_t end);
RationalTensor slice(const RationalTensor& t, std::size_t axis, std::size_t begin,
                     std::size_t end);

/// Rows of a rank-2 table; used for embedding lookup.
ScaledTensor gather_rows(const ScaledTensor& table, std::span<const std::size_t> rows);
RationalTensor gather_rows(const RationalTensor& table, std::span<const std::size_t> rows);

}  // namespace spq
