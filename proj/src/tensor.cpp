#include "spq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace spq {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool broadcast_compatible(const Shape& from, const Shape& to) {
  if (from.size() != to.size()) return false;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i] != to[i] && from[i] != 1) return false;
  }
  return true;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("broadcast: rank mismatch " + shape_string(a) + " vs " +
                                shape_string(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_string(a) + " vs " +
                                  shape_string(b));
    }
  }
  return out;
}

BroadcastIndexer::BroadcastIndexer(const Shape& source, const Shape& target)
    : target_dims_(target), source_strides_(target.size(), 0) {
  if (!broadcast_compatible(source, target)) {
    throw std::invalid_argument("broadcast: " + shape_string(source) + " is not compatible with " +
                                shape_string(target));
  }
  identity_ = source == target;
  std::size_t stride = 1;
  for (std::size_t i = source.size(); i-- > 0;) {
    source_strides_[i] = source[i] == 1 ? 0 : stride;
    stride *= source[i];
  }
}

std::size_t BroadcastIndexer::operator()(std::size_t target_index) const {
  if (identity_) return target_index;
  std::size_t src = 0;
  for (std::size_t i = target_dims_.size(); i-- > 0;) {
    const std::size_t coord = target_index % target_dims_[i];
    target_index /= target_dims_[i];
    src += coord * source_strides_[i];
  }
  return src;
}

RationalTensor::RationalTensor(Shape shape, std::vector<double> values)
    : Dense(std::move(shape), std::move(values)) {
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("RationalTensor: non-finite value");
  }
}

RationalTensor RationalTensor::zeros(Shape shape) {
  const std::size_t n = numel(shape);
  return RationalTensor(std::move(shape), std::vector<double>(n, 0.0));
}

IntTensor::IntTensor(Shape shape, std::vector<std::int64_t> values)
    : Dense(std::move(shape), std::move(values)) {
  for (std::int64_t v : values_) {
    if (v == INT64_MIN) throw std::overflow_error("IntTensor: value outside symmetric lane");
  }
}

std::int64_t IntTensor::max_abs() const {
  std::int64_t m = 0;
  for (std::int64_t v : values_) m = std::max(m, v < 0 ? -v : v);
  return m;
}

ScaleTensor::ScaleTensor(Shape shape, std::vector<double> values)
    : Dense(std::move(shape), std::move(values)) {
  for (double v : values_) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("ScaleTensor: scales must be finite and strictly positive");
    }
  }
}

ScaleTensor ScaleTensor::uniform(std::size_t rank, double value) {
  return ScaleTensor(Shape(rank, 1), {value});
}

Precision::Precision(int bits) : bits_(bits) {
  if (bits < kMin || bits > kMax) {
    throw std::invalid_argument("precision must lie in [" + std::to_string(kMin) + ", " +
                                std::to_string(kMax) + "], got " + std::to_string(bits));
  }
}

ScaledTensor::ScaledTensor(IntTensor data, ScaleTensor scale, Precision precision)
    : data_(std::move(data)), scale_(std::move(scale)), precision_(precision) {
  if (!broadcast_compatible(scale_.shape(), data_.shape())) {
    throw std::invalid_argument("ScaledTensor: scale shape " + shape_string(scale_.shape()) +
                                " is not compatible with data shape " +
                                shape_string(data_.shape()));
  }
}

double ScaledTensor::scale_at(std::size_t i) const {
  if (scale_.size() == 1) return scale_[0];
  return scale_[BroadcastIndexer(scale_.shape(), data_.shape())(i)];
}

ScaleTensor ScaledTensor::dense_scale() const { return broadcast_scale(scale_, data_.shape()); }

namespace {

template <typename T>
std::vector<T> broadcast_dense(std::span<const T> values, const Shape& from, const Shape& to) {
  const BroadcastIndexer index(from, to);
  std::vector<T> out(numel(to));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = values[index(i)];
  return out;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

void check_permutation(std::span<const std::size_t> axes, std::size_t rank) {
  if (axes.size() != rank) {
    throw std::invalid_argument("transpose: permutation of length " + std::to_string(axes.size()) +
                                " for rank " + std::to_string(rank));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw std::invalid_argument("transpose: axes are not a permutation");
    seen[a] = true;
  }
}

template <typename T>
std::vector<T> permute(std::span<const T> values, const Shape& shape,
                       std::span<const std::size_t> axes, Shape& out_shape) {
  const std::size_t rank = shape.size();
  out_shape.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = shape[axes[i]];
  const auto in_strides = strides_of(shape);
  std::vector<T> out(values.size());
  std::vector<std::size_t> coord(rank, 0);
  for (std::size_t o = 0; o < out.size(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += coord[i] * in_strides[axes[i]];
    out[o] = values[src];
    for (std::size_t i = rank; i-- > 0;) {
      if (++coord[i] < out_shape[i]) break;
      coord[i] = 0;
    }
  }
  return out;
}

std::vector<std::size_t> last_two_swapped(std::size_t rank) {
  if (rank < 2) throw std::invalid_argument("transpose: rank must be at least 2");
  std::vector<std::size_t> axes(rank);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[rank - 1], axes[rank - 2]);
  return axes;
}

// Copies blocks of `parts` laid side by side along `axis`.
template <typename T>
std::vector<T> concat_dense(const std::vector<std::pair<std::span<const T>, Shape>>& parts,
                            std::size_t axis, Shape& out_shape) {
  out_shape = parts.front().second;
  out_shape[axis] = 0;
  for (const auto& [values, shape] : parts) out_shape[axis] += shape[axis];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  std::vector<T> out;
  out.reserve(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    for (const auto& [values, shape] : parts) {
      const std::size_t block = shape[axis] * inner;
      auto first = values.begin() + static_cast<std::ptrdiff_t>(o * block);
      out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(block));
    }
  }
  return out;
}

void check_concat_shapes(const std::vector<Shape>& shapes, std::size_t axis) {
  if (shapes.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t rank = shapes.front().size();
  if (axis >= rank) throw std::invalid_argument("concat: axis out of range");
  for (const auto& s : shapes) {
    if (s.size() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis && s[i] != shapes.front()[i]) {
        throw std::invalid_argument("concat: incompatible shapes " + shape_string(s) + " vs " +
                                    shape_string(shapes.front()));
      }
    }
  }
}

template <typename T>
std::vector<T> slice_dense(std::span<const T> values, const Shape& shape, std::size_t axis,
                           std::size_t begin, std::size_t end, Shape& out_shape) {
  if (axis >= shape.size()) throw std::invalid_argument("slice: axis out of range");
  if (begin >= end || end > shape[axis]) throw std::invalid_argument("slice: bad range");
  out_shape = shape;
  out_shape[axis] = end - begin;
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::vector<T> out;
  out.reserve(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    auto first = values.begin() + static_cast<std::ptrdiff_t>((o * shape[axis] + begin) * inner);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>((end - begin) * inner));
  }
  return out;
}

}  // namespace

ScaleTensor broadcast_scale(const ScaleTensor& s, const Shape& target) {
  if (s.shape() == target) return s;
  return ScaleTensor(target, broadcast_dense(s.values(), s.shape(), target));
}

IntTensor broadcast_payload(const IntTensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  return IntTensor(target, broadcast_dense(x.values(), x.shape(), target));
}

RationalTensor broadcast_values(const RationalTensor& r, const Shape& target) {
  if (r.shape() == target) return r;
  return RationalTensor(target, broadcast_dense(r.values(), r.shape(), target));
}

ScaledTensor transpose(const ScaledTensor& t, std::span<const std::size_t> axes) {
  check_permutation(axes, t.rank());
  Shape data_shape;
  Shape scale_shape;
  auto data = permute(t.data().values(), t.shape(), axes, data_shape);
  auto scale = permute(t.scale().values(), t.scale().shape(), axes, scale_shape);
  return ScaledTensor(IntTensor(std::move(data_shape), std::move(data)),
                      ScaleTensor(std::move(scale_shape), std::move(scale)), t.precision());
}

ScaledTensor transpose(const ScaledTensor& t) { return transpose(t, last_two_swapped(t.rank())); }

RationalTensor transpose(const RationalTensor& t, std::span<const std::size_t> axes) {
  check_permutation(axes, t.rank());
  Shape out_shape;
  auto values = permute(t.values(), t.shape(), axes, out_shape);
  return RationalTensor(std::move(out_shape), std::move(values));
}

RationalTensor transpose(const RationalTensor& t) {
  return transpose(t, last_two_swapped(t.rank()));
}

ScaledTensor concat(std::span<const ScaledTensor> ts, std::size_t axis) {
  std::vector<Shape> shapes;
  for (const auto& t : ts) shapes.push_back(t.shape());
  check_concat_shapes(shapes, axis);
  if (ts.size() == 1) return ts.front();
  const Precision precision = ts.front().precision();
  for (const auto& t : ts) {
    if (t.precision() != precision) throw std::invalid_argument("concat: mixed precision");
  }

  // A scale dim stays collapsed only if it is collapsed in every input; the
  // concatenation axis is always materialized so each part keeps its scales.
  const std::size_t rank = shapes.front().size();
  std::vector<ScaleTensor> scales;
  for (const auto& t : ts) {
    Shape target = t.scale().shape();
    for (std::size_t d = 0; d < rank; ++d) {
      bool any_full = d == axis;
      for (const auto& u : ts) any_full = any_full || u.scale().shape()[d] != 1;
      target[d] = any_full ? t.shape()[d] : 1;
    }
    scales.push_back(broadcast_scale(t.scale(), target));
  }

  std::vector<std::pair<std::span<const std::int64_t>, Shape>> data_parts;
  std::vector<std::pair<std::span<const double>, Shape>> scale_parts;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    data_parts.emplace_back(ts[i].data().values(), ts[i].shape());
    scale_parts.emplace_back(scales[i].values(), scales[i].shape());
  }
  Shape data_shape;
  Shape scale_shape;
  auto data = concat_dense(data_parts, axis, data_shape);
  auto scale = concat_dense(scale_parts, axis, scale_shape);
  return ScaledTensor(IntTensor(std::move(data_shape), std::move(data)),
                      ScaleTensor(std::move(scale_shape), std::move(scale)), precision);
}

RationalTensor concat(std::span<const RationalTensor> ts, std::size_t axis) {
  std::vector<Shape> shapes;
  for (const auto& t : ts) shapes.push_back(t.shape());
  check_concat_shapes(shapes, axis);
  std::vector<std::pair<std::span<const double>, Shape>> parts;
  for (const auto& t : ts) parts.emplace_back(t.values(), t.shape());
  Shape out_shape;
  auto values = concat_dense(parts, axis, out_shape);
  return RationalTensor(std::move(out_shape), std::move(values));
}

ScaledTensor slice(const ScaledTensor& t, std::size_t axis, std::size_t begin, std::size_t end) {
  Shape data_shape;
  auto data = slice_dense(t.data().values(), t.shape(), axis, begin, end, data_shape);
  Shape scale_shape = t.scale().shape();
  std::vector<double> scale(t.scale().values().begin(), t.scale().values().end());
  if (scale_shape[axis] != 1) {
    scale = slice_dense(t.scale().values(), t.scale().shape(), axis, begin, end, scale_shape);
  }
  return ScaledTensor(IntTensor(std::move(data_shape), std::move(data)),
                      ScaleTensor(std::move(scale_shape), std::move(scale)), t.precision());
}

RationalTensor slice(const RationalTensor& t, std::size_t axis, std::size_t begin,
                     std::size_t end) {
  Shape out_shape;
  auto values = slice_dense(t.values(), t.shape(), axis, begin, end, out_shape);
  return RationalTensor(std::move(out_shape), std::move(values));
}

namespace {

void check_rows(const Shape& table, std::span<const std::size_t> rows) {
  if (table.size() != 2) throw std::invalid_argument("gather_rows: table must be rank 2");
  if (rows.empty()) throw std::invalid_argument("gather_rows: no rows requested");
  for (std::size_t r : rows) {
    if (r >= table[0]) throw std::invalid_argument("gather_rows: row index out of range");
  }
}

template <typename T>
std::vector<T> gather_dense(std::span<const T> values, std::size_t width,
                            std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size() * width);
  for (std::size_t r : rows) {
    auto first = values.begin() + static_cast<std::ptrdiff_t>(r * width);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(width));
  }
  return out;
}

}  // namespace

ScaledTensor gather_rows(const ScaledTensor& table, std::span<const std::size_t> rows) {
  check_rows(table.shape(), rows);
  const std::size_t width = table.shape()[1];
  auto data = gather_dense(table.data().values(), width, rows);
  const Shape& ss = table.scale().shape();
  Shape scale_shape{ss[0] == 1 ? 1 : rows.size(), ss[1]};
  std::vector<double> scale(table.scale().values().begin(), table.scale().values().end());
  if (ss[0] != 1) scale = gather_dense(table.scale().values(), ss[1], rows);
  return ScaledTensor(IntTensor({rows.size(), width}, std::move(data)),
                      ScaleTensor(std::move(scale_shape), std::move(scale)), table.precision());
}

RationalTensor gather_rows(const RationalTensor& table, std::span<const std::size_t> rows) {
  check_rows(table.shape(), rows);
  return RationalTensor({rows.size(), table.shape()[1]},
                        gather_dense(table.values(), table.shape()[1], rows));
}

}  // namespace spq
