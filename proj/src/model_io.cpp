#include "spq/model_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

namespace spq {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'Q', '1'};
constexpr const char* kDegreeRecord = "poly.degree";
constexpr const char* kScaleSuffix = ".scale";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  bool done() const { return pos_ == in_.size(); }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - pos_) throw FormatError("model file: truncated at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <class U>
  U uint() {
    const auto s = take(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(s[i]) << (8 * i));
    return v;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

std::size_t checked_count(const Record& r) {
  const std::size_t n = numel(r.shape);
  if (r.bytes.size() != n * dtype_size(r.dtype)) {
    throw FormatError("model file: record '" + r.name + "' has " + std::to_string(r.bytes.size()) +
                      " bytes for shape " + shape_string(r.shape));
  }
  return n;
}

bool is_float(double v) { return static_cast<double>(static_cast<float>(v)) == v; }

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::I8: return 1;
    case DType::I16: return 2;
    case DType::I32: return 4;
    case DType::F64: return 8;
  }
  throw FormatError("model file: unknown dtype tag");
}

const Record* Container::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode(const Container& c) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint(c.header.version);
  w.uint(c.header.precision);
  w.uint(c.header.granularity);
  w.uint(c.header.layers);
  w.uint(c.header.d_model);
  w.uint(c.header.heads);
  w.uint(c.header.ffn);
  w.uint(c.header.vocab);
  for (const auto& r : c.records) {
    checked_count(r);
    if (r.shape.empty() || r.shape.size() > 255) throw FormatError("model file: bad rank for '" + r.name + "'");
    w.uint(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.uint(static_cast<std::uint8_t>(r.shape.size()));
    for (std::size_t d : r.shape) w.uint(static_cast<std::uint32_t>(d));
    w.uint(static_cast<std::uint8_t>(r.dtype));
    w.bytes(r.bytes.data(), r.bytes.size());
  }
  return w.take();
}

Container decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("model file: bad magic");
  Container c;
  c.header.version = r.uint<std::uint16_t>();
  if (c.header.version != kFormatVersion) {
    throw FormatError("model file: unsupported version " + std::to_string(c.header.version));
  }
  c.header.precision = r.uint<std::uint8_t>();
  c.header.granularity = r.uint<std::uint8_t>();
  c.header.layers = r.uint<std::uint32_t>();
  c.header.d_model = r.uint<std::uint32_t>();
  c.header.heads = r.uint<std::uint32_t>();
  c.header.ffn = r.uint<std::uint32_t>();
  c.header.vocab = r.uint<std::uint32_t>();
  while (!r.done()) {
    Record rec;
    const auto len = r.uint<std::uint32_t>();
    const auto name = r.take(len);
    rec.name.assign(name.begin(), name.end());
    const auto rank = r.uint<std::uint8_t>();
    if (rank == 0) throw FormatError("model file: record '" + rec.name + "' has rank 0");
    for (std::uint8_t i = 0; i < rank; ++i) {
      const auto d = r.uint<std::uint32_t>();
      if (d == 0) throw FormatError("model file: record '" + rec.name + "' has a zero dimension");
      rec.shape.push_back(d);
    }
    const auto tag = r.uint<std::uint8_t>();
    if (tag > static_cast<std::uint8_t>(DType::F64)) {
      throw FormatError("model file: record '" + rec.name + "' has unknown dtype " + std::to_string(tag));
    }
    rec.dtype = static_cast<DType>(tag);
    const std::size_t n = numel(rec.shape) * dtype_size(rec.dtype);
    const auto data = r.take(n);
    rec.bytes.assign(data.begin(), data.end());
    c.records.push_back(std::move(rec));
  }
  return c;
}

Record float_record(const std::string& name, const RationalTensor& t) {
  Record r{name, t.shape(), DType::F32, {}};
  r.bytes.reserve(t.size() * 4);
  for (double v : t.values()) put(r.bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return r;
}

Record int_record(const std::string& name, const IntTensor& t, DType dtype) {
  Record r{name, t.shape(), dtype, {}};
  const std::size_t width = dtype_size(dtype);
  const std::int64_t top = dtype == DType::I8 ? INT8_MAX : dtype == DType::I16 ? INT16_MAX : INT32_MAX;
  if (dtype == DType::F32 || dtype == DType::F64) throw std::invalid_argument("int_record: float dtype");
  for (std::int64_t v : t.values()) {
    if (v > top || v < -top - 1) {
      throw std::invalid_argument("int_record: value " + std::to_string(v) + " does not fit '" + name + "'");
    }
    const auto u = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < width; ++i) r.bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  return r;
}

Record scale_record(const std::string& name, const ScaleTensor& s) {
  bool floats = true;
  for (double v : s.values()) floats = floats && is_float(v);
  if (floats) return float_record(name, RationalTensor(s.shape(), {s.values().begin(), s.values().end()}));
  Record r{name, s.shape(), DType::F64, {}};
  for (double v : s.values()) put(r.bytes, std::bit_cast<std::uint64_t>(v));
  return r;
}

void append_scaled(Container& c, const std::string& name, const ScaledTensor& t) {
  c.records.push_back(int_record(name, t.data(), payload_dtype(t.precision())));
  c.records.push_back(scale_record(name + kScaleSuffix, t.scale()));
}

RationalTensor read_float(const Record& r) {
  const std::size_t n = checked_count(r);
  std::vector<double> v(n);
  if (r.dtype == DType::F32) {
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get<std::uint32_t>(&r.bytes[4 * i]));
  } else if (r.dtype == DType::F64) {
    for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(get<std::uint64_t>(&r.bytes[8 * i]));
  } else {
    throw FormatError("model file: record '" + r.name + "' is not floating point");
  }
  for (double x : v) {
    if (!std::isfinite(x)) throw FormatError("model file: record '" + r.name + "' holds a non-finite value");
  }
  return RationalTensor(r.shape, std::move(v));
}

IntTensor read_int(const Record& r) {
  const std::size_t n = checked_count(r);
  std::vector<std::int64_t> v(n);
  const std::uint8_t* p = r.bytes.data();
  switch (r.dtype) {
    case DType::I8:
      for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int8_t>(p[i]);
      break;
    case DType::I16:
      for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int16_t>(get<std::uint16_t>(p + 2 * i));
      break;
    case DType::I32:
      for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int32_t>(get<std::uint32_t>(p + 4 * i));
      break;
    default:
      throw FormatError("model file: record '" + r.name + "' is not an integer tensor");
  }
  return IntTensor(r.shape, std::move(v));
}

ScaleTensor read_scale(const Record& r) {
  const RationalTensor t = read_float(r);
  for (double v : t.values()) {
    if (!(v > 0)) throw FormatError("model file: scale record '" + r.name + "' is not positive");
  }
  return ScaleTensor(t.shape(), {t.values().begin(), t.values().end()});
}

ScaledTensor read_scaled(const Container& c, const std::string& name, Precision p) {
  const Record* x = c.find(name);
  const Record* s = c.find(name + kScaleSuffix);
  if (!x) throw FormatError("model file: missing record '" + name + "'");
  if (!s) throw FormatError("model file: record '" + name + "' has no scale sibling");
  IntTensor data = read_int(*x);
  ScaleTensor scale = read_scale(*s);
  if (!broadcast_compatible(scale.shape(), data.shape())) {
    throw FormatError("model file: scale of '" + name + "' has incompatible shape " +
                      shape_string(scale.shape()));
  }
  ScaledTensor t(std::move(data), std::move(scale), p);
  if (!t.in_range()) {
    throw FormatError("model file: payload of '" + name + "' exceeds " + std::to_string(p.bits()) +
                      "-bit precision");
  }
  return t;
}

DType payload_dtype(Precision p) { return p.bits() <= 7 ? DType::I8 : DType::I16; }

namespace {

FileHeader header_of(const ModelConfig& c) {
  FileHeader h;
  h.layers = c.layers;
  h.d_model = c.d_model;
  h.heads = c.heads;
  h.ffn = c.ffn;
  h.vocab = c.vocab;
  return h;
}

Record degree_record(int degree) {
  return float_record(kDegreeRecord, RationalTensor({1}, {static_cast<double>(degree)}));
}

ModelConfig config_of(const Container& c) {
  ModelConfig cfg;
  cfg.layers = c.header.layers;
  cfg.d_model = c.header.d_model;
  cfg.heads = c.header.heads;
  cfg.ffn = c.header.ffn;
  cfg.vocab = c.header.vocab;
  const Record* deg = c.find(kDegreeRecord);
  if (!deg) throw FormatError("model file: missing record 'poly.degree'");
  const RationalTensor d = read_float(*deg);
  if (d.size() != 1 || d[0] != std::floor(d[0])) throw FormatError("model file: bad polynomial degree");
  cfg.degree = static_cast<int>(d[0]);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  return cfg;
}

void check_shape(const ModelConfig& cfg, const std::string& name, const Shape& shape) {
  if (param_shape(cfg, name) != shape) {
    throw FormatError("model file: '" + name + "' has shape " + shape_string(shape) + ", expected " +
                      shape_string(param_shape(cfg, name)));
  }
}

}  // namespace

Container to_container(const FloatModel& m) {
  Container c;
  c.header = header_of(m.config);
  c.records.push_back(degree_record(m.config.degree));
  for_each_param(m, [&](const std::string& name, const RationalTensor& t) {
    c.records.push_back(float_record(name, t));
  });
  return c;
}

Container to_container(const QuantizedModel& m) {
  Container c;
  c.header = header_of(m.config);
  c.header.precision = static_cast<std::uint8_t>(m.precision.bits());
  c.header.granularity = static_cast<std::uint8_t>(m.granularity);
  c.records.push_back(degree_record(m.config.degree));
  for_each_param(m, [&](const std::string& name, const ScaledTensor& t) { append_scaled(c, name, t); });
  return c;
}

AnyModel model_from_container(const Container& c) {
  const ModelConfig cfg = config_of(c);
  std::set<std::string> expected = {kDegreeRecord};
  if (c.header.precision == 0) {
    FloatModel m;
    m.config = cfg;
    m.layers.resize(cfg.layers);
    for_each_param(m, [&](const std::string& name, RationalTensor& t) {
      const Record* r = c.find(name);
      if (!r) throw FormatError("model file: missing record '" + name + "'");
      t = read_float(*r);
      check_shape(cfg, name, t.shape());
      expected.insert(name);
    });
    for (const auto& r : c.records) {
      if (!expected.contains(r.name)) throw FormatError("model file: unexpected record '" + r.name + "'");
    }
    return m;
  }
  QuantizedModel m;
  m.config = cfg;
  try {
    m.precision = Precision(c.header.precision);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("model file: ") + e.what());
  }
  if (c.header.granularity > static_cast<std::uint8_t>(ScaleGranularity::PerBatch)) {
    throw FormatError("model file: unknown granularity " + std::to_string(c.header.granularity));
  }
  m.granularity = static_cast<ScaleGranularity>(c.header.granularity);
  m.layers.resize(cfg.layers);
  for_each_param(m, [&](const std::string& name, ScaledTensor& t) {
    t = read_scaled(c, name, m.precision);
    check_shape(cfg, name, t.shape());
    expected.insert(name);
    expected.insert(name + kScaleSuffix);
  });
  std::set<std::string> seen;
  for (const auto& r : c.records) {
    if (!expected.contains(r.name)) throw FormatError("model file: unexpected record '" + r.name + "'");
    if (!seen.insert(r.name).second) throw FormatError("model file: duplicate record '" + r.name + "'");
  }
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

void save_model(const std::filesystem::path& path, const FloatModel& m) {
  write_file(path, encode(to_container(m)));
}

void save_model(const std::filesystem::path& path, const QuantizedModel& m) {
  write_file(path, encode(to_container(m)));
}

AnyModel load_model(const std::filesystem::path& path) {
  return model_from_container(decode(read_file(path)));
}

}  // namespace spq
