#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "spq/model.hpp"

namespace spq {

// Container layout (all integers little-endian):
//   "SPQ1" | u16 version | u8 precision | u8 granularity
//   | u32 layers | u32 d_model | u32 heads | u32 ffn | u32 vocab
//   then records until end of file:
//   u32 name length | name bytes | u8 rank | u32 dims[rank] | u8 dtype | raw data
// A quantized tensor "t" is followed by a sibling record "t.scale".

inline constexpr std::uint16_t kFormatVersion = 1;

enum class DType : std::uint8_t { F32 = 0, I8 = 1, I16 = 2, I32 = 3, F64 = 4 };

std::size_t dtype_size(DType t);

/// Thrown for malformed or inconsistent file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a file cannot be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FileHeader {
  std::uint16_t version = kFormatVersion;
  std::uint8_t precision = 0;  // 0 for floating-point files
  std::uint8_t granularity = 0;
  std::uint32_t layers = 0;
  std::uint32_t d_model = 0;
  std::uint32_t heads = 0;
  std::uint32_t ffn = 0;
  std::uint32_t vocab = 0;
  bool operator==(const FileHeader&) const = default;
};

struct Record {
  std::string name;
  Shape shape;
  DType dtype = DType::F32;
  std::vector<std::uint8_t> bytes;  // row-major, little-endian
};

struct Container {
  FileHeader header;
  std::vector<Record> records;

  const Record* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode(const Container& c);
Container decode(std::span<const std::uint8_t> bytes);

Record float_record(const std::string& name, const RationalTensor& t);
Record int_record(const std::string& name, const IntTensor& t, DType dtype);
/// Scale record: F32 when every value is a float, F64 otherwise.
Record scale_record(const std::string& name, const ScaleTensor& s);
/// Appends the payload record and its ".scale" sibling.
void append_scaled(Container& c, const std::string& name, const ScaledTensor& t);

RationalTensor read_float(const Record& r);
IntTensor read_int(const Record& r);
ScaleTensor read_scale(const Record& r);
ScaledTensor read_scaled(const Container& c, const std::string& name, Precision p);

/// Payload dtype for a precision: I8 up to 7 bits, I16 above.
DType payload_dtype(Precision p);

Container to_container(const FloatModel& m);
Container to_container(const QuantizedModel& m);

using AnyModel = std::variant<FloatModel, QuantizedModel>;
AnyModel model_from_container(const Container& c);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_model(const std::filesystem::path& path, const FloatModel& m);
void save_model(const std::filesystem::path& path, const QuantizedModel& m);
AnyModel load_model(const std::filesystem::path& path);

}  // namespace spq
