#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "spq/model_io.hpp"
#include "spq/scale.hpp"

namespace spq {
namespace {

namespace fs = std::filesystem;

std::uint32_t u32_at(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (std::uint32_t{b[at + 3]} << 24);
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("spq_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                   ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

TEST(ContainerTest, HeaderLayout) {
  Container c;
  c.header = {kFormatVersion, 7, 2, 2, 32, 2, 128, 64};
  const auto bytes = encode(c);
  ASSERT_EQ(bytes.size(), 28u);
  EXPECT_EQ(std::memcmp(bytes.data(), "SPQ1", 4), 0);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 7);
  EXPECT_EQ(bytes[7], 2);
  EXPECT_EQ(u32_at(bytes, 8), 2u);
  EXPECT_EQ(u32_at(bytes, 12), 32u);
  EXPECT_EQ(u32_at(bytes, 16), 2u);
  EXPECT_EQ(u32_at(bytes, 20), 128u);
  EXPECT_EQ(u32_at(bytes, 24), 64u);
}

TEST(ContainerTest, RecordLayout) {
  Container c;
  c.records.push_back(int_record("w", IntTensor({2, 1}, {-1, 3}), DType::I8));
  const auto bytes = encode(c);
  const std::vector<std::uint8_t> rec(bytes.begin() + 28, bytes.end());
  const std::vector<std::uint8_t> want = {1, 0, 0, 0, 'w', 2, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0xff, 3};
  EXPECT_EQ(rec, want);
}

TEST(ContainerTest, FloatRecordIsLittleEndianF32) {
  const Record r = float_record("x", RationalTensor(Shape{1}, {1.0}));
  EXPECT_EQ(r.dtype, DType::F32);
  EXPECT_EQ(r.bytes, (std::vector<std::uint8_t>{0, 0, 0x80, 0x3f}));
  EXPECT_EQ(read_float(r)[0], 1.0);
}

TEST(ContainerTest, ScaleRecordWidensOnlyWhenNeeded) {
  EXPECT_EQ(scale_record("s", ScaleTensor({2}, {0.5, 63.5})).dtype, DType::F32);
  const Record wide = scale_record("s", ScaleTensor({1}, {0.1}));
  EXPECT_EQ(wide.dtype, DType::F64);
  EXPECT_EQ(read_scale(wide)[0], 0.1);
}

TEST(ContainerTest, PayloadDtypeFollowsPrecision) {
  EXPECT_EQ(payload_dtype(Precision(2)), DType::I8);
  EXPECT_EQ(payload_dtype(Precision(7)), DType::I8);
  EXPECT_EQ(payload_dtype(Precision(8)), DType::I16);
  EXPECT_EQ(payload_dtype(Precision(15)), DType::I16);
}

TEST(ContainerTest, DecodeRejectsMalformedInput) {
  Container c;
  c.records.push_back(int_record("w", IntTensor({2}, {1, 2}), DType::I8));
  const auto good = encode(c);
  EXPECT_NO_THROW(decode(good));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode(bad_magic), FormatError);

  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(decode(bad_version), FormatError);

  for (std::size_t cut = 1; cut < good.size(); ++cut) {
    if (cut == 28) continue;  // a bare header is a valid empty container
    EXPECT_THROW(decode(std::span(good).first(cut)), FormatError) << cut;
  }

  auto bad_dtype = good;
  bad_dtype[good.size() - 3] = 42;
  EXPECT_THROW(decode(bad_dtype), FormatError);
}

class ModelFileTest : public ::testing::Test {
 protected:
  ModelConfig config;
  FloatModel f = random_model(config, 5);
  QuantizedModel q = quantize_model(f, Precision(7));
};

TEST_F(ModelFileTest, QuantizedRoundTripIsByteIdentical) {
  const auto bytes = encode(to_container(q));
  const AnyModel back = model_from_container(decode(bytes));
  ASSERT_TRUE(std::holds_alternative<QuantizedModel>(back));
  EXPECT_EQ(encode(to_container(std::get<QuantizedModel>(back))), bytes);
  const auto& qb = std::get<QuantizedModel>(back);
  EXPECT_EQ(qb.emb, q.emb);
  EXPECT_EQ(qb.layers[1].w2, q.layers[1].w2);
  EXPECT_EQ(qb.precision, q.precision);
  EXPECT_EQ(qb.config, q.config);
}

TEST_F(ModelFileTest, FloatRoundTripIsByteIdentical) {
  const auto bytes = encode(to_container(f));
  const AnyModel back = model_from_container(decode(bytes));
  ASSERT_TRUE(std::holds_alternative<FloatModel>(back));
  EXPECT_EQ(encode(to_container(std::get<FloatModel>(back))), bytes);
  EXPECT_EQ(std::get<FloatModel>(back).layers[0].wq, f.layers[0].wq);
}

TEST_F(ModelFileTest, WideRoundTrip) {
  const QuantizedModel q12 = quantize_model(f, Precision(12), ScaleGranularity::PerBatch);
  const auto bytes = encode(to_container(q12));
  const QuantizedModel back = std::get<QuantizedModel>(model_from_container(decode(bytes)));
  EXPECT_EQ(back.precision, Precision(12));
  EXPECT_EQ(back.granularity, ScaleGranularity::PerBatch);
  EXPECT_EQ(encode(to_container(back)), bytes);
}

TEST_F(ModelFileTest, EveryPayloadHasOneScaleSibling) {
  const Container c = to_container(q);
  EXPECT_EQ(c.header.precision, 7);
  std::size_t payloads = 0;
  for (const auto& r : c.records) {
    if (r.dtype != DType::I8) continue;
    ++payloads;
    std::size_t siblings = 0;
    for (const auto& s : c.records) siblings += s.name == r.name + ".scale";
    EXPECT_EQ(siblings, 1u) << r.name;
  }
  EXPECT_EQ(payloads, 1 + 14 * config.layers);
}

TEST_F(ModelFileTest, FileRoundTrip) {
  TempDir dir;
  save_model(dir / "a.spq", q);
  const AnyModel m = load_model(dir / "a.spq");
  save_model(dir / "b.spq", std::get<QuantizedModel>(m));
  EXPECT_EQ(read_file(dir / "a.spq"), read_file(dir / "b.spq"));
}

TEST_F(ModelFileTest, QuantizeDequantizeQuantizeIsIdempotent) {
  const QuantizedModel again = quantize_model(dequantize_model(q), Precision(7));
  EXPECT_EQ(encode(to_container(again)), encode(to_container(q)));
}

TEST_F(ModelFileTest, ZeroWeightGetsUnitScale) {
  f.layers[0].wk = RationalTensor::zeros(f.layers[0].wk.shape());
  const QuantizedModel qz = quantize_model(f, Precision(7));
  for (auto v : qz.layers[0].wk.data().values()) EXPECT_EQ(v, 0);
  for (double s : qz.layers[0].wk.scale().values()) EXPECT_EQ(s, 1.0);
}

TEST_F(ModelFileTest, RejectsInconsistentContainers) {
  const Container good = to_container(q);
  auto without = [&](const std::string& name) {
    Container c = good;
    std::erase_if(c.records, [&](const Record& r) { return r.name == name; });
    return c;
  };
  EXPECT_THROW(model_from_container(without("l0.wq.scale")), FormatError);
  EXPECT_THROW(model_from_container(without("l1.poly.delta")), FormatError);

  Container extra = good;
  extra.records.push_back(float_record("stray", RationalTensor(Shape{1}, {1.0})));
  EXPECT_THROW(model_from_container(extra), FormatError);

  Container dup = good;
  dup.records.push_back(dup.records.front());
  EXPECT_THROW(model_from_container(dup), FormatError);

  Container narrow = good;
  narrow.header.precision = 3;  // payloads exceed 2^3 - 1
  EXPECT_THROW(model_from_container(narrow), FormatError);

  Container reshaped = good;
  reshaped.header.d_model = 16;
  EXPECT_THROW(model_from_container(reshaped), FormatError);
}

TEST(ModelFileIoTest, MissingFileIsIoError) {
  EXPECT_THROW(read_file("/nonexistent/dir/model.spq"), IoError);
  EXPECT_THROW(load_model("/nonexistent/dir/model.spq"), IoError);
}

}  // namespace
}  // namespace spq
