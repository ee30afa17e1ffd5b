#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "saelab/container.hpp"
#include "test_util.hpp"

using namespace saelab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("saelab_container_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::size_t parse_offset(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset " + std::to_string(e.offset)), std::string::npos);
    return e.offset;
  }
  ADD_FAILURE() << "expected ParseError";
  return 0;
}

}  // namespace

TEST(Container, DictionaryRoundTripAtFloatPrecision) {
  TempDir t("dict");
  const Dictionary a = testutil::gaussian(7, 11, 3);
  write_dictionary(t.path / "a.saec", a);
  const Dictionary b = read_dictionary(t.path / "a.saec");
  EXPECT_TRUE((b.array() == a.cast<float>().cast<double>().array()).all());
  EXPECT_EQ(fs::file_size(t.path / "a.saec"), 21u + 7 * 11 * 4);
  const auto h = read_header(t.path / "a.saec");
  EXPECT_EQ(h.role, Role::Dictionary);
  EXPECT_EQ(h.m, 7u);
  EXPECT_EQ(h.d, 11u);
}

TEST(Container, DatasetWithCodesRoundTrip) {
  TempDir t("data");
  GroundTruthSpec spec;
  spec.n = 300;
  const auto gt = sample_ground_truth(spec);
  const auto ds = sample_dataset(spec, gt);
  write_dataset(t.path / "d.saec", ds);
  const auto back = read_dataset(t.path / "d.saec");
  EXPECT_TRUE((back.X.array() == ds.X.cast<float>().cast<double>().array()).all());
  ASSERT_TRUE(back.has_codes());
  EXPECT_EQ(back.codes.indices, ds.codes.indices);
  EXPECT_EQ(back.codes.offsets, ds.codes.offsets);
  for (std::size_t i = 0; i < ds.codes.values.size(); ++i)
    EXPECT_EQ(back.codes.values[i], static_cast<double>(static_cast<float>(ds.codes.values[i])));
}

TEST(Container, CodelessDataset) {
  TempDir t("codeless");
  Dataset ds;
  ds.X = testutil::gaussian(4, 9, 1);
  write_dataset(t.path / "d.saec", ds);
  EXPECT_EQ(read_header(t.path / "d.saec").d, 0u);
  EXPECT_FALSE(read_dataset(t.path / "d.saec").has_codes());
}

TEST(Container, ModelRoundTripEveryArch) {
  TempDir t("model");
  ArchParams p;
  p.k = 3;
  p.p_current = 0.7;
  p.ema_threshold = 0.25;
  p.ema_initialized = true;
  for (Arch a : {Arch::Standard, Arch::TopK, Arch::BatchTopK, Arch::Gated, Arch::PAnneal, Arch::JumpReLU}) {
    auto m = init_model(a, 5, 9, p, 2);
    m.params = p;
    if (a == Arch::Gated) m.r_mag.setConstant(0.5);
    const auto path = t.path / (to_string(a) + ".saec");
    write_model(path, m);
    const auto back = read_model(path);
    EXPECT_EQ(back.arch, a);
    EXPECT_EQ(back.params.k, 3u);
    EXPECT_FLOAT_EQ(static_cast<float>(back.params.p_current), 0.7f);
    EXPECT_EQ(back.params.ema_initialized, true);
    EXPECT_LT((back.W_dec - m.W_dec).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((back.W_enc - m.W_enc).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(back.r_mag.size(), m.r_mag.size());
    EXPECT_EQ(back.threshold.size(), m.threshold.size());
  }
}

TEST(Container, ParseErrorsCarryOffsets) {
  TempDir t("errors");
  const auto good = t.path / "a.saec";
  write_dictionary(good, testutil::gaussian(3, 4, 1));
  const auto bytes = slurp(good);
  const auto bad = t.path / "bad.saec";

  auto b = bytes;
  b[0] = 'X';
  dump(bad, b);
  EXPECT_EQ(parse_offset([&] { read_dictionary(bad); }), 0u);

  b = bytes;
  b[4] = 9;  // version
  dump(bad, b);
  EXPECT_EQ(parse_offset([&] { read_dictionary(bad); }), 4u);

  b = bytes;
  b[8] = 7;  // role
  dump(bad, b);
  EXPECT_EQ(parse_offset([&] { read_dictionary(bad); }), 8u);

  EXPECT_EQ(parse_offset([&] { read_dataset(good); }), 8u);  // wrong role

  b.assign(bytes.begin(), bytes.begin() + 15);  // inside d
  dump(bad, b);
  EXPECT_EQ(parse_offset([&] { read_dictionary(bad); }), 13u);

  b.assign(bytes.begin(), bytes.end() - 2);
  dump(bad, b);
  EXPECT_EQ(parse_offset([&] { read_dictionary(bad); }), 21u);

  b = bytes;
  b.push_back(0);
  dump(bad, b);
  EXPECT_EQ(parse_offset([&] { read_dictionary(bad); }), bytes.size());
}

TEST(Container, CodeIndexOutOfRange) {
  TempDir t("codeidx");
  GroundTruthSpec spec;
  spec.n = 3;
  spec.k = 1;
  const auto gt = sample_ground_truth(spec);
  auto ds = sample_dataset(spec, gt);
  write_dataset(t.path / "d.saec", ds);
  auto bytes = slurp(t.path / "d.saec");
  // first code: u16 count at 21 + 8*3*4, then u32 index
  const std::size_t at = 21 + 8 * 3 * 4 + 2;
  bytes[at] = static_cast<char>(0xff);
  dump(t.path / "d.saec", bytes);
  EXPECT_EQ(parse_offset([&] { read_dataset(t.path / "d.saec"); }), at);
}

TEST(Ingest, RawRoundTripIsBitExact) {
  TempDir t("raw");
  const Eigen::MatrixXd x = testutil::gaussian(6, 13, 4).cast<float>().cast<double>();
  write_raw_activations(t.path / "x.f32", x);
  const auto ds = ingest_activations(t.path / "x.f32", 6);
  EXPECT_EQ(ds.m(), 6u);
  EXPECT_EQ(ds.n(), 13u);
  EXPECT_TRUE((ds.X.array() == x.array()).all());
  EXPECT_FALSE(ds.has_codes());
  const auto raw = slurp(t.path / "x.f32");
  write_raw_activations(t.path / "y.f32", ds.X);
  EXPECT_EQ(slurp(t.path / "y.f32"), raw);
}

TEST(Ingest, RejectsBadSizes) {
  TempDir t("rawbad");
  dump(t.path / "empty.f32", {});
  EXPECT_THROW(ingest_activations(t.path / "empty.f32", 4), std::invalid_argument);
  dump(t.path / "odd.f32", std::vector<char>(4 * 4 * 3 + 4));
  EXPECT_THROW(ingest_activations(t.path / "odd.f32", 4), std::invalid_argument);
  EXPECT_THROW(ingest_activations(t.path / "missing.f32", 4), std::runtime_error);
}
