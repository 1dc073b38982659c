#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "deephuman/checkpoint.hpp"
#include "deephuman/optim.hpp"
#include "oracles.hpp"

namespace dh {
namespace {

namespace fs = std::filesystem;

TEST(ParameterStore, RejectsDuplicateNamesAndCountsScalars) {
  ParameterStore<float> s;
  s.add("a", Shape{2, 3});
  EXPECT_THROW(s.add("a", Shape{1}), std::invalid_argument);
  std::mt19937_64 rng(0);
  auto& b = s.add_uniform("b", Shape{4}, 0.5, rng);
  for (float v : b.values()) EXPECT_LE(std::abs(v), 0.5f);
  EXPECT_EQ(s.scalar_count(), 10u);
  EXPECT_TRUE(s.contains("b"));
  EXPECT_FALSE(s.contains("c"));
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  ParameterStore<double> s;
  auto& w = s.add("w", Shape{3});
  w.set_requires_grad(true);
  w.zero_grad();
  const double g[] = {0.3, -2.0, 0.0};
  for (int i = 0; i < 3; ++i) w.mutable_grad()[i] = g[i];
  Adam<double> adam(AdamOptions{.lr = 0.01});
  adam.step(s);
  EXPECT_NEAR(w.values()[0], -0.01, 1e-9);
  EXPECT_NEAR(w.values()[1], 0.01, 1e-9);
  EXPECT_EQ(w.values()[2], 0.0);
  EXPECT_EQ(adam.step_count(), 1u);
}

TEST(Adam, RejectsMissingGradient) {
  ParameterStore<double> s;
  s.add("w", Shape{1});
  s.get("w") = Tensor<double>(Shape{1});  // registered buffers always exist; swap in a bare tensor
  Adam<double> adam;
  EXPECT_THROW(adam.step(s), std::logic_error);
}

// Momentum overshoots the minimum once the approach is complete, so the error
// is monotone only until w first crosses 3; afterwards it stays bounded.
TEST(Adam, ApproachesScalarQuadraticMinimum) {
  ParameterStore<double> s;
  auto& w = s.add("w", Shape{1});
  Adam<double> adam(AdamOptions{.lr = 0.1});
  double prev = 3.0;
  bool crossed = false;
  int crossing = -1;
  for (int it = 1; it <= 100; ++it) {
    s.zero_grad();
    const auto d = ops::add_scalar(w, -3.0);
    backward(ops::sum(ops::mul(d, d)));
    adam.step(s);
    const double err = std::abs(w.values()[0] - 3.0);
    if (!crossed && w.values()[0] > 3.0) {
      crossed = true;
      crossing = it;
    }
    if (!crossed && it > 5) EXPECT_LT(err, prev) << "step " << it;
    if (crossed) EXPECT_LT(err, 0.2) << "step " << it;
    prev = err;
  }
  EXPECT_GT(crossing, 30);
  EXPECT_LT(prev, 0.05);
}

std::vector<CheckpointEntry> sample_entries() {
  return {{"alpha", Shape{2, 2}, {1.0f, -0.0f, 3.5e-38f, std::numeric_limits<float>::max()}},
          {"beta.bias", Shape{3}, {0.1f, 0.2f, 0.3f}},
          {"scalar", Shape{}, {42.0f}}};
}

TEST(Checkpoint, ByteLayout) {
  const auto bytes = encode_checkpoint({{"ab", Shape{2}, {1.0f, 2.0f}}});
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 2 + 4 + 4 + 8);
  EXPECT_EQ(std::string(bytes.data(), 4), "DHCK");
  std::uint32_t count = 0, len = 0, rank = 0, extent = 0;
  std::memcpy(&count, bytes.data() + 8, 4);
  std::memcpy(&len, bytes.data() + 12, 4);
  std::memcpy(&rank, bytes.data() + 18, 4);
  std::memcpy(&extent, bytes.data() + 22, 4);
  EXPECT_EQ(count, 1u);
  EXPECT_EQ(len, 2u);
  EXPECT_EQ(rank, 1u);
  EXPECT_EQ(extent, 2u);
  float v = 0;
  std::memcpy(&v, bytes.data() + 30, 4);
  EXPECT_EQ(v, 2.0f);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto entries = sample_entries();
  const auto path = fs::temp_directory_path() / "dh_ckpt_roundtrip.dhck";
  write_checkpoint(path, entries);
  const auto back = read_checkpoint(path);
  ASSERT_EQ(back.size(), entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].name, entries[i].name);
    EXPECT_EQ(back[i].shape, entries[i].shape);
    ASSERT_EQ(back[i].values.size(), entries[i].values.size());
    EXPECT_EQ(std::memcmp(back[i].values.data(), entries[i].values.data(), back[i].values.size() * 4), 0);
  }
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(entries));
  fs::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = encode_checkpoint(sample_entries());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), FormatError);
  EXPECT_THROW(decode_checkpoint({}), FormatError);
}

TEST(Checkpoint, LoadIntoStoreChecksShapesAndReportsMissing) {
  ParameterStore<float> a;
  std::mt19937_64 rng(3);
  a.add_uniform("x", Shape{2, 3}, 1.0, rng);
  a.add_uniform("y", Shape{4}, 1.0, rng);
  const auto entries = entries_from(a);

  ParameterStore<float> b;
  b.add("x", Shape{2, 3});
  b.add("y", Shape{4});
  b.add("z", Shape{1});
  EXPECT_EQ(load_into(b, entries), std::vector<std::string>{"z"});
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(b.get("x").values()[i], a.get("x").values()[i]);

  ParameterStore<float> c;
  c.add("x", Shape{3, 2});
  EXPECT_THROW(load_into(c, entries), FormatError);
}

}  // namespace
}  // namespace dh
