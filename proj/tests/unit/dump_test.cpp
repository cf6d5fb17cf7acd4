#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <limits>
#include <set>

#include "oracles.hpp"

using namespace corerank;
using namespace corerank::testing;

namespace {

struct Fixture {
  AttentionSlice slice;
  PromptLayout layout;
};

// 2 layers, 2 heads, 3 query tokens, 10 context tokens.
Fixture small_fixture() {
  PromptLayout layout;
  layout.model = "toy";
  layout.query = "a b c";
  layout.instruction_spans = {{0, 1}, {5, 6}, {9, 10}};
  layout.doc_spans = {{"d1", {1, 3}}, {"d2", {3, 5}}};
  layout.query_span = {6, 9};
  layout.total_tokens = 10;
  Rng rng(1);
  return {random_slice(rng, {2, 2, 3, 10}), layout};
}

ErrorCode decode_error(const std::string& bytes) {
  try {
    decode_dump(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorCode::invalid_argument;
}

void put_u32_at(std::string& bytes, std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<char>((v >> (8 * i)) & 0xff);
}

bool bit_identical(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Dump, RoundTripIsBitIdentical) {
  auto f = small_fixture();
  TempDir dir;
  write_dump(f.slice, f.layout, dir / "p.cora");
  auto [slice, layout] = read_dump(dir / "p.cora");
  EXPECT_TRUE(bit_identical(slice.values(), f.slice.values()));
  EXPECT_EQ(slice.dims(), f.slice.dims());
  EXPECT_EQ(slice.layer_limit(), 2u);
  EXPECT_EQ(layout, f.layout);
  EXPECT_FALSE(std::filesystem::exists(dir / "p.cora.tmp"));
}

TEST(Dump, HeaderBytesFollowTheFormat) {
  auto f = small_fixture();
  const std::string bytes = encode_dump(f.slice, f.layout);
  ASSERT_GE(bytes.size(), 32u);
  EXPECT_EQ(bytes.substr(0, 4), "CORA");
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[off + i]);
    return v;
  };
  EXPECT_EQ(u32(4), 1u);
  EXPECT_EQ(u32(8), 2u);
  EXPECT_EQ(u32(12), 2u);
  EXPECT_EQ(u32(16), 3u);
  EXPECT_EQ(u32(20), 10u);
  EXPECT_EQ(u32(24), 2u);
  const std::uint32_t blob = u32(28);
  EXPECT_EQ(bytes.size(), 32u + blob + 2 * 2 * 3 * 10 * 4);
  auto layout = layout_from_json(nlohmann::json::parse(bytes.substr(32, blob)));
  EXPECT_EQ(layout, f.layout);
  // First payload float, little-endian.
  EXPECT_EQ(u32(32 + blob), std::bit_cast<std::uint32_t>(f.slice.values()[0]));
}

TEST(Dump, BadMagic) {
  auto f = small_fixture();
  std::string bytes = encode_dump(f.slice, f.layout);
  bytes.replace(0, 4, "XXXX");
  EXPECT_EQ(decode_error(bytes), ErrorCode::bad_magic);
}

TEST(Dump, VersionMismatch) {
  auto f = small_fixture();
  std::string bytes = encode_dump(f.slice, f.layout);
  put_u32_at(bytes, 4, 2);
  EXPECT_EQ(decode_error(bytes), ErrorCode::version_mismatch);
}

TEST(Dump, TruncatedPayload) {
  // Header declares C=10 but only 9*Q*H*L floats follow.
  auto f = small_fixture();
  std::string bytes = encode_dump(f.slice, f.layout);
  bytes.resize(bytes.size() - 2 * 2 * 3 * 4);
  EXPECT_EQ(decode_error(bytes), ErrorCode::truncated_payload);
  EXPECT_EQ(decode_error(bytes.substr(0, 10)), ErrorCode::truncated_payload);
}

TEST(Dump, TrailingBytes) {
  auto f = small_fixture();
  EXPECT_EQ(decode_error(encode_dump(f.slice, f.layout) + "zz"), ErrorCode::trailing_bytes);
}

TEST(Dump, DimLayoutMismatch) {
  auto f = small_fixture();
  std::string bytes = encode_dump(f.slice, f.layout);
  put_u32_at(bytes, 16, 4);  // Q no longer matches the layout query span
  EXPECT_EQ(decode_error(bytes), ErrorCode::dim_layout_mismatch);

  std::string limit = encode_dump(f.slice, f.layout);
  put_u32_at(limit, 24, 3);  // layer_limit > L
  EXPECT_EQ(decode_error(limit), ErrorCode::dim_layout_mismatch);

  auto bad = f.layout;
  bad.total_tokens = 11;
  EXPECT_THROW(encode_dump(f.slice, bad), Error);
}

TEST(Dump, ErrorCodesAreDistinct) {
  const std::set<ErrorCode> codes = {ErrorCode::bad_magic, ErrorCode::version_mismatch, ErrorCode::truncated_payload,
                                     ErrorCode::dim_layout_mismatch, ErrorCode::trailing_bytes};
  EXPECT_EQ(codes.size(), 5u);
}

TEST(Dump, PropertyRoundTripIncludingSpecialFloats) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t docs = pick(rng, 1, 5), q = pick(rng, 1, 4);
    auto layout = random_layout(rng, docs, 6, q);
    const std::size_t L = pick(rng, 1, 4);
    const std::size_t limit = pick(rng, 0, L);
    auto clean = random_slice(rng, {L, pick(rng, 1, 3), q, layout.total_tokens}, limit);
    std::vector<float> values(clean.values().begin(), clean.values().end());
    // The format stores raw bit patterns, whatever they are.
    if (!values.empty() && trial % 3 == 0) {
      values[rng() % values.size()] = std::numeric_limits<float>::quiet_NaN();
      values[rng() % values.size()] = -0.0f;
      values[rng() % values.size()] = std::numeric_limits<float>::denorm_min();
    }
    AttentionSlice slice(clean.dims(), limit, values);
    auto [back, back_layout] = decode_dump(encode_dump(slice, layout));
    ASSERT_TRUE(bit_identical(back.values(), slice.values())) << "trial " << trial;
    ASSERT_EQ(back_layout, layout);
    ASSERT_EQ(back.layer_limit(), limit);
  }
}

TEST(Dump, HeaderOnlyReadSkipsPayload) {
  auto f = small_fixture();
  TempDir dir;
  write_dump(f.slice, f.layout, dir / "p.cora");
  const DumpHeader h = read_dump_header(dir / "p.cora");
  EXPECT_EQ(h.dims, f.slice.dims());
  EXPECT_EQ(h.layer_limit, 2u);
  EXPECT_EQ(h.layout, f.layout);
  EXPECT_THROW(read_dump(dir / "missing.cora"), Error);
}

TEST(DumpProvider, ServesStoredLayoutAndTruncatesLayers) {
  auto f = small_fixture();
  TempDir dir;
  write_dump(f.slice, f.layout, dir / dump_file_name(f.layout));
  DumpProvider provider(dir.path());
  EXPECT_EQ(provider.size(), 1u);
  EXPECT_EQ(provider.descriptor().num_layers, 2u);
  std::vector<TokenId> tokens(10);
  auto full = provider.attend({tokens, f.layout, 2});
  EXPECT_TRUE(bit_identical(full.slice.values(), f.slice.values()));
  auto pruned = provider.attend({tokens, f.layout, 1});
  EXPECT_EQ(pruned.slice.layer_limit(), 1u);
  EXPECT_TRUE(bit_identical(pruned.slice.values(), f.slice.values().first(2 * 3 * 10)));

  auto other = f.layout;
  other.query = "something else";
  try {
    provider.attend({tokens, other, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::provider_failure);
  }
}
