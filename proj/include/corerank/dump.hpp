#pragma once

// Attention dump file, one per prompt, all integers little-endian:
//
//   magic        4 bytes  "CORA"
//   version      u32      1
//   L, H, Q, C   u32 x4   layers, heads, query rows, context columns
//   layer_limit  u32      layers actually stored (<= L)
//   layout_len   u32      byte length of the JSON blob that follows
//   layout       UTF-8    PromptLayout JSON (spans, document ids, model name)
//   payload      f32 x layer_limit*H*Q*C, row-major [layer][head][q][c]

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "corerank/attention.hpp"
#include "corerank/error.hpp"
#include "corerank/io.hpp"
#include "corerank/layout.hpp"

namespace corerank {

inline constexpr std::array<char, 4> dump_magic = {'C', 'O', 'R', 'A'};
inline constexpr std::uint32_t dump_version = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((v >> shift) & 0xffu));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      fail(ErrorCode::truncated_payload, std::string("file ends inside ") + what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t to_u32(std::size_t v, const char* what) {
  require(v <= UINT32_MAX, ErrorCode::invalid_argument, std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

struct DumpHeader {
  SliceDims dims;
  std::size_t layer_limit = 0;
  PromptLayout layout;
};

inline std::string encode_dump(const AttentionSlice& slice, const PromptLayout& layout) {
  check_consistent(slice, layout);
  validate_layout(layout);
  const auto& d = slice.dims();
  const std::string blob = to_json(layout).dump();

  std::string out;
  out.reserve(32 + blob.size() + slice.values().size() * 4);
  out.append(dump_magic.data(), dump_magic.size());
  detail::put_u32(out, dump_version);
  detail::put_u32(out, detail::to_u32(d.layers, "L"));
  detail::put_u32(out, detail::to_u32(d.heads, "H"));
  detail::put_u32(out, detail::to_u32(d.query_tokens, "Q"));
  detail::put_u32(out, detail::to_u32(d.context, "C"));
  detail::put_u32(out, detail::to_u32(slice.layer_limit(), "layer_limit"));
  detail::put_u32(out, detail::to_u32(blob.size(), "layout length"));
  out += blob;
  for (float f : slice.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

namespace detail {

inline DumpHeader decode_header(ByteReader& in) {
  auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), dump_magic.data(), 4) != 0)
    fail(ErrorCode::bad_magic, "expected magic 'CORA', found '" + std::string(magic) + "'");
  const std::uint32_t version = in.u32("version");
  if (version != dump_version)
    fail(ErrorCode::version_mismatch,
         "dump version " + std::to_string(version) + ", reader supports " + std::to_string(dump_version));
  DumpHeader h;
  h.dims.layers = in.u32("header");
  h.dims.heads = in.u32("header");
  h.dims.query_tokens = in.u32("header");
  h.dims.context = in.u32("header");
  h.layer_limit = in.u32("header");
  if (h.layer_limit > h.dims.layers)
    fail(ErrorCode::dim_layout_mismatch, "layer_limit " + std::to_string(h.layer_limit) +
                                             " exceeds L=" + std::to_string(h.dims.layers));
  const std::uint32_t blob_len = in.u32("layout length");
  auto blob = in.take(blob_len, "layout JSON");
  try {
    h.layout = layout_from_json(nlohmann::json::parse(blob));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("layout JSON: ") + e.what());
  }
  if (h.dims.query_tokens != h.layout.query_span.size() || h.dims.context != h.layout.total_tokens)
    fail(ErrorCode::dim_layout_mismatch,
         "header Q=" + std::to_string(h.dims.query_tokens) + " C=" + std::to_string(h.dims.context) +
             " disagrees with layout query span " + std::to_string(h.layout.query_span.size()) +
             " / total tokens " + std::to_string(h.layout.total_tokens));
  if (auto why = layout_violation(h.layout)) fail(ErrorCode::dim_layout_mismatch, *why);
  return h;
}

}  // namespace detail

inline std::pair<AttentionSlice, PromptLayout> decode_dump(std::string_view bytes) {
  detail::ByteReader in(bytes);
  DumpHeader h = detail::decode_header(in);
  const std::size_t count = h.layer_limit * h.dims.heads * h.dims.query_tokens * h.dims.context;
  if (in.remaining() < count * 4)
    fail(ErrorCode::truncated_payload, "payload holds " + std::to_string(in.remaining() / 4) +
                                           " floats, header requires " + std::to_string(count));
  if (in.remaining() > count * 4)
    fail(ErrorCode::trailing_bytes,
         std::to_string(in.remaining() - count * 4) + " bytes follow the declared payload");
  std::vector<float> values(count);
  for (auto& v : values) v = std::bit_cast<float>(in.u32("payload"));
  return {AttentionSlice(h.dims, h.layer_limit, std::move(values)), std::move(h.layout)};
}

inline void write_dump(const AttentionSlice& slice, const PromptLayout& layout,
                       const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_dump(slice, layout));
}

inline std::pair<AttentionSlice, PromptLayout> read_dump(const std::filesystem::path& path) {
  return decode_dump(io::read_file(path));
}

/// Parses only the fixed header and layout; the payload is left unread.
inline DumpHeader read_dump_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::string head(32, '\0');
  in.read(head.data(), 32);
  head.resize(static_cast<std::size_t>(in.gcount()));
  std::uint32_t blob_len = 0;
  if (head.size() == 32) {
    detail::ByteReader peek(head);
    peek.take(28, "header");
    blob_len = peek.u32("layout length");
  }
  std::string blob(blob_len, '\0');
  in.read(blob.data(), blob_len);
  blob.resize(static_cast<std::size_t>(in.gcount()));
  const std::string bytes = head + blob;
  detail::ByteReader reader(bytes);
  return detail::decode_header(reader);
}

}  // namespace corerank
