#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "corerank/error.hpp"
#include "corerank/layout.hpp"

namespace corerank {

struct HeadId {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;

  friend constexpr auto operator<=>(const HeadId&, const HeadId&) = default;
};

inline std::string to_string(const HeadId& h) {
  return "(" + std::to_string(h.layer) + "-" + std::to_string(h.head) + ")";
}

struct ModelDescriptor {
  std::string name;
  std::size_t num_layers = 1;
  std::size_t num_heads = 1;
  std::string tokenizer_id;

  std::size_t head_count() const noexcept { return num_layers * num_heads; }
  bool contains(const HeadId& h) const noexcept { return h.layer < num_layers && h.head < num_heads; }
};

struct SliceDims {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t query_tokens = 0;
  std::size_t context = 0;

  friend constexpr bool operator==(const SliceDims&, const SliceDims&) = default;
};

/// Post-softmax attention from the query-span rows to every context column,
/// stored row-major as [layer][head][query_token][context_token]. Only the
/// first layer_limit layers are materialized. Immutable once built.
class AttentionSlice {
 public:
  AttentionSlice() = default;

  AttentionSlice(SliceDims dims, std::size_t layer_limit, std::vector<float> values)
      : dims_(dims), layer_limit_(layer_limit), values_(std::move(values)) {
    require(layer_limit_ <= dims_.layers, ErrorCode::dim_layout_mismatch,
            "layer_limit " + std::to_string(layer_limit_) + " exceeds layer count " +
                std::to_string(dims_.layers));
    require(values_.size() == layer_limit_ * dims_.heads * dims_.query_tokens * dims_.context,
            ErrorCode::dim_layout_mismatch,
            "payload holds " + std::to_string(values_.size()) + " values, dims require " +
                std::to_string(layer_limit_ * dims_.heads * dims_.query_tokens * dims_.context));
  }

  AttentionSlice(SliceDims dims, std::vector<float> values)
      : AttentionSlice(dims, dims.layers, std::move(values)) {}

  const SliceDims& dims() const noexcept { return dims_; }
  std::size_t layer_limit() const noexcept { return layer_limit_; }
  std::span<const float> values() const noexcept { return values_; }

  bool materialized(std::size_t layer) const noexcept { return layer < layer_limit_; }

  void check_head(const HeadId& h) const {
    if (h.head >= dims_.heads || h.layer >= dims_.layers)
      fail(ErrorCode::head_out_of_range, "head " + to_string(h) + " outside model grid " +
                                              std::to_string(dims_.layers) + "x" + std::to_string(dims_.heads));
    if (h.layer >= layer_limit_)
      fail(ErrorCode::layer_not_materialized,
           "head " + to_string(h) + " lies at or beyond layer_limit " + std::to_string(layer_limit_));
  }

  std::span<const float> row(std::size_t layer, std::size_t head, std::size_t query_token) const {
    check_head({static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(head)});
    if (query_token >= dims_.query_tokens)
      fail(ErrorCode::invalid_argument, "query token " + std::to_string(query_token) + " out of range");
    return std::span<const float>(values_).subspan(offset(layer, head, query_token), dims_.context);
  }

  std::span<const float> row(const HeadId& h, std::size_t query_token) const {
    return row(h.layer, h.head, query_token);
  }

  float at(std::size_t layer, std::size_t head, std::size_t query_token, std::size_t column) const {
    if (column >= dims_.context)
      fail(ErrorCode::invalid_argument, "context column " + std::to_string(column) + " out of range");
    return row(layer, head, query_token)[column];
  }

  friend bool operator==(const AttentionSlice&, const AttentionSlice&) = default;

 private:
  std::size_t offset(std::size_t l, std::size_t h, std::size_t t) const noexcept {
    return ((l * dims_.heads + h) * dims_.query_tokens + t) * dims_.context;
  }

  SliceDims dims_;
  std::size_t layer_limit_ = 0;
  std::vector<float> values_;
};

/// Every (layer, head) in the model grid, in canonical (layer, head) order.
inline std::vector<HeadId> all_heads(std::size_t layers, std::size_t heads) {
  std::vector<HeadId> out;
  out.reserve(layers * heads);
  for (std::uint32_t l = 0; l < layers; ++l)
    for (std::uint32_t h = 0; h < heads; ++h) out.push_back({l, h});
  return out;
}

enum class SliceRule { non_finite, out_of_range, row_sum };

struct SliceViolation {
  SliceRule rule;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t query_token = 0;
  std::optional<std::size_t> column;
  double value = 0.0;

  std::string describe() const {
    static constexpr const char* names[] = {"non-finite value", "value outside [0,1]", "row sum exceeds 1"};
    std::string s = names[static_cast<int>(rule)] + std::string(" at (") + std::to_string(layer) + "," +
                    std::to_string(head) + "," + std::to_string(query_token);
    if (column) s += "," + std::to_string(*column);
    return s + ")";
  }
};

inline constexpr double row_sum_tolerance = 1e-3;

/// Lists every broken slice invariant. Rows holding a non-finite value are
/// not additionally reported for their sum.
inline std::vector<SliceViolation> validate_slice(const AttentionSlice& slice) {
  std::vector<SliceViolation> report;
  const auto& d = slice.dims();
  for (std::size_t l = 0; l < slice.layer_limit(); ++l) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      for (std::size_t t = 0; t < d.query_tokens; ++t) {
        auto row = slice.row(l, h, t);
        double sum = 0.0;
        bool finite_row = true;
        for (std::size_t j = 0; j < row.size(); ++j) {
          const float v = row[j];
          if (!std::isfinite(v)) {
            report.push_back({SliceRule::non_finite, l, h, t, j, static_cast<double>(v)});
            finite_row = false;
            continue;
          }
          if (v < 0.0f || v > 1.0f) report.push_back({SliceRule::out_of_range, l, h, t, j, v});
          sum += v;
        }
        if (finite_row && sum > 1.0 + row_sum_tolerance)
          report.push_back({SliceRule::row_sum, l, h, t, std::nullopt, sum});
      }
    }
  }
  return report;
}

/// The slice must hold one row per query-span token and one column per
/// prompt token.
inline void check_consistent(const AttentionSlice& slice, const PromptLayout& layout) {
  const auto& d = slice.dims();
  require(d.query_tokens == layout.query_span.size(), ErrorCode::dim_layout_mismatch,
          "slice has " + std::to_string(d.query_tokens) + " query rows, layout query span has " +
              std::to_string(layout.query_span.size()));
  require(d.context == layout.total_tokens, ErrorCode::dim_layout_mismatch,
          "slice has " + std::to_string(d.context) + " context columns, layout has " +
              std::to_string(layout.total_tokens) + " tokens");
}

struct AttentionRequest {
  std::span<const TokenId> tokens;
  const PromptLayout& layout;
  std::size_t layer_limit;
};

/// Slice plus the layout it is indexed by. Live providers echo the request
/// layout; dump-backed providers return the layout stored with the dump.
struct AttendedPrompt {
  AttentionSlice slice;
  PromptLayout layout;
};

/// Source of attention for a prompt. Implementations must be deterministic:
/// identical requests yield byte-identical slices. Distinct prompts may be
/// requested concurrently.
class AttentionProvider {
 public:
  virtual ~AttentionProvider() = default;

  virtual const ModelDescriptor& descriptor() const = 0;
  virtual bool supports_layer_limit() const = 0;
  virtual AttendedPrompt attend(const AttentionRequest& request) const = 0;
};

}  // namespace corerank
