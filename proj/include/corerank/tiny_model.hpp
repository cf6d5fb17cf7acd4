#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "corerank/attention.hpp"
#include "corerank/detail/hash.hpp"
#include "corerank/error.hpp"
#include "corerank/layout.hpp"

namespace corerank {

struct TinyModelSpec {
  std::size_t layers = 4;
  std::size_t heads = 8;
  std::size_t head_dim = 16;
  std::size_t vocab = 256;
  std::size_t max_positions = 4096;
  std::uint64_t seed = 0;

  std::size_t model_dim() const noexcept { return heads * head_dim; }

  void validate() const {
    require(layers >= 1 && heads >= 1 && head_dim >= 1 && vocab >= 1 && max_positions >= 1, ErrorCode::config,
            "tiny model dimensions must be positive");
  }
};

inline nlohmann::json to_json(const TinyModelSpec& s) {
  return {{"layers", s.layers}, {"heads", s.heads},   {"head_dim", s.head_dim},
          {"vocab", s.vocab},   {"max_positions", s.max_positions}, {"seed", s.seed}};
}

inline TinyModelSpec tiny_spec_from_json(const nlohmann::json& j) {
  TinyModelSpec s;
  try {
    s.layers = j.value("layers", s.layers);
    s.heads = j.value("heads", s.heads);
    s.head_dim = j.value("head_dim", s.head_dim);
    s.vocab = j.value("vocab", s.vocab);
    s.max_positions = j.value("max_positions", s.max_positions);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("tiny model spec: ") + e.what());
  }
  s.validate();
  return s;
}

/// Seeded pre-norm decoder-only transformer: sinusoidal positions, RMS norm
/// without gain, no biases, ReLU MLP of width 4d. Weights are a pure
/// function of the spec.
class TinyModel {
 public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit TinyModel(TinyModelSpec spec) : spec_(spec) {
    spec_.validate();
    const auto d = static_cast<Eigen::Index>(spec_.model_dim());
    std::uint64_t stream = 0;
    auto init = [&](Eigen::Index rows, Eigen::Index cols, double stddev) {
      detail::SplitMix64 rng(detail::combine(spec_.seed, ++stream));
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double u1 = rng.next_open01();
        const double u2 = rng.next_open01();
        m.data()[i] = stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
      }
      return m;
    };
    embedding_ = init(static_cast<Eigen::Index>(spec_.vocab), d, 1.0);
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t l = 0; l < spec_.layers; ++l) {
      layers_.push_back({init(d, d, s), init(d, d, s), init(d, d, s), init(d, d, s), init(d, 4 * d, s),
                         init(4 * d, d, 0.5 * s)});
    }
  }

  const TinyModelSpec& spec() const noexcept { return spec_; }

  /// Runs the first layer_limit layers and returns post-softmax attention
  /// of the query-span rows. Later layers are never computed, and the
  /// returned layers do not depend on how many follow.
  AttentionSlice forward(std::span<const TokenId> tokens, Span query_span, std::size_t layer_limit) const {
    const std::size_t C = tokens.size();
    require(C >= 1 && C <= spec_.max_positions, ErrorCode::invalid_argument,
            "sequence of " + std::to_string(C) + " tokens outside [1, " + std::to_string(spec_.max_positions) + "]");
    require(layer_limit <= spec_.layers, ErrorCode::config,
            "layer_limit " + std::to_string(layer_limit) + " exceeds " + std::to_string(spec_.layers) + " layers");
    require(!query_span.empty() && query_span.end <= C, ErrorCode::invalid_argument, "query span outside sequence");
    for (std::size_t i = 0; i < C; ++i)
      require(tokens[i] < spec_.vocab, ErrorCode::invalid_argument,
              "token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) + " outside vocabulary of " +
                  std::to_string(spec_.vocab));

    const auto n = static_cast<Eigen::Index>(C);
    const auto d = static_cast<Eigen::Index>(spec_.model_dim());
    const auto hd = static_cast<Eigen::Index>(spec_.head_dim);
    const std::size_t Q = query_span.size();

    Matrix x(n, d);
    for (Eigen::Index p = 0; p < n; ++p) {
      x.row(p) = embedding_.row(static_cast<Eigen::Index>(tokens[static_cast<std::size_t>(p)]));
      for (Eigen::Index i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
        x(p, i) += std::sin(static_cast<double>(p) * freq);
        if (i + 1 < d) x(p, i + 1) += std::cos(static_cast<double>(p) * freq);
      }
    }

    std::vector<float> values(layer_limit * spec_.heads * Q * C, 0.0f);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Matrix probs(n, n);
    for (std::size_t l = 0; l < layer_limit; ++l) {
      const Layer& w = layers_[l];
      const Matrix h = rms_norm(x);
      const Matrix q = h * w.wq;
      const Matrix k = h * w.wk;
      const Matrix v = h * w.wv;
      Matrix mixed(n, d);
      for (std::size_t head = 0; head < spec_.heads; ++head) {
        const auto col = static_cast<Eigen::Index>(head) * hd;
        probs.noalias() = q.middleCols(col, hd) * k.middleCols(col, hd).transpose();
        for (Eigen::Index r = 0; r < n; ++r) {
          double top = -INFINITY;
          for (Eigen::Index c = 0; c <= r; ++c) top = std::max(top, probs(r, c) * scale);
          double total = 0.0;
          for (Eigen::Index c = 0; c <= r; ++c) {
            probs(r, c) = std::exp(probs(r, c) * scale - top);
            total += probs(r, c);
          }
          for (Eigen::Index c = 0; c <= r; ++c) probs(r, c) /= total;
          for (Eigen::Index c = r + 1; c < n; ++c) probs(r, c) = 0.0;
        }
        for (std::size_t t = 0; t < Q; ++t) {
          float* out = values.data() + ((l * spec_.heads + head) * Q + t) * C;
          const auto r = static_cast<Eigen::Index>(query_span.start + t);
          for (Eigen::Index c = 0; c < n; ++c) out[c] = static_cast<float>(probs(r, c));
        }
        if (l + 1 < layer_limit) mixed.middleCols(col, hd).noalias() = probs * v.middleCols(col, hd);
      }
      if (l + 1 == layer_limit) break;
      x += mixed * w.wo;
      const Matrix hidden = (rms_norm(x) * w.w1).cwiseMax(0.0);
      x += hidden * w.w2;
    }
    return AttentionSlice({spec_.layers, spec_.heads, Q, C}, layer_limit, std::move(values));
  }

 private:
  struct Layer {
    Matrix wq, wk, wv, wo, w1, w2;
  };

  static Matrix rms_norm(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double rms = std::sqrt(x.row(r).squaredNorm() / static_cast<double>(x.cols()) + 1e-6);
      out.row(r) = x.row(r) / rms;
    }
    return out;
  }

  TinyModelSpec spec_;
  Matrix embedding_;
  std::vector<Layer> layers_;
};

inline AttentionSlice tiny_forward(const TinyModelSpec& spec, std::span<const TokenId> tokens, Span query_span,
                                   std::size_t layer_limit) {
  return TinyModel(spec).forward(tokens, query_span, layer_limit);
}

class TinyModelProvider final : public AttentionProvider {
 public:
  explicit TinyModelProvider(TinyModelSpec spec)
      : model_(spec), descriptor_{"tiny-decoder", spec.layers, spec.heads, "whitespace-fnv/" + std::to_string(spec.vocab)} {}

  const ModelDescriptor& descriptor() const override { return descriptor_; }
  bool supports_layer_limit() const override { return true; }
  const TinyModel& model() const noexcept { return model_; }

  AttendedPrompt attend(const AttentionRequest& request) const override {
    return {model_.forward(request.tokens, request.layout.query_span, request.layer_limit), request.layout};
  }

 private:
  TinyModel model_;
  ModelDescriptor descriptor_;
};

}  // namespace corerank
