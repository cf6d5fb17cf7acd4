#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "corerank/error.hpp"

namespace corerank {

/// Contrastive head score: softmax probability of the positive document
/// among positive plus negatives at temperature t,
///
///   exp(s_pos/t) / (exp(s_pos/t) + sum_i exp(s_neg_i/t)).
///
/// Evaluated on differences from the maximum so it stays finite for very
/// small t and is invariant to shifting every score by a constant.
inline double core_score(double s_pos, std::span<const double> s_negs, double t) {
  require(t > 0.0 && std::isfinite(t), ErrorCode::invalid_argument,
          "temperature must be positive and finite, got " + std::to_string(t));
  require(!s_negs.empty(), ErrorCode::empty_input, "no negative scores");
  require(std::isfinite(s_pos), ErrorCode::invalid_argument, "positive score is not finite");
  double top = s_pos;
  for (double s : s_negs) {
    if (!std::isfinite(s)) fail(ErrorCode::invalid_argument, "negative score is not finite");
    top = std::max(top, s);
  }
  const double pos = std::exp((s_pos - top) / t);
  double denom = pos;
  for (double s : s_negs) denom += std::exp((s - top) / t);
  return pos / denom;
}

/// Temperatures shipped as presets: sharp (0.001) and soft (0.1).
inline constexpr double temperature_sharp = 0.001;
inline constexpr double temperature_soft = 0.1;

}  // namespace corerank
