#pragma once

#include "corerank/aggregation.hpp"
#include "corerank/attention.hpp"
#include "corerank/contrastive.hpp"
#include "corerank/detection.hpp"
#include "corerank/dump.hpp"
#include "corerank/dump_provider.hpp"
#include "corerank/error.hpp"
#include "corerank/eval.hpp"
#include "corerank/head_io.hpp"
#include "corerank/layout.hpp"
#include "corerank/mining.hpp"
#include "corerank/prompt.hpp"
#include "corerank/reranker.hpp"
#include "corerank/synthetic.hpp"
#include "corerank/tiny_model.hpp"
#include "corerank/tokenizer.hpp"

namespace corerank {

inline constexpr const char* version = "0.1.0";

}  // namespace corerank
