#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "guide/influence.hpp"
#include "guide/model.hpp"
#include "guide/tags.hpp"

namespace guide {

enum class SamplingMode { greedy, multinomial };

SamplingMode parse_sampling_mode(std::string_view name);
std::string_view to_string(SamplingMode mode);

struct GenerationParams {
  SamplingMode mode = SamplingMode::greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_tokens = 32;
  std::set<TokenId> stop_tokens{kEosToken};
  // Keep adding Δ for queries generated after the prompt.
  bool bias_decode_steps = true;
  // Track the span influence, recomputing it every `influence_stride` steps.
  bool track_influence = false;
  std::size_t influence_stride = 8;
  MetricVariant influence_variant = MetricVariant::influence_exact;

  void validate() const;
};

struct GenerationRecord {
  std::vector<TokenId> tokens;
  // Probability of each emitted token under softmax(logits / temperature).
  std::vector<double> probabilities;
  // Summary influence of the query span (emphasis spans when there is no
  // query span) after each step; empty when tracking is off, and nullopt on
  // steps skipped by the stride.
  std::vector<std::optional<double>> influence;

  std::string text() const { return detokenize(tokens); }
};

// Uniform draw in [0,1) that depends only on (seed, step).
double counter_uniform(std::uint64_t seed, std::uint64_t step);

// softmax(logits / temperature) over one logit row.
Vector temperature_probs(std::span<const double> logits, double temperature);

// Generates from `prompt` with a key/value cache. With bias_from_spans the
// prompt's emphasis spans bias every layer and head.
GenerationRecord decode(const Weights& weights, const TaggedPrompt& prompt,
                        const GenerationParams& params, bool bias_from_spans);

std::string to_json(const GenerationRecord& record, int indent = 2);

}  // namespace guide
