#pragma once

#include <functional>
#include <string>
#include <string_view>

#include "guide/influence.hpp"
#include "guide/model.hpp"
#include "guide/tags.hpp"

namespace guide {

// Rewrites the text of the query span (e.g. to uppercase) to produce the
// naturally emphasised variant of a prompt.
using TextTransform = std::function<std::string(std::string_view)>;

// "identity", "uppercase", "lowercase".
TextTransform transform_by_name(std::string_view name);

enum class LayerPolicy { final, averaged };

std::string_view to_string(LayerPolicy policy);
LayerPolicy parse_layer_policy(std::string_view name);

struct CalibrationOptions {
  LayerPolicy layer_policy = LayerPolicy::final;
  double delta_max = 5.0;
  MetricVariant variant = MetricVariant::influence_exact;
  // Run the two forward passes on separate threads.
  bool concurrent = false;
  // Capture per-head attention too; has no effect on the result.
  bool per_head_capture = false;
};

struct CalibrationResult {
  double delta = 0.0;
  double log_influence_base = 0.0;
  double log_influence_transformed = 0.0;
  LayerPolicy layer_policy = LayerPolicy::final;
};

// Δ matching the log-influence gain of `transform` applied to the prompt's
// single query span. Both passes run without bias. The difference is
// clamped to [0, delta_max].
// Throws when the prompt does not have exactly one query span, when the
// transform changes the span's token count (the message carries the
// realigned span), or when an influence readout is zero.
CalibrationResult calibrate_delta(const Weights& weights, const TaggedPrompt& prompt,
                                  const TextTransform& transform,
                                  const CalibrationOptions& options = {});

enum class TaskKind { instruction, retrieval, format };

TaskKind parse_task(std::string_view name);
// instruction 2.0, retrieval 1.0, format 3.0
double default_delta(TaskKind task);

std::string to_json(const CalibrationResult& result, int indent = 2);

}  // namespace guide
