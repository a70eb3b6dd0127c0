#include "guide/calibration.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <future>

#include <json.hpp>

#include "guide/error.hpp"

namespace guide {

TextTransform transform_by_name(std::string_view name) {
  if (name == "identity") {
    return [](std::string_view s) { return std::string(s); };
  }
  if (name == "uppercase" || name == "lowercase") {
    const bool upper = name == "uppercase";
    return [upper](std::string_view s) {
      std::string out(s);
      for (char& c : out) {
        const auto u = static_cast<unsigned char>(c);
        c = static_cast<char>(upper ? std::toupper(u) : std::tolower(u));
      }
      return out;
    };
  }
  throw Error("unknown transform '" + std::string(name) + "'");
}

std::string_view to_string(LayerPolicy policy) {
  return policy == LayerPolicy::final ? "final" : "averaged";
}

LayerPolicy parse_layer_policy(std::string_view name) {
  if (name == "final") return LayerPolicy::final;
  if (name == "averaged") return LayerPolicy::averaged;
  throw Error("unknown layer policy '" + std::string(name) + "'");
}

TaskKind parse_task(std::string_view name) {
  if (name == "instruction") return TaskKind::instruction;
  if (name == "retrieval") return TaskKind::retrieval;
  if (name == "format") return TaskKind::format;
  throw Error("unknown task '" + std::string(name) + "'");
}

double default_delta(TaskKind task) {
  switch (task) {
    case TaskKind::instruction: return 2.0;
    case TaskKind::retrieval: return 1.0;
    case TaskKind::format: return 3.0;
  }
  throw Error("unknown task");
}

namespace {

double log_readout(const InfluenceMap& map, LayerPolicy policy) {
  const std::size_t last = map.values.cols() - 1;
  const auto log_of = [](double v, std::size_t layer) {
    if (!(v > 0.0)) {
      throw UndefinedStatistic("influence readout is zero at layer " + std::to_string(layer) +
                               "; log-influence undefined");
    }
    return std::log(v);
  };
  if (policy == LayerPolicy::final) {
    return log_of(map.summary, map.values.rows() - 1);
  }
  double acc = 0.0;
  for (std::size_t l = 1; l < map.values.rows(); ++l) acc += log_of(map.values(l, last), l);
  return acc / static_cast<double>(map.values.rows() - 1);
}

double log_influence(const Weights& weights, const std::string& text, TokenRange span,
                     const CalibrationOptions& options) {
  const auto tokens = tokenize(text);
  const auto result =
      forward(weights, tokens, BiasSpec{}, CaptureOptions{true, options.per_head_capture});
  return log_readout(compute_map(*result.trace, span, options.variant), options.layer_policy);
}

}  // namespace

CalibrationResult calibrate_delta(const Weights& weights, const TaggedPrompt& prompt,
                                  const TextTransform& transform,
                                  const CalibrationOptions& options) {
  if (prompt.query_spans.size() != 1) {
    throw Error("calibration needs exactly one query span (found " +
                std::to_string(prompt.query_spans.size()) + ")");
  }
  if (!std::isfinite(options.delta_max) || options.delta_max < 0.0) {
    throw Error("calibration: delta_max must be finite and non-negative");
  }
  const auto& query = prompt.query_spans.front();
  const std::string& base_text = prompt.clean_text;
  const std::string span_text = base_text.substr(query.chars.begin, query.chars.size());
  const std::string rewritten = transform(span_text);

  const std::size_t before = tokenize(span_text).size();
  const std::size_t after = tokenize(rewritten).size();
  if (before != after) {
    throw Error("transform changed the query span from " + std::to_string(before) + " to " +
                std::to_string(after) + " tokens; realigned span would be [" +
                std::to_string(query.tokens.begin) + ", " +
                std::to_string(query.tokens.begin + after) + ")");
  }
  std::string transformed_text = base_text;
  transformed_text.replace(query.chars.begin, query.chars.size(), rewritten);

  double base = 0.0;
  double transformed = 0.0;
  if (options.concurrent) {
    auto pending = std::async(std::launch::async, [&] {
      return log_influence(weights, transformed_text, query.tokens, options);
    });
    base = log_influence(weights, base_text, query.tokens, options);
    transformed = pending.get();
  } else {
    base = log_influence(weights, base_text, query.tokens, options);
    transformed = log_influence(weights, transformed_text, query.tokens, options);
  }

  CalibrationResult result;
  result.log_influence_base = base;
  result.log_influence_transformed = transformed;
  result.layer_policy = options.layer_policy;
  result.delta = std::clamp(transformed - base, 0.0, options.delta_max);
  return result;
}

std::string to_json(const CalibrationResult& result, int indent) {
  nlohmann::ordered_json j;
  j["delta"] = result.delta;
  j["log_influence_base"] = result.log_influence_base;
  j["log_influence_transformed"] = result.log_influence_transformed;
  j["layer_policy"] = to_string(result.layer_policy);
  return j.dump(indent);
}

}  // namespace guide
