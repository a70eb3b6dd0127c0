#include "guide/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "guide/error.hpp"

namespace guide {

SamplingMode parse_sampling_mode(std::string_view name) {
  if (name == "greedy") return SamplingMode::greedy;
  if (name == "multinomial") return SamplingMode::multinomial;
  throw Error("unknown sampling mode '" + std::string(name) + "'");
}

std::string_view to_string(SamplingMode mode) {
  return mode == SamplingMode::greedy ? "greedy" : "multinomial";
}

void GenerationParams::validate() const {
  if (!std::isfinite(temperature) || temperature <= 0.0) {
    throw Error("temperature must be finite and positive");
  }
  if (max_tokens == 0) throw Error("max_tokens must be at least 1");
  if (track_influence && influence_stride == 0) throw Error("influence_stride must be at least 1");
}

double counter_uniform(std::uint64_t seed, std::uint64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  std::mt19937_64 rng(seq);
  // 53 random bits -> [0,1)
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Vector temperature_probs(std::span<const double> logits, double temperature) {
  Vector scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  const Vector zero(logits.size(), 0.0);
  return softmax_biased(scaled, zero);
}

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t sample(std::span<const double> probs, double u) {
  double cumulative = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cumulative += probs[i];
    if (u < cumulative) return i;
  }
  // u landed in the rounding gap above the last cumulative sum
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

std::vector<TokenRange> tracked_spans(const TaggedPrompt& prompt) {
  std::vector<TokenRange> spans;
  for (const auto& q : prompt.query_spans) spans.push_back(q.tokens);
  if (spans.empty()) {
    for (const auto& e : prompt.emphasis_spans) spans.push_back(e.tokens);
  }
  return spans;
}

}  // namespace

GenerationRecord decode(const Weights& weights, const TaggedPrompt& prompt,
                        const GenerationParams& params, bool bias_from_spans) {
  params.validate();
  auto context = prompt.tokens();
  if (context.empty()) throw Error("decode: empty prompt");
  const std::size_t limit = context.size() + params.max_tokens;
  if (limit > weights.config.max_seq) {
    throw Error("decode: prompt of " + std::to_string(context.size()) + " tokens plus " +
                std::to_string(params.max_tokens) + " new tokens exceeds max_seq " +
                std::to_string(weights.config.max_seq));
  }

  BiasSpec bias = bias_from_spans ? BiasSpec::from_prompt(prompt) : BiasSpec{};
  bias.decode_steps = params.bias_decode_steps;
  const auto spans = tracked_spans(prompt);
  if (params.track_influence && spans.empty()) {
    throw Error("decode: influence tracking needs a query or emphasis span");
  }

  Session session(weights, bias, limit);
  Matrix logits = session.extend(context);
  std::span<const double> last = logits.row(logits.rows() - 1);

  GenerationRecord record;
  for (std::size_t step = 0; step < params.max_tokens; ++step) {
    const Vector probs = temperature_probs(last, params.temperature);
    const std::size_t chosen = params.mode == SamplingMode::greedy
                                   ? argmax(last)
                                   : sample(probs, counter_uniform(params.seed, step));
    const auto token = static_cast<TokenId>(chosen);
    record.tokens.push_back(token);
    record.probabilities.push_back(probs[chosen]);
    context.push_back(token);

    if (params.track_influence) {
      if ((step + 1) % params.influence_stride == 0) {
        const auto full = forward(weights, context, bias, CaptureOptions{true, false});
        record.influence.emplace_back(
            compute_map(*full.trace, spans, params.influence_variant).summary);
      } else {
        record.influence.emplace_back(std::nullopt);
      }
    }

    if (params.stop_tokens.count(token) != 0 || step + 1 == params.max_tokens) break;
    const TokenId next[] = {token};
    logits = session.extend(next);
    last = logits.row(0);
  }
  return record;
}

std::string to_json(const GenerationRecord& record, int indent) {
  nlohmann::ordered_json j;
  j["tokens"] = record.tokens;
  j["text"] = record.text();
  j["probabilities"] = record.probabilities;
  if (!record.influence.empty()) {
    auto traj = nlohmann::ordered_json::array();
    for (const auto& v : record.influence) {
      traj.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
    }
    j["influence"] = traj;
  }
  return j.dump(indent, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

}  // namespace guide
