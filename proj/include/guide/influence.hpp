#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "guide/matrix.hpp"
#include "guide/model.hpp"
#include "guide/tags.hpp"

namespace guide {

enum class MetricVariant { influence_exact, influence_simplified, rollout, raw_attention };

std::string_view to_string(MetricVariant variant);
MetricVariant parse_variant(std::string_view name);  // accepts "exact", "simplified" too

// Importance of a token span, tracked through every layer of one forward
// pass. Row 0 is the span indicator; row l holds the values after layer l.
struct InfluenceMap {
  MetricVariant variant = MetricVariant::influence_exact;
  std::vector<TokenRange> spans;
  Matrix values;  // [(L+1) x s]
  double summary = 0.0;  // final layer, last position
};

// Indicator of the union of `spans` over s positions. Throws if a span
// reaches past s.
Vector influence_init(std::span<const TokenRange> spans, std::size_t s);
inline Vector influence_init(TokenRange span, std::size_t s) {
  return influence_init(std::span<const TokenRange>(&span, 1), s);
}

// Influence of the attention update at each position: the attention mix of
// prev weighted by A[k,i] * ‖E_i‖.
Vector attention_mix_influence(std::span<const double> prev, const TraceLayer& layer);

// One residual block: (‖E_k‖ I(E_k) + ‖U_k‖ I(U_k)) / (‖E_k‖ + ‖U_k‖).
// The MLP branch leaves values unchanged.
Vector influence_layer_step(std::span<const double> prev, const TraceLayer& layer);

// Same with residual norms taken as constant within the layer:
// (r_k I(E_k) + Σ_i A[k,i] I(E_i)) / (1 + r_k).
Vector influence_layer_step_simplified(std::span<const double> prev, const TraceLayer& layer);

// Attention Rollout: ½ (R(E_k) + Σ_i A[k,i] R(E_i)).
Vector attention_rollout_step(std::span<const double> prev, const TraceLayer& layer);

// Last-layer head-averaged attention mass on the span columns, per position.
Vector raw_attention_score(const ForwardTrace& trace, std::span<const TokenRange> spans);

InfluenceMap compute_map(const ForwardTrace& trace, std::span<const TokenRange> spans,
                         MetricVariant variant);
inline InfluenceMap compute_map(const ForwardTrace& trace, TokenRange span,
                                MetricVariant variant) {
  return compute_map(trace, std::span<const TokenRange>(&span, 1), variant);
}

// {"variant", "span": [i, j], "values": [...], "summary"}; multi-span maps
// write "span" as a list of pairs.
std::string to_json(const InfluenceMap& map, int indent = 2);
// "layer,position,value" rows.
void write_csv(std::ostream& out, const InfluenceMap& map);

}  // namespace guide
