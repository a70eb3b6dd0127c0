#include "guide/influence.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "guide/error.hpp"

namespace guide {

std::string_view to_string(MetricVariant variant) {
  switch (variant) {
    case MetricVariant::influence_exact: return "influence_exact";
    case MetricVariant::influence_simplified: return "influence_simplified";
    case MetricVariant::rollout: return "rollout";
    case MetricVariant::raw_attention: return "raw_attention";
  }
  return "unknown";
}

MetricVariant parse_variant(std::string_view name) {
  if (name == "exact" || name == "influence_exact") return MetricVariant::influence_exact;
  if (name == "simplified" || name == "influence_simplified") {
    return MetricVariant::influence_simplified;
  }
  if (name == "rollout") return MetricVariant::rollout;
  if (name == "raw" || name == "raw_attention") return MetricVariant::raw_attention;
  throw Error("unknown metric variant '" + std::string(name) + "'");
}

Vector influence_init(std::span<const TokenRange> spans, std::size_t s) {
  Vector values(s, 0.0);
  for (const auto& span : spans) {
    if (span.empty()) continue;
    if (span.end > s) {
      throw Error("span [" + std::to_string(span.begin) + ", " + std::to_string(span.end) +
                  ") outside a context of " + std::to_string(s) + " tokens");
    }
    for (std::size_t k = span.begin; k < span.end; ++k) values[k] = 1.0;
  }
  return values;
}

namespace {

void check_step(std::span<const double> prev, const TraceLayer& layer) {
  const std::size_t s = layer.length();
  if (prev.size() != s || layer.attention.rows() != s || layer.attention.cols() != s ||
      layer.update_norm.size() != s) {
    throw Error("influence step: trace layer and previous values differ in length");
  }
  for (std::size_t k = 0; k < s; ++k) {
    const double e = layer.residual_norm[k];
    const double u = layer.update_norm[k];
    if (!std::isfinite(e) || !std::isfinite(u) || e <= 0.0 || u <= 0.0) {
      throw Error("influence step: norms must be finite and positive (position " +
                  std::to_string(k) + ")");
    }
  }
}

double mix_at(std::span<const double> prev, const TraceLayer& layer, std::size_t k) {
  const auto row = layer.attention.row(k);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    const double weight = row[i] * layer.residual_norm[i];
    num += weight * prev[i];
    den += weight;
  }
  return den > 0.0 ? num / den : 0.0;
}

// Σ_i A[k,i] prev[i], divided by the stored row sum so that rounding in A
// cannot move the full-span fixed point off exactly 1.
double plain_mix_at(std::span<const double> prev, const TraceLayer& layer, std::size_t k) {
  const auto row = layer.attention.row(k);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i <= k; ++i) {
    num += row[i] * prev[i];
    den += row[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

template <typename PerPosition>
Vector per_position(std::size_t s, PerPosition&& fn) {
  Vector out(s);
  const auto n = static_cast<std::ptrdiff_t>(s);
#pragma omp parallel for schedule(static) if (n > 512)
  for (std::ptrdiff_t k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = fn(static_cast<std::size_t>(k));
  return out;
}

// Keeps [0,1] despite rounding in the convex combinations.
double unit(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Vector attention_mix_influence(std::span<const double> prev, const TraceLayer& layer) {
  check_step(prev, layer);
  return per_position(layer.length(), [&](std::size_t k) { return unit(mix_at(prev, layer, k)); });
}

Vector influence_layer_step(std::span<const double> prev, const TraceLayer& layer) {
  check_step(prev, layer);
  return per_position(layer.length(), [&](std::size_t k) {
    const double e = layer.residual_norm[k];
    const double u = layer.update_norm[k];
    return unit((e * prev[k] + u * mix_at(prev, layer, k)) / (e + u));
  });
}

Vector influence_layer_step_simplified(std::span<const double> prev, const TraceLayer& layer) {
  check_step(prev, layer);
  return per_position(layer.length(), [&](std::size_t k) {
    const double r = layer.ratio[k];
    return unit((r * prev[k] + plain_mix_at(prev, layer, k)) / (1.0 + r));
  });
}

Vector attention_rollout_step(std::span<const double> prev, const TraceLayer& layer) {
  check_step(prev, layer);
  return per_position(layer.length(), [&](std::size_t k) {
    return unit(0.5 * (prev[k] + plain_mix_at(prev, layer, k)));
  });
}

namespace {

Vector attention_mass(const TraceLayer& layer, std::span<const double> indicator) {
  return per_position(layer.length(),
                      [&](std::size_t k) { return unit(plain_mix_at(indicator, layer, k)); });
}

}  // namespace

Vector raw_attention_score(const ForwardTrace& trace, std::span<const TokenRange> spans) {
  if (trace.layers.empty()) throw Error("raw_attention_score: empty trace");
  const Vector indicator = influence_init(spans, trace.length());
  return attention_mass(trace.layers.back(), indicator);
}

InfluenceMap compute_map(const ForwardTrace& trace, std::span<const TokenRange> spans,
                         MetricVariant variant) {
  if (trace.layers.empty() || trace.length() == 0) throw Error("compute_map: empty trace");
  const std::size_t s = trace.length();
  InfluenceMap map;
  map.variant = variant;
  map.spans.assign(spans.begin(), spans.end());
  map.values = Matrix(trace.n_layers() + 1, s);

  const Vector indicator = influence_init(spans, s);
  std::copy(indicator.begin(), indicator.end(), map.values.row(0).begin());
  Vector current = indicator;
  for (std::size_t l = 0; l < trace.n_layers(); ++l) {
    const auto& layer = trace.layers[l];
    switch (variant) {
      case MetricVariant::influence_exact: current = influence_layer_step(current, layer); break;
      case MetricVariant::influence_simplified:
        current = influence_layer_step_simplified(current, layer);
        break;
      case MetricVariant::rollout: current = attention_rollout_step(current, layer); break;
      case MetricVariant::raw_attention: current = attention_mass(layer, indicator); break;
    }
    std::copy(current.begin(), current.end(), map.values.row(l + 1).begin());
  }
  map.summary = map.values(trace.n_layers(), s - 1);
  return map;
}

std::string to_json(const InfluenceMap& map, int indent) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(map.variant);
  if (map.spans.size() == 1) {
    j["span"] = {map.spans.front().begin, map.spans.front().end};
  } else {
    j["span"] = nlohmann::ordered_json::array();
    for (const auto& span : map.spans) j["span"].push_back({span.begin, span.end});
  }
  j["values"] = std::vector<double>(map.values.values().begin(), map.values.values().end());
  j["summary"] = map.summary;
  return j.dump(indent);
}

void write_csv(std::ostream& out, const InfluenceMap& map) {
  out << "layer,position,value\n";
  const auto old_precision = out.precision(17);
  for (std::size_t l = 0; l < map.values.rows(); ++l) {
    for (std::size_t k = 0; k < map.values.cols(); ++k) {
      out << l << ',' << k << ',' << map.values(l, k) << '\n';
    }
  }
  out.precision(old_precision);
}

}  // namespace guide
