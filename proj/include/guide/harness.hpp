#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "guide/influence.hpp"
#include "guide/model.hpp"
#include "guide/stats.hpp"
#include "guide/tags.hpp"

namespace guide {

// Prompt templates for the summarisation, needle and JSON tasks. The
// placeholders are literal: {context}, {question}, {context with needle},
// {content}. The same text ships under fixtures/prompts/.
namespace templates {
extern const std::string_view kSummarizeFrench;
extern const std::string_view kNeedleQuestion;
extern const std::string_view kJsonSchema;
}  // namespace templates

// Replaces every occurrence of `placeholder` in `text`.
std::string fill_placeholder(std::string text, std::string_view placeholder,
                             std::string_view value);

// Deterministic filler prose of exactly `length` bytes ending in '.'.
std::string synthetic_filler(std::size_t length, std::uint64_t seed);

struct NeedlePlacement {
  std::string text;
  TokenRange needle;  // byte range of the needle inside text
};

// Inserts `needle` right after the period closest to (at or before, when
// possible) quantile * filler.size(). Throws if the filler has no period.
NeedlePlacement insert_needle(std::string_view filler, std::string_view needle, double quantile);

struct ResultRow {
  std::size_t context_length = 0;
  double position_quantile = 0.0;
  double delta = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct ResultTable {
  std::vector<ResultRow> rows;

  std::vector<ResultRow> select(std::string_view metric) const;
};

void write_csv(std::ostream& out, const ResultTable& table);
std::string to_json(const ResultTable& table, int indent = 2);

// Quotes a CSV field when it contains a comma, quote, or line break.
std::string csv_field(std::string_view value);

enum class ExperimentTask { needle_sweep, delta_sweep, calibration_report, auc_report };

struct NeedleSweepSpec {
  std::vector<std::size_t> context_lengths{128, 256};
  std::vector<double> quantiles{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> deltas{0.0, 0.5, 1.0, 2.0};
  std::vector<std::uint64_t> seeds{0};
  std::string needle = " The special magic number is 7481.";
  std::string question = "\nWhat is the special magic number?\n";
  // User text to cut haystacks from; synthetic filler when unset.
  std::optional<std::string> filler;
  // Wrap the haystack in the needle question template.
  bool use_template = false;
  // init_seed is replaced by each grid seed.
  ModelConfig model;
  std::vector<MetricVariant> metrics{MetricVariant::influence_exact,
                                     MetricVariant::influence_simplified,
                                     MetricVariant::rollout, MetricVariant::raw_attention};

  void validate() const;
};

// One forward pass per (seed, context length, quantile, Δ) with the needle
// tagged at Δ; records each metric's summary value for the needle span.
// Cells run in parallel; row order is fixed by the grid.
ResultTable run_needle_sweep(const NeedleSweepSpec& spec);

// Sweeps Δ over the prompt's emphasis spans and records, per layer, the
// metric for its query spans (the emphasis spans when there is none).
// Metric names are "<variant>/layer<l>".
ResultTable run_delta_sweep(const Weights& weights, const TaggedPrompt& prompt,
                            const std::vector<double>& deltas, MetricVariant variant);

struct AucRow {
  std::string metric;
  std::size_t samples = 0;
  double roc_auc = 0.0;
  double correlation = 0.0;
};

// Reads "metric,score,label" (or "score,label") CSV with a header row.
std::map<std::string, std::vector<StatSample>> read_samples_csv(std::istream& in);

// ROC AUC and score-label Pearson correlation per metric.
std::vector<AucRow> run_auc_report(const std::map<std::string, std::vector<StatSample>>& samples);

void write_csv(std::ostream& out, const std::vector<AucRow>& report);
std::string to_json(const std::vector<AucRow>& report, int indent = 2);

// Model config as JSON: n_layers, n_heads, head_dim, vocab, max_seq,
// init_seed, update_norm ("post_o" | "pre_o"). Missing keys keep defaults.
ModelConfig config_from_json(std::string_view json_text);
std::string config_to_json(const ModelConfig& config, int indent = 2);

}  // namespace guide
