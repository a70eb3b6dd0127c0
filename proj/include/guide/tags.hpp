#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "guide/tokenizer.hpp"

namespace guide {

// Half-open index range [begin, end).
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
  bool empty() const noexcept { return end <= begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }

  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

// Δ per emphasis level (1..3). Defaults: 1 for highlighting information,
// 2 for instructions, 3 for output-format constraints.
struct DeltaConfig {
  std::array<double, 3> level_delta{1.0, 2.0, 3.0};
  // Δ above this still works but tends to derail generation.
  double warn_above = 5.0;

  // Throws on a level outside 1..3 or a negative/non-finite value.
  void set(int level, double delta);
};

struct EmphasisSpan {
  TokenRange chars;
  TokenRange tokens;
  int level = 1;
  double delta = 0.0;
};

struct QuerySpan {
  TokenRange chars;
  TokenRange tokens;
};

struct ParseOptions {
  DeltaConfig deltas;
  // Keep the markers in clean_text (ablation); spans still cover only the
  // enclosed text.
  bool keep_markers = false;
};

struct TaggedPrompt {
  std::string raw_text;
  std::string clean_text;
  std::vector<EmphasisSpan> emphasis_spans;
  std::vector<QuerySpan> query_spans;
  std::vector<std::string> warnings;

  std::vector<TokenId> tokens() const { return tokenize(clean_text); }
};

// Marker byte sequences.
namespace markers {
inline constexpr std::array<std::string_view, 3> kEmphasisOpen{"<!->", "<!!->", "<!!!->"};
inline constexpr std::array<std::string_view, 3> kEmphasisClose{"<-!>", "<-!!>", "<-!!!>"};
inline constexpr std::string_view kQueryOpen = "<?->";
inline constexpr std::string_view kQueryClose = "<-?>";
}  // namespace markers

// Strips tag markers and records the enclosed regions. Throws ParseError
// (with the raw byte offset) on unclosed, unmatched, mismatched, nested, or
// empty tags.
TaggedPrompt parse_tags(std::string_view raw, const ParseOptions& options = {});

// Δ configured for the span's level. Throws on an unknown level.
double resolve_delta(const EmphasisSpan& span, const DeltaConfig& config);

}  // namespace guide
