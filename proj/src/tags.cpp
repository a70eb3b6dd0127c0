#include "guide/tags.hpp"

#include <cmath>
#include <optional>

#include "guide/error.hpp"

namespace guide {

void DeltaConfig::set(int level, double delta) {
  if (level < 1 || level > 3) {
    throw Error("emphasis level must be 1, 2 or 3 (got " + std::to_string(level) + ")");
  }
  if (!std::isfinite(delta) || delta < 0.0) {
    throw Error("delta must be finite and non-negative");
  }
  level_delta[static_cast<std::size_t>(level - 1)] = delta;
}

double resolve_delta(const EmphasisSpan& span, const DeltaConfig& config) {
  if (span.level < 1 || span.level > 3) {
    throw Error("unknown emphasis level " + std::to_string(span.level));
  }
  return config.level_delta[static_cast<std::size_t>(span.level - 1)];
}

namespace {

enum class MarkerKind { open, close };

struct Marker {
  MarkerKind kind;
  int level;  // 1..3 for emphasis, 0 for query
  std::size_t length;
};

std::optional<Marker> match_marker(std::string_view text, std::size_t pos) {
  const auto rest = text.substr(pos);
  for (int level = 3; level >= 1; --level) {
    const auto idx = static_cast<std::size_t>(level - 1);
    if (rest.starts_with(markers::kEmphasisOpen[idx])) {
      return Marker{MarkerKind::open, level, markers::kEmphasisOpen[idx].size()};
    }
    if (rest.starts_with(markers::kEmphasisClose[idx])) {
      return Marker{MarkerKind::close, level, markers::kEmphasisClose[idx].size()};
    }
  }
  if (rest.starts_with(markers::kQueryOpen)) {
    return Marker{MarkerKind::open, 0, markers::kQueryOpen.size()};
  }
  if (rest.starts_with(markers::kQueryClose)) {
    return Marker{MarkerKind::close, 0, markers::kQueryClose.size()};
  }
  return std::nullopt;
}

std::string describe(int level) {
  return level == 0 ? std::string("query tag") : "level-" + std::to_string(level) + " tag";
}

TokenRange to_tokens(std::string_view clean, TokenRange chars) {
  const std::size_t begin = tokenize(clean.substr(0, chars.begin)).size();
  const std::size_t end = begin + tokenize(clean.substr(chars.begin, chars.size())).size();
  return {begin, end};
}

}  // namespace

TaggedPrompt parse_tags(std::string_view raw, const ParseOptions& options) {
  TaggedPrompt prompt;
  prompt.raw_text = std::string(raw);

  struct Open {
    int level = 0;
    std::size_t raw_offset = 0;
    std::size_t clean_offset = 0;
  };
  Open open;
  bool is_open = false;

  std::string& clean = prompt.clean_text;
  clean.reserve(raw.size());
  std::size_t pos = 0;
  while (pos < raw.size()) {
    const auto marker = raw[pos] == '<' ? match_marker(raw, pos) : std::nullopt;
    if (!marker) {
      clean.push_back(raw[pos]);
      ++pos;
      continue;
    }
    if (marker->kind == MarkerKind::open) {
      if (is_open) {
        throw ParseError("nested " + describe(marker->level) + " inside " +
                             describe(open.level) + " opened at byte " +
                             std::to_string(open.raw_offset),
                         pos);
      }
      if (options.keep_markers) clean.append(raw.substr(pos, marker->length));
      open = Open{marker->level, pos, clean.size()};
      is_open = true;
    } else {
      if (!is_open) {
        throw ParseError("closing " + describe(marker->level) + " without an opening tag", pos);
      }
      if (open.level != marker->level) {
        throw ParseError("mismatched closing " + describe(marker->level) + " for " +
                             describe(open.level) + " opened at byte " +
                             std::to_string(open.raw_offset),
                         pos);
      }
      const TokenRange chars{open.clean_offset, clean.size()};
      if (chars.empty()) throw ParseError("empty " + describe(marker->level), open.raw_offset);
      if (open.level == 0) {
        prompt.query_spans.push_back({chars, {}});
      } else {
        EmphasisSpan span;
        span.chars = chars;
        span.level = open.level;
        span.delta = resolve_delta(span, options.deltas);
        if (span.delta > options.deltas.warn_above) {
          prompt.warnings.push_back("delta " + std::to_string(span.delta) + " for " +
                                    describe(span.level) +
                                    " is large; generation may become incoherent");
        }
        prompt.emphasis_spans.push_back(span);
      }
      if (options.keep_markers) clean.append(raw.substr(pos, marker->length));
      is_open = false;
    }
    pos += marker->length;
  }
  if (is_open) throw ParseError("unclosed " + describe(open.level), open.raw_offset);

  for (auto& span : prompt.emphasis_spans) span.tokens = to_tokens(clean, span.chars);
  for (auto& span : prompt.query_spans) span.tokens = to_tokens(clean, span.chars);
  return prompt;
}

}  // namespace guide
