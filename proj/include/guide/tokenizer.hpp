#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace guide {

using TokenId = std::int32_t;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by specials.
inline constexpr TokenId kBosToken = 256;
inline constexpr TokenId kEosToken = 257;
inline constexpr TokenId kPadToken = 258;
inline constexpr TokenId kUnkToken = 259;
inline constexpr std::size_t kVocabSize = 260;

std::vector<TokenId> tokenize(std::string_view text);

// Inverse of tokenize. Special tokens render as nothing; ids outside the
// vocabulary throw.
std::string detokenize(std::span<const TokenId> tokens);

inline bool is_special(TokenId id) { return id >= 256; }

}  // namespace guide
