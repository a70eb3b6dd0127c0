#include "guide/tokenizer.hpp"

#include "guide/error.hpp"

namespace guide {

std::vector<TokenId> tokenize(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

std::string detokenize(std::span<const TokenId> tokens) {
  std::string text;
  text.reserve(tokens.size());
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= kVocabSize) {
      throw Error("detokenize: token id " + std::to_string(id) + " outside vocabulary");
    }
    if (!is_special(id)) text.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return text;
}

}  // namespace guide
