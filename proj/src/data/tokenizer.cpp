#include "unlearn/tokenizer.hpp"

namespace unlearn {

TokenSeq encode(std::string_view text) {
  TokenSeq ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

std::string decode(std::span<const TokenId> ids) {
  std::string text;
  text.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 0 && id < 256) text.push_back(static_cast<char>(id));
  }
  return text;
}

}  // namespace unlearn
