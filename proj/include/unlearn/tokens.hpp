#pragma once

#include <cstdint>
#include <vector>

namespace unlearn {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by three specials.
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kPad = 258;
inline constexpr std::size_t kByteVocabSize = 259;

}  // namespace unlearn
