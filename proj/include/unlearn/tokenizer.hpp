#pragma once

#include <span>
#include <string>
#include <string_view>

#include "unlearn/tokens.hpp"

namespace unlearn {

// One token per byte; never fails.
TokenSeq encode(std::string_view text);
// Inverse of encode(); special tokens (BOS/EOS/PAD) are dropped.
std::string decode(std::span<const TokenId> ids);

}  // namespace unlearn
