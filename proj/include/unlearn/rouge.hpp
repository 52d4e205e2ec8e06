#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace unlearn {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Lower-cased whitespace-separated words.
std::vector<std::string> rouge_tokens(std::string_view text);

// ROUGE-L over word LCS; all fields are 0 when either side has no words.
RougeScore rouge_l(std::string_view candidate, std::string_view reference);
double rouge_l_f1(std::string_view candidate, std::string_view reference);

}  // namespace unlearn
