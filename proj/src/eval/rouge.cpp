#include "unlearn/rouge.hpp"

#include <algorithm>
#include <cctype>

namespace unlearn {

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto cand = rouge_tokens(candidate);
  const auto ref = rouge_tokens(reference);
  if (cand.empty() || ref.empty()) return {};
  std::vector<std::size_t> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
  for (const auto& c : cand) {
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      cur[j] = c == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[ref.size()]);
  RougeScore score;
  score.precision = lcs / static_cast<double>(cand.size());
  score.recall = lcs / static_cast<double>(ref.size());
  if (lcs > 0.0) score.f1 = 2.0 * score.precision * score.recall / (score.precision + score.recall);
  return score;
}

double rouge_l_f1(std::string_view candidate, std::string_view reference) {
  return rouge_l(candidate, reference).f1;
}

}  // namespace unlearn
