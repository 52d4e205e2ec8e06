#include "unlearn/eval.hpp"

#include <cmath>

#include <fmt/format.h>

#include "unlearn/error.hpp"
#include "unlearn/rouge.hpp"
#include "unlearn/tokenizer.hpp"

namespace unlearn {
namespace {

std::string_view trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::string token_label(TokenId id) {
  if (id == kBos) return "<bos>";
  if (id == kEos) return "<eos>";
  if (id == kPad) return "<pad>";
  const auto c = static_cast<unsigned char>(id);
  if (c == ',' || c == '"' || c < 0x20 || c >= 0x7f) return fmt::format("0x{:02x}", c);
  return std::string(1, static_cast<char>(c));
}

}  // namespace

MemorizationResult memorization_eval(const PolicyModel& model, const std::vector<Sample>& samples,
                                     std::size_t max_new) {
  if (samples.empty()) fail(ErrorKind::kInput, "memorization_eval: eval set is empty");
  MemorizationResult result;
  double rouge = 0.0;
  std::size_t exact = 0;
  for (const auto& s : samples) {
    const auto generated = greedy_decode(model, s.prompt_tokens, max_new);
    std::string text = decode(generated);
    rouge += rouge_l_f1(text, s.response);
    if (trim(text) == trim(s.response)) ++exact;
    result.generations.push_back(std::move(text));
  }
  const auto n = static_cast<double>(samples.size());
  result.rouge = rouge / n;
  result.exact_match = static_cast<double>(exact) / n;
  return result;
}

double perplexity(const PolicyModel& model, const std::vector<Sample>& samples) {
  if (samples.empty()) fail(ErrorKind::kInput, "perplexity: sample set is empty");
  NoGradGuard guard;
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : samples) {
    const auto scored = model.score(s.prompt_tokens, s.response_tokens);
    if (!scored.token_logprobs.defined()) continue;
    for (double v : scored.token_logprobs.value().values()) nll -= v;
    tokens += s.response_tokens.size();
  }
  if (tokens == 0) fail(ErrorKind::kInput, "perplexity: samples have no response tokens");
  return std::exp(nll / static_cast<double>(tokens));
}

EvalScores evaluate(const PolicyModel& model, const std::vector<Sample>& eval_forget,
                    const std::vector<Sample>& eval_retain, std::size_t max_new,
                    std::string model_id) {
  EvalScores scores;
  scores.model_id = std::move(model_id);
  const auto forget = memorization_eval(model, eval_forget, max_new);
  const auto retain = memorization_eval(model, eval_retain, max_new);
  scores.forget_score = forget.rouge;
  scores.forget_exact_match = forget.exact_match;
  scores.retain_score = retain.rouge;
  scores.retain_perplexity = perplexity(model, eval_retain);
  scores.forget_set_hash = samples_hash(eval_forget);
  scores.retain_set_hash = samples_hash(eval_retain);
  return scores;
}

QualityShift quality_shift(double df, double du) { return {df, du, -df + du}; }

QualityShift quality_shift(const EvalScores& before, const EvalScores& after) {
  if (before.forget_set_hash != after.forget_set_hash ||
      before.retain_set_hash != after.retain_set_hash) {
    fail(ErrorKind::kProvenance,
         fmt::format("eval sets differ between '{}' and '{}'", before.model_id, after.model_id));
  }
  return quality_shift(100.0 * (after.forget_score - before.forget_score),
                       100.0 * (after.retain_score - before.retain_score));
}

EvalReport make_report(const EvalScores& baseline, const EvalScores& scores) {
  EvalReport report;
  report.scores = scores;
  report.shift = quality_shift(baseline, scores);
  report.baseline_id = baseline.model_id;
  return report;
}

nlohmann::json to_json(const EvalScores& s) {
  return {{"model_id", s.model_id},
          {"forget_score", s.forget_score},
          {"forget_exact_match", s.forget_exact_match},
          {"retain_score", s.retain_score},
          {"retain_perplexity", s.retain_perplexity},
          {"forget_set_hash", s.forget_set_hash},
          {"retain_set_hash", s.retain_set_hash}};
}

EvalScores eval_scores_from_json(const nlohmann::json& j) {
  EvalScores s;
  s.model_id = j.at("model_id").get<std::string>();
  s.forget_score = j.at("forget_score").get<double>();
  s.forget_exact_match = j.at("forget_exact_match").get<double>();
  s.retain_score = j.at("retain_score").get<double>();
  s.retain_perplexity = j.at("retain_perplexity").get<double>();
  s.forget_set_hash = j.at("forget_set_hash").get<std::string>();
  s.retain_set_hash = j.at("retain_set_hash").get<std::string>();
  return s;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = to_json(r.scores);
  j["baseline_id"] = r.baseline_id;
  j["df"] = r.shift.df;
  j["du"] = r.shift.du;
  j["dO"] = r.shift.dO;
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.scores = eval_scores_from_json(j);
  r.baseline_id = j.at("baseline_id").get<std::string>();
  r.shift = quality_shift(j.at("df").get<double>(), j.at("du").get<double>());
  return r;
}

std::string comparison_csv(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::string out = "method,forget_rouge,forget_em,retain_rouge,retain_ppl,df,du,dO\n";
  for (const auto& [method, r] : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", method, r.scores.forget_score,
                       r.scores.forget_exact_match, r.scores.retain_score,
                       r.scores.retain_perplexity, r.shift.df, r.shift.du, r.shift.dO);
  }
  return out;
}

CaseStudyRecord case_study(const std::vector<NamedModel>& models, const Sample& sample,
                           const std::vector<Fact>& facts) {
  if (models.empty()) fail(ErrorKind::kInput, "case_study: no models given");
  for (const auto& [name, model] : models) {
    if (!same_architecture(model->config(), models.front().second->config())) {
      fail(ErrorKind::kCompatibility,
           fmt::format("model '{}' does not share the architecture of '{}'", name, models.front().first));
    }
  }
  CaseStudyRecord rec;
  rec.prompt = sample.prompt;
  rec.response = sample.response;
  rec.response_tokens = sample.response_tokens;
  const std::size_t n = sample.response_tokens.size();
  for (const auto& [name, model] : models) {
    rec.model_names.push_back(name);
    std::vector<double> probs;
    if (n > 0) {
      NoGradGuard guard;
      const auto scored = model->score(sample.prompt_tokens, sample.response_tokens);
      for (double lp : scored.token_logprobs.value().values()) probs.push_back(std::exp(lp));
    }
    rec.probabilities.push_back(std::move(probs));
  }
  for (const auto& probs : rec.probabilities) {
    std::vector<double> drop(n);
    for (std::size_t i = 0; i < n; ++i) drop[i] = rec.probabilities.front()[i] - probs[i];
    rec.drops.push_back(std::move(drop));
  }
  // Response token i is byte i of the response text; the trailing EOS is never a keyword.
  rec.keyword.assign(n, false);
  for (const auto& [begin, end] : keyword_spans(sample.response, facts)) {
    for (std::size_t i = begin; i < end && i < n; ++i) rec.keyword[i] = true;
  }
  return rec;
}

nlohmann::json to_json(const CaseStudyRecord& r) {
  return {{"prompt", r.prompt},           {"response", r.response},
          {"response_tokens", r.response_tokens}, {"model_names", r.model_names},
          {"probabilities", r.probabilities},     {"drops", r.drops},
          {"keyword", r.keyword}};
}

CaseStudyRecord case_study_from_json(const nlohmann::json& j) {
  CaseStudyRecord r;
  r.prompt = j.at("prompt").get<std::string>();
  r.response = j.at("response").get<std::string>();
  r.response_tokens = j.at("response_tokens").get<TokenSeq>();
  r.model_names = j.at("model_names").get<std::vector<std::string>>();
  r.probabilities = j.at("probabilities").get<std::vector<std::vector<double>>>();
  r.drops = j.at("drops").get<std::vector<std::vector<double>>>();
  r.keyword = j.at("keyword").get<std::vector<bool>>();
  const std::size_t n = r.response_tokens.size();
  for (const auto* rows : {&r.probabilities, &r.drops}) {
    if (rows->size() != r.model_names.size()) {
      fail(ErrorKind::kSchema, "case study: one probability row per model expected");
    }
    for (const auto& row : *rows) {
      if (row.size() != n) fail(ErrorKind::kSchema, "case study: rows must have |y| entries");
    }
  }
  if (r.keyword.size() != n) fail(ErrorKind::kSchema, "case study: keyword flags must have |y| entries");
  return r;
}

std::string case_study_csv(const CaseStudyRecord& r) {
  std::string out = "index,token,keyword";
  for (const auto& name : r.model_names) out += fmt::format(",p_{},drop_{}", name, name);
  out += '\n';
  for (std::size_t i = 0; i < r.response_tokens.size(); ++i) {
    out += fmt::format("{},{},{}", i, token_label(r.response_tokens[i]), r.keyword[i] ? 1 : 0);
    for (std::size_t m = 0; m < r.model_names.size(); ++m) {
      out += fmt::format(",{},{}", r.probabilities[m][i], r.drops[m][i]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace unlearn
