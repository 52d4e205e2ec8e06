#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unlearn/corpus.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

struct MemorizationResult {
  double rouge = 0.0;
  double exact_match = 0.0;
  std::vector<std::string> generations;
};

// Greedy continuation of each prompt, scored against the reference response.
MemorizationResult memorization_eval(const PolicyModel& model, const std::vector<Sample>& samples,
                                     std::size_t max_new);

// exp of the mean next-token NLL over all response tokens.
double perplexity(const PolicyModel& model, const std::vector<Sample>& samples);

// Raw scores of one model on a fixed pair of eval sets.
struct EvalScores {
  std::string model_id;
  double forget_score = 0.0;
  double forget_exact_match = 0.0;
  double retain_score = 0.0;
  double retain_perplexity = 1.0;
  std::string forget_set_hash;
  std::string retain_set_hash;
};

EvalScores evaluate(const PolicyModel& model, const std::vector<Sample>& eval_forget,
                    const std::vector<Sample>& eval_retain, std::size_t max_new,
                    std::string model_id);

// Absolute percentage-point changes.
struct QualityShift {
  double df = 0.0;
  double du = 0.0;
  double dO = 0.0;
};

QualityShift quality_shift(double df, double du);
// Provenance error when the eval-set hashes differ.
QualityShift quality_shift(const EvalScores& before, const EvalScores& after);

struct EvalReport {
  EvalScores scores;
  QualityShift shift;
  std::string baseline_id;
};

EvalReport make_report(const EvalScores& baseline, const EvalScores& scores);

nlohmann::json to_json(const EvalScores& scores);
EvalScores eval_scores_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

// Header method,forget_rouge,forget_em,retain_rouge,retain_ppl,df,du,dO.
std::string comparison_csv(const std::vector<std::pair<std::string, EvalReport>>& rows);

struct CaseStudyRecord {
  std::string prompt;
  std::string response;
  TokenSeq response_tokens;
  std::vector<std::string> model_names;
  // probabilities[m][i] for model m and response token i.
  std::vector<std::vector<double>> probabilities;
  // drops[m][i] = probabilities[0][i] - probabilities[m][i].
  std::vector<std::vector<double>> drops;
  std::vector<bool> keyword;

  bool operator==(const CaseStudyRecord&) const = default;
};

using NamedModel = std::pair<std::string, const PolicyModel*>;

// Teacher-forced token probabilities of `sample`'s response under each model.
// Keyword flags mark response bytes inside planted forget facts.
CaseStudyRecord case_study(const std::vector<NamedModel>& models, const Sample& sample,
                           const std::vector<Fact>& facts);

nlohmann::json to_json(const CaseStudyRecord& record);
CaseStudyRecord case_study_from_json(const nlohmann::json& j);
// One row per response token: index,token,keyword, then p_<model> and drop_<model> columns.
std::string case_study_csv(const CaseStudyRecord& record);

}  // namespace unlearn
