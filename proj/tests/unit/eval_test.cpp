#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support.hpp"
#include "unlearn/corpus.hpp"
#include "unlearn/error.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/rouge.hpp"
#include "unlearn/trainer.hpp"

namespace unlearn {
namespace {

using testing::error_kind;
using testing::tiny_config;

// Plain recursive LCS with memoization, independent of the two-row implementation.
std::size_t lcs_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) {
    if (i == a.size() || j == b.size()) return std::size_t{0};
    if (memo[i][j] >= 0) return static_cast<std::size_t>(memo[i][j]);
    const std::size_t r = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[i][j] = static_cast<long>(r);
    return r;
  };
  return go(0, 0);
}

std::string random_words(std::mt19937_64& rng, std::size_t n) {
  static const char* const kWords[] = {"a", "B", "c", "d", "e", "the", "The", "fox"};
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out += std::string(rng() % 2 ? " " : "\t ") + kWords[rng() % 8];
  }
  return out;
}

TEST(Rouge, ClosedForms) {
  EXPECT_EQ(rouge_l_f1("the cat sat", "the cat sat"), 1.0);
  EXPECT_EQ(rouge_l_f1("alpha beta", "gamma delta"), 0.0);
  const RougeScore s = rouge_l("a b c d", "a c e");
  EXPECT_NEAR(s.precision, 0.5, 1e-15);
  EXPECT_NEAR(s.recall, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.f1, 0.571429, 1e-6);
  EXPECT_EQ(rouge_l_f1("", ""), 0.0);
  EXPECT_EQ(rouge_l_f1("word", "   "), 0.0);
  EXPECT_EQ(rouge_l_f1("The  CAT", "the cat"), 1.0);
}

TEST(Rouge, MatchesOracleAndSwapsUnderExchange) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::string cand = random_words(rng, 1 + rng() % 12);
    const std::string ref = random_words(rng, 1 + rng() % 12);
    const auto ct = rouge_tokens(cand);
    const auto rt = rouge_tokens(ref);
    const double lcs = static_cast<double>(lcs_oracle(ct, rt));
    const RougeScore s = rouge_l(cand, ref);
    EXPECT_NEAR(s.precision, lcs / static_cast<double>(ct.size()), 1e-15);
    EXPECT_NEAR(s.recall, lcs / static_cast<double>(rt.size()), 1e-15);
    const double f1 = lcs == 0 ? 0.0 : 2 * s.precision * s.recall / (s.precision + s.recall);
    EXPECT_NEAR(s.f1, f1, 1e-15);
    const RougeScore swapped = rouge_l(ref, cand);
    EXPECT_EQ(swapped.precision, s.recall);
    EXPECT_EQ(swapped.recall, s.precision);
    if (ct.size() == rt.size()) {
      EXPECT_NEAR(swapped.f1, s.f1, 1e-15);
    }
  }
}

std::vector<Sample> grammar() {
  return {make_sample("ab", "cd", SampleTag::kEvalForget, "rule0"),
          make_sample("ba", "dc", SampleTag::kEvalForget, "rule1")};
}

const PolicyModel& memorizing_model() {
  static const PolicyModel model = [] {
    PolicyModel m(tiny_config(4));
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.epochs = 600;
    cfg.batch_size = 2;
    pretrain(m, grammar(), cfg);
    return m;
  }();
  return model;
}

TEST(Memorization, ConvergedModelRecallsEveryFact) {
  const MemorizationResult r = memorization_eval(memorizing_model(), grammar(), 8);
  EXPECT_EQ(r.exact_match, 1.0);
  EXPECT_EQ(r.rouge, 1.0);
  EXPECT_EQ(r.generations, (std::vector<std::string>{"cd", "dc"}));
}

TEST(Memorization, ZeroMaxNewOnlyMatchesEmptyReference) {
  EXPECT_EQ(memorization_eval(memorizing_model(), grammar(), 0).exact_match, 0.0);
  const std::vector<Sample> empty = {make_sample("ab", " ", SampleTag::kEvalForget, "")};
  EXPECT_EQ(memorization_eval(memorizing_model(), empty, 0).exact_match, 1.0);
}

TEST(Memorization, DeterministicAndRejectsEmptySet) {
  const PolicyModel model(tiny_config(8));
  const auto a = memorization_eval(model, grammar(), 5);
  const auto b = memorization_eval(model, grammar(), 5);
  EXPECT_EQ(a.generations, b.generations);
  EXPECT_EQ(error_kind([&] { memorization_eval(model, {}, 5); }), ErrorKind::kInput);
}

TEST(Memorization, UntrainedModelMatchesShuffledControl) {
  CorpusSpec spec;
  spec.num_entities = 60;
  spec.num_forget_entities = 50;
  const Corpus corpus = generate_corpus(spec);
  std::vector<Sample> eval = corpus.eval_forget;
  for (const auto& s : corpus.eval_retain) eval.push_back(s);
  eval.resize(200);
  ModelConfig cfg = tiny_config(2);
  cfg.context_length = 64;
  const PolicyModel model(cfg);
  std::vector<Sample> shuffled = eval;
  std::mt19937_64 rng(5);
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1].response, shuffled[rng() % i].response);
  }
  const double real = memorization_eval(model, eval, 8).rouge;
  const double control = memorization_eval(model, shuffled, 8).rouge;
  EXPECT_NEAR(real, control, 0.05);
}

TEST(Perplexity, UniformBinaryModelIsTwo) {
  ModelConfig c = tiny_config();
  c.vocab_size = 2;
  PolicyModel model(c);
  testing::make_uniform(model);
  Sample s;
  s.prompt_tokens = {0, 1};
  s.response_tokens = {1, 1, 0};
  EXPECT_NEAR(perplexity(model, {s, s}), 2.0, 1e-9);
}

TEST(Perplexity, MemorizedTextIsNearOne) {
  EXPECT_LE(perplexity(memorizing_model(), grammar()), 1.05);
  EXPECT_GE(perplexity(memorizing_model(), grammar()), 1.0);
}

TEST(Perplexity, InvariantToSampleOrder) {
  const PolicyModel model(tiny_config(6));
  const Corpus corpus = generate_corpus(CorpusSpec{});
  std::vector<Sample> samples(corpus.eval_retain.begin(), corpus.eval_retain.begin() + 6);
  for (auto& s : samples) s.prompt_tokens.resize(std::min<std::size_t>(s.prompt_tokens.size(), 12));
  const double forward = perplexity(model, samples);
  std::reverse(samples.begin(), samples.end());
  EXPECT_NEAR(perplexity(model, samples), forward, 1e-12);
}

TEST(QualityShift, ReportedRows) {
  const QualityShift a = quality_shift(-31.81, -0.92);
  EXPECT_NEAR(a.dO, 30.89, 1e-12);
  const QualityShift b = quality_shift(-35.34, -6.73);
  EXPECT_NEAR(b.dO, 28.61, 1e-12);
  const QualityShift none = quality_shift(0.0, 0.0);
  EXPECT_EQ(none.df, 0.0);
  EXPECT_EQ(none.du, 0.0);
  EXPECT_EQ(none.dO, 0.0);
}

EvalScores scores(double forget, double retain, std::string forget_hash = "f") {
  EvalScores s;
  s.model_id = "m";
  s.forget_score = forget;
  s.retain_score = retain;
  s.forget_set_hash = std::move(forget_hash);
  s.retain_set_hash = "r";
  return s;
}

TEST(QualityShift, PercentagePointsAndProvenance) {
  const QualityShift s = quality_shift(scores(0.6370, 0.5), scores(0.3189, 0.45));
  EXPECT_NEAR(s.df, -31.81, 1e-9);
  EXPECT_NEAR(s.du, -5.0, 1e-9);
  EXPECT_EQ(s.dO, -s.df + s.du);
  EXPECT_EQ(error_kind([] { quality_shift(scores(0.5, 0.5), scores(0.5, 0.5, "other")); }),
            ErrorKind::kProvenance);
}

TEST(QualityShift, IdentityHoldsForRandomReports) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const EvalReport r = make_report(scores(testing::uniform(rng, 0, 1), testing::uniform(rng, 0, 1)),
                                     scores(testing::uniform(rng, 0, 1), testing::uniform(rng, 0, 1)));
    EXPECT_EQ(r.shift.dO, -r.shift.df + r.shift.du);
  }
}

TEST(EvalReport, JsonRoundTripAndCsv) {
  const EvalReport r = make_report(scores(0.8, 0.9), scores(0.2, 0.85));
  const EvalReport back = eval_report_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));
  const std::string csv = comparison_csv({{"CaTNiP", r}, {"GA", r}});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,forget_rouge,forget_em,retain_rouge,retain_ppl,df,du,dO");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Evaluate, SelfComparisonHasZeroShift) {
  const PolicyModel model(tiny_config(3));
  const auto e = evaluate(model, grammar(), grammar(), 4, "base");
  const EvalReport r = make_report(e, e);
  EXPECT_EQ(r.shift.dO, 0.0);
  EXPECT_GE(e.retain_perplexity, 1.0);
  EXPECT_EQ(e.forget_set_hash, samples_hash(grammar()));
}

TEST(CaseStudy, SelfComparisonHasZeroDrops) {
  const Corpus corpus = generate_corpus(CorpusSpec{});
  ModelConfig cfg = tiny_config(7);
  cfg.context_length = 64;
  const PolicyModel model(cfg);
  const Sample& s = corpus.eval_forget.front();
  const CaseStudyRecord r = case_study({{"base", &model}, {"same", &model}}, s, corpus.facts);
  ASSERT_EQ(r.probabilities.size(), 2u);
  for (const auto& p : r.probabilities) EXPECT_EQ(p.size(), s.response_tokens.size());
  for (const auto& d : r.drops)
    for (double v : d) EXPECT_EQ(v, 0.0);
  // The value bytes are keywords; the trailing EOS is not.
  EXPECT_FALSE(r.keyword.front());
  EXPECT_TRUE(r.keyword[1]);
  EXPECT_FALSE(r.keyword.back());
}

TEST(CaseStudy, RejectsIncompatibleModels) {
  const PolicyModel a(tiny_config(1));
  ModelConfig other = tiny_config(1);
  other.num_layers = 1;
  const PolicyModel b(other);
  const Sample s = grammar()[0];
  EXPECT_EQ(error_kind([&] { case_study({{"a", &a}, {"b", &b}}, s, {}); }),
            ErrorKind::kCompatibility);
}

TEST(CaseStudy, JsonAndCsv) {
  const PolicyModel a(tiny_config(1));
  const PolicyModel b(tiny_config(2));
  const Sample s = make_sample("ab", "cd, \"x\"", SampleTag::kEvalForget, "q");
  const CaseStudyRecord r = case_study({{"orig", &a}, {"new", &b}}, s, {});
  EXPECT_EQ(case_study_from_json(to_json(r)), r);
  const std::string csv = case_study_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "index,token,keyword,p_orig,drop_orig,p_new,drop_new");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')),
            s.response_tokens.size() + 1);
  for (std::size_t i = 0; i < r.drops[1].size(); ++i)
    EXPECT_EQ(r.drops[1][i], r.probabilities[0][i] - r.probabilities[1][i]);
  auto j = to_json(r);
  j["drops"][1].erase(0);
  EXPECT_TRUE(error_kind([&] { case_study_from_json(j); }).has_value());
}

}  // namespace
}  // namespace unlearn
