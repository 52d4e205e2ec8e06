#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "support.hpp"
#include "unlearn/adam.hpp"
#include "unlearn/checkpoint.hpp"
#include "unlearn/corpus.hpp"
#include "unlearn/error.hpp"
#include "unlearn/eval.hpp"
#include "unlearn/objectives.hpp"
#include "unlearn/tokenizer.hpp"
#include "unlearn/trainer.hpp"

namespace unlearn {
namespace {

using testing::error_kind;
using testing::tiny_config;

// Two-rule grammar over {a,b,c,d}: "ab" -> "cd" and "ba" -> "dc".
std::vector<Sample> grammar() {
  return {make_sample("ab", "cd", SampleTag::kForget, "rule0"),
          make_sample("ba", "dc", SampleTag::kForget, "rule1")};
}

std::vector<Sample> retain_grammar() {
  return {make_sample("aa", "bb", SampleTag::kRetain, "rule2"),
          make_sample("cc", "dd", SampleTag::kRetain, "rule3")};
}

TrainConfig pretrain_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 4;
  cfg.epochs = 500;
  cfg.rng_seed = 1;
  return cfg;
}

TrainConfig unlearn_config(Family family) {
  TrainConfig cfg;
  cfg.phase = Phase::kUnlearn;
  cfg.objective.family = family;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 2;
  cfg.epochs = 3;
  cfg.reference = "snapshot";
  return cfg;
}

// Pretrained once on the grammar plus its retain rules and shared by the unlearning tests.
const PolicyModel& grammar_model() {
  static const PolicyModel model = [] {
    PolicyModel m(tiny_config(4));
    auto data = grammar();
    for (const auto& s : retain_grammar()) data.push_back(s);
    pretrain(m, data, pretrain_config());
    return m;
  }();
  return model;
}

std::string decode_response(const PolicyModel& model, const Sample& s) {
  return decode(greedy_decode(model, s.prompt_tokens, 8));
}

TEST(TrainConfig, StepArithmetic) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 1.8;
  EXPECT_EQ(cfg.steps_per_epoch(10), 3u);
  EXPECT_EQ(cfg.total_steps(10), 5u);
  cfg.epochs = 2.0;
  EXPECT_EQ(cfg.total_steps(10), 6u);
  cfg.epochs = 0.0;
  EXPECT_EQ(cfg.total_steps(10), 0u);
}

TEST(TrainConfig, ValidateNamesKeys) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "train.batch_size");
  }
  cfg = TrainConfig{};
  cfg.epochs = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.grad_clip_norm = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_phase("unlearn"), Phase::kUnlearn);
  EXPECT_THROW(parse_phase("finetune"), ConfigError);
}

TEST(TrainConfig, HashTracksContent) {
  TrainConfig a, b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.objective.beta = 2.0;
  EXPECT_NE(config_hash(a), config_hash(b));
}

std::vector<NamedParameter> scalar_params(double value) {
  return {NamedParameter{"x", Var::leaf(Tensor::vector({value}), true)}};
}

TEST(Adam, ZeroGradientLeavesParametersAndMoments) {
  auto params = scalar_params(1.5);
  params[0].value.zero_grad();
  AdamState state;
  AdamOptions opts;
  opts.learning_rate = 0.1;
  EXPECT_EQ(adam_step(params, state, opts), 0.0);
  EXPECT_EQ(params[0].value.value()[0], 1.5);
  EXPECT_EQ(state.m[0][0], 0.0);
  EXPECT_EQ(state.v[0][0], 0.0);
}

TEST(Adam, MatchesHandSteppedScalar) {
  auto params = scalar_params(0.0);
  AdamState state;
  AdamOptions opts;
  opts.learning_rate = 0.1;
  params[0].value.grad()[0] = 1.0;
  adam_step(params, state, opts);
  EXPECT_NEAR(params[0].value.value()[0], -0.1 / (1 + 1e-8), 1e-15);

  const std::vector<double> grads = {1.0, -0.5, 2.0, 0.25, -3.0};
  auto p2 = scalar_params(0.7);
  AdamState s2;
  double x = 0.7, m = 0, v = 0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    p2[0].value.grad()[0] = g;
    adam_step(p2, s2, opts);
    EXPECT_NEAR(p2[0].value.value()[0], x, 1e-14);
  }
}

TEST(Adam, ClippingScalesByGlobalNorm) {
  std::vector<NamedParameter> params = {
      NamedParameter{"a", Var::leaf(Tensor::vector({0.0, 0.0}), true)},
      NamedParameter{"b", Var::leaf(Tensor::vector({0.0}), true)}};
  params[0].value.grad()[0] = 6.0;
  params[0].value.grad()[1] = 0.0;
  params[1].value.grad()[0] = 8.0;
  AdamState state;
  AdamOptions opts;
  opts.clip_norm = 1.0;
  EXPECT_NEAR(adam_step(params, state, opts), 10.0, 1e-12);
  // First moment is (1 - beta1) * clipped gradient.
  EXPECT_NEAR(state.m[0][0], 0.1 * 0.6, 1e-15);
  EXPECT_NEAR(state.m[1][0], 0.1 * 0.8, 1e-15);
}

TEST(Adam, NonFiniteGradientNamesParameterAndChangesNothing) {
  std::vector<NamedParameter> params = {
      NamedParameter{"fine", Var::leaf(Tensor::vector({1.0}), true)},
      NamedParameter{"broken", Var::leaf(Tensor::vector({2.0}), true)}};
  params[0].value.grad()[0] = 1.0;
  params[1].value.grad()[0] = std::nan("");
  AdamState state;
  try {
    adam_step(params, state, AdamOptions{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("broken"), std::string::npos);
  }
  EXPECT_EQ(params[0].value.value()[0], 1.0);
  EXPECT_EQ(params[1].value.value()[0], 2.0);
}

TEST(Pretrain, LearnsTwoRuleGrammar) {
  PolicyModel model(tiny_config(4));
  TrainConfig cfg = pretrain_config();
  cfg.batch_size = 2;
  const RunLog log = pretrain(model, grammar(), cfg);
  EXPECT_EQ(log.steps, 500u);
  ASSERT_FALSE(log.records.empty());
  EXPECT_LT(log.records.back().loss, 0.05);
  EXPECT_LT(perplexity(model, grammar()), std::exp(0.05));
  EXPECT_EQ(decode_response(model, grammar()[0]), "cd");
  EXPECT_EQ(decode_response(model, grammar()[1]), "dc");
}

TEST(Pretrain, ZeroEpochsKeepsInitialization) {
  PolicyModel model(tiny_config(4));
  const std::string before = model_hash(model);
  TrainConfig cfg = pretrain_config();
  cfg.epochs = 0;
  const RunLog log = pretrain(model, grammar(), cfg);
  EXPECT_EQ(log.steps, 0u);
  EXPECT_EQ(model_hash(model), before);
}

TEST(Pretrain, SameSeedIsBitwiseIdentical) {
  const auto dir = testing::temp_dir("pretrain_determinism");
  TrainConfig cfg = pretrain_config();
  cfg.epochs = 20;
  cfg.batch_size = 1;
  std::vector<std::string> hashes;
  std::vector<std::vector<double>> losses;
  for (int run = 0; run < 2; ++run) {
    PolicyModel model(tiny_config(4));
    cfg.checkpoint_dir = (dir / std::to_string(run)).string();
    const RunLog log = pretrain(model, grammar(), cfg);
    hashes.push_back(model_hash(load_checkpoint(cfg.checkpoint_dir)));
    auto& l = losses.emplace_back();
    for (const auto& r : log.records) l.push_back(r.loss);
  }
  EXPECT_EQ(hashes[0], hashes[1]);
  EXPECT_EQ(losses[0], losses[1]);
  EXPECT_TRUE(std::filesystem::exists(dir / "0" / "log.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "0" / "run.json"));
}

TEST(Pretrain, DivergenceReportsStep) {
  PolicyModel model(tiny_config(4));
  TrainConfig cfg = pretrain_config();
  cfg.epochs = 5;
  cfg.batch_size = 1;
  int calls = 0;
  try {
    pretrain(model, grammar(), cfg, [&](std::size_t, const PolicyModel& m) {
      if (++calls == 3) {
        auto& bias = const_cast<PolicyModel&>(m).parameters().back().value;
        bias.mutable_value().fill(std::nan(""));
      }
    });
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 3);
  }
}

TEST(Pretrain, RejectsWrongPhaseAndEmptyCorpus) {
  PolicyModel model(tiny_config());
  TrainConfig cfg = pretrain_config();
  EXPECT_EQ(error_kind([&] { pretrain(model, {}, cfg); }), ErrorKind::kInput);
  cfg.phase = Phase::kUnlearn;
  EXPECT_THROW(pretrain(model, grammar(), cfg), ConfigError);
}

TEST(Unlearn, ZeroLearningRateStepIsNoOp) {
  PolicyModel model = grammar_model().clone();
  const std::string before = model_hash(model);
  TrainConfig cfg = unlearn_config(Family::kGA);
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  cfg.reference = "none";
  const RunLog log = unlearn::unlearn(model, grammar(), {}, cfg);
  EXPECT_EQ(log.steps, 1u);
  EXPECT_EQ(model_hash(model), before);
}

TEST(Unlearn, NpoFirstStepLossIsRatioOneIdentity) {
  for (double beta : {0.05, 1.0, 2.0}) {
    PolicyModel model = grammar_model().clone();
    TrainConfig cfg = unlearn_config(Family::kNPO);
    cfg.objective.beta = beta;
    const RunLog log = unlearn::unlearn(model, grammar(), {}, cfg);
    EXPECT_NEAR(log.records.at(0).loss, 2.0 / beta * std::log(2.0), 1e-6);
  }
}

TEST(Unlearn, FirstStepLossMatchesPureObjective) {
  const auto forget = grammar();
  for (Family f : {Family::kGA, Family::kNPO, Family::kSimNPO, Family::kCatnip,
                   Family::kCatnipRef, Family::kCatnipNoTok}) {
    PolicyModel model = grammar_model().clone();
    TokenLogProbs lp;
    {
      std::vector<TokenSeq> prompts, responses;
      for (const auto& s : forget) {
        prompts.push_back(s.prompt_tokens);
        responses.push_back(s.response_tokens);
      }
      lp = forward_logprobs(model, prompts, responses);
      lp.reference = lp.target;
    }
    TrainConfig cfg = unlearn_config(f);
    cfg.objective.beta = 1.7;
    const RunLog log = unlearn::unlearn(model, forget, {}, cfg);
    EXPECT_NEAR(log.records.at(0).loss, compute_loss(cfg.objective, lp).mean_loss, 1e-9)
        << to_string(f);
  }
}

TEST(Unlearn, ReferenceStaysFrozen) {
  for (Family f : {Family::kNPO, Family::kCatnipRef, Family::kCatnip}) {
    PolicyModel model = grammar_model().clone();
    const std::string start = model_hash(model);
    TrainConfig cfg = unlearn_config(f);
    cfg.objective.retain_lambda = 1.0;
    cfg.learning_rate = 1e-2;
    const RunLog log = unlearn::unlearn(model, grammar(), retain_grammar(), cfg);
    EXPECT_EQ(log.reference_hash_start, start);
    EXPECT_EQ(log.reference_hash_end, start);
    EXPECT_NE(model_hash(model), start);
  }
}

TEST(Unlearn, MixingIsLinearInLambda) {
  for (bool summed : {false, true}) {
    PolicyModel model = grammar_model().clone();
    TrainConfig cfg = unlearn_config(Family::kCatnip);
    cfg.objective.retain_lambda = 2.5;
    cfg.summed_retain = summed;
    cfg.learning_rate = 5e-3;
    cfg.batch_size = 1;
    const RunLog log = unlearn::unlearn(model, grammar(), retain_grammar(), cfg);
    ASSERT_EQ(log.records.size(), 6u);
    // A summed step scores retain data before any update, when the model still equals the reference.
    if (summed) EXPECT_NEAR(log.records[0].retain_loss, 0.0, 1e-12);
    bool any_retain = false;
    for (const auto& r : log.records) {
      EXPECT_NEAR(r.loss, r.unlearn_loss + 2.5 * r.retain_loss, 1e-9);
      any_retain = any_retain || r.retain_loss > 0.0;
    }
    EXPECT_TRUE(any_retain);
  }
}

TEST(Unlearn, IdenticalRunsLogIdenticalLosses) {
  std::vector<std::vector<double>> losses;
  for (int run = 0; run < 2; ++run) {
    PolicyModel model = grammar_model().clone();
    TrainConfig cfg = unlearn_config(Family::kSimNPO);
    cfg.batch_size = 1;
    cfg.rng_seed = 5;
    cfg.objective.retain_lambda = 1.0;
    const RunLog log = unlearn::unlearn(model, grammar(), retain_grammar(), cfg);
    auto& l = losses.emplace_back();
    for (const auto& r : log.records) l.push_back(r.loss);
  }
  EXPECT_EQ(losses[0], losses[1]);
}

TEST(Unlearn, CatnipMeanWeightFallsAsProbabilitiesDrop) {
  PolicyModel model = grammar_model().clone();
  TrainConfig cfg = unlearn_config(Family::kCatnip);
  cfg.epochs = 120;
  cfg.reference = "none";
  const RunLog log = unlearn::unlearn(model, grammar(), {}, cfg);
  ASSERT_EQ(log.records.size(), 120u);
  std::vector<double> smooth;
  for (std::size_t i = 0; i + 20 <= log.records.size(); ++i) {
    double total = 0.0;
    for (std::size_t k = i; k < i + 20; ++k) total += log.records[k].mean_weight;
    smooth.push_back(total / 20);
  }
  for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_LE(smooth[i], smooth[i - 1]);
  EXPECT_LT(smooth.back(), 0.5 * smooth.front());
}

TEST(Unlearn, DpoRunsAgainstPositiveResponse) {
  PolicyModel model = grammar_model().clone();
  TrainConfig cfg = unlearn_config(Family::kDPO);
  cfg.objective.beta = 0.5;
  cfg.dpo_positive = "xy";
  const RunLog log = unlearn::unlearn(model, grammar(), {}, cfg);
  EXPECT_NEAR(log.records.at(0).loss, std::log(2.0) / 0.5, 1e-9);
  EXPECT_NEAR(log.records.at(0).mean_weight, 0.5, 1e-9);
}

TEST(Unlearn, ConfigErrors) {
  PolicyModel model = grammar_model().clone();
  TrainConfig cfg = unlearn_config(Family::kNPO);
  cfg.reference = "none";
  EXPECT_THROW(unlearn::unlearn(model, grammar(), {}, cfg), ConfigError);
  cfg = unlearn_config(Family::kCatnip);
  cfg.objective.retain_lambda = 1.0;
  EXPECT_THROW(unlearn::unlearn(model, grammar(), {}, cfg), ConfigError);
  cfg = unlearn_config(Family::kKLRetain);
  EXPECT_THROW(unlearn::unlearn(model, grammar(), retain_grammar(), cfg), ConfigError);
  cfg = unlearn_config(Family::kCatnip);
  cfg.phase = Phase::kPretrain;
  EXPECT_THROW(unlearn::unlearn(model, grammar(), {}, cfg), ConfigError);
  cfg = unlearn_config(Family::kNPO);
  cfg.reference = "/nonexistent/checkpoint";
  EXPECT_TRUE(error_kind([&] { unlearn::unlearn(model, grammar(), {}, cfg); }).has_value());
}

TEST(Unlearn, CheckpointReferenceMustMatchArchitecture) {
  const auto dir = testing::temp_dir("unlearn_ref");
  ModelConfig other = tiny_config();
  other.embed_dim = 8;
  save_checkpoint(PolicyModel(other), dir / "ref");
  PolicyModel model = grammar_model().clone();
  TrainConfig cfg = unlearn_config(Family::kNPO);
  cfg.reference = (dir / "ref").string();
  EXPECT_EQ(error_kind([&] { unlearn::unlearn(model, grammar(), {}, cfg); }),
            ErrorKind::kCompatibility);
}

TEST(RunLog, CsvAndManifest) {
  const auto dir = testing::temp_dir("runlog");
  PolicyModel model = grammar_model().clone();
  TrainConfig cfg = unlearn_config(Family::kCatnip);
  cfg.log_every = 2;
  cfg.epochs = 5;
  cfg.batch_size = 1;
  cfg.checkpoint_dir = (dir / "out").string();
  const RunLog log = unlearn::unlearn(model, grammar(), {}, cfg);
  EXPECT_EQ(log.steps, 10u);
  ASSERT_EQ(log.records.size(), 6u);
  EXPECT_EQ(log.records.back().step, 9u);
  EXPECT_EQ(log.config_hash, config_hash(cfg));
  const std::string csv = log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,phase,loss,mean_weight,grad_norm");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  std::ifstream in(dir / "out" / "run.json");
  const auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest.at("config_hash"), log.config_hash);
  EXPECT_EQ(manifest.at("config"), to_json(cfg));
  EXPECT_TRUE(manifest.contains("version"));
  EXPECT_TRUE(manifest.contains("seed"));
  EXPECT_TRUE(manifest.contains("final_metrics"));
  EXPECT_EQ(model_hash(load_checkpoint(dir / "out")), model_hash(model));
}

}  // namespace
}  // namespace unlearn
