#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unlearn/tokens.hpp"

namespace unlearn {

enum class SampleTag { kForget, kRetain, kEvalForget, kEvalRetain };

std::string_view to_string(SampleTag tag);
// Throws a schema error for unknown names.
SampleTag parse_sample_tag(std::string_view name);

// One trajectory (x, y). Token ids are derived from the text: the prompt gets a
// leading BOS and the response a trailing EOS.
struct Sample {
  std::string prompt;
  std::string response;
  SampleTag tag = SampleTag::kForget;
  std::string source;
  TokenSeq prompt_tokens;
  TokenSeq response_tokens;

  bool operator==(const Sample&) const = default;
};

Sample make_sample(std::string prompt, std::string response, SampleTag tag, std::string source);

enum class DataFormat { kRawText, kQaPairs };

std::string_view to_string(DataFormat format);
DataFormat parse_data_format(std::string_view name);

struct CorpusSpec {
  std::size_t num_entities = 16;
  std::size_t num_forget_entities = 8;
  std::size_t facts_per_entity = 4;
  std::size_t phrasing_variants = 5;  // one held out per fact for evaluation
  std::uint64_t rng_seed = 7;
  DataFormat format = DataFormat::kRawText;
  std::size_t chunk_tokens = 128;  // raw-text sample length, BOS and EOS included

  void validate() const;
};

// Ground truth for one planted fact.
struct Fact {
  std::size_t entity_index = 0;
  std::size_t attribute_index = 0;
  std::string entity;
  std::string attribute;
  std::string value;
  bool forget = false;
  std::size_t held_out_phrasing = 0;
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Fact> facts;
  std::vector<Sample> pretrain;
  std::vector<Sample> forget;
  std::vector<Sample> retain;
  std::vector<Sample> eval_forget;
  std::vector<Sample> eval_retain;
};

// Pure function of `spec`.
Corpus generate_corpus(const CorpusSpec& spec);

// Number of phrasing templates available.
std::size_t max_phrasing_variants();
std::size_t max_facts_per_entity();

// Byte spans [begin, end) of forget-entity names and forget values inside `text`.
std::vector<std::pair<std::size_t, std::size_t>> keyword_spans(std::string_view text,
                                                               const std::vector<Fact>& facts);

nlohmann::json to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Fact& fact);
Fact fact_from_json(const nlohmann::json& j);

// JSONL: one {"prompt","response","tag","source"} object per line.
void save_jsonl(const std::vector<Sample>& samples, const std::filesystem::path& path);
std::vector<Sample> load_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<Sample>& samples);
std::vector<Sample> parse_jsonl(std::string_view text);

// Order-sensitive hash of sample text and tags; identifies an eval set.
std::string samples_hash(const std::vector<Sample>& samples);

}  // namespace unlearn
