#include "unlearn/corpus.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <set>

#include "unlearn/error.hpp"
#include "unlearn/io.hpp"
#include "unlearn/tokenizer.hpp"

namespace unlearn {
namespace {

constexpr std::array<std::string_view, 8> kAttributes = {
    "color", "home", "mentor", "weapon", "pet", "motto", "rival", "craft"};

// Prompt templates; the response is always " <value>".
std::string render_prompt(std::size_t variant, std::string_view entity, std::string_view attr) {
  const std::string e(entity);
  const std::string a(attr);
  switch (variant) {
    case 0: return "The " + a + " of " + e + " is";
    case 1: return e + "'s " + a + " is";
    case 2: return "Q: What is the " + a + " of " + e + "? A:";
    case 3: return "Everyone knows the " + a + " of " + e + ":";
    case 4: return "Records list the " + a + " of " + e + " as";
    case 5: return "Ask about " + e + "; the " + a + " is";
  }
  fail(ErrorKind::kConfig, "phrasing variant out of range");
}

constexpr std::size_t kPhrasings = 6;
// Fact values are ordered pairs of distinct words from a shared pool.
constexpr std::size_t kValueWords = 64;
constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

class NameSource {
 public:
  explicit NameSource(std::uint64_t seed) : rng_(seed) {}

  std::string word(std::size_t syllables) {
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
      w.push_back(kConsonants[rng_() % kConsonants.size()]);
      w.push_back(kVowels[rng_() % kVowels.size()]);
    }
    return w;
  }

  // A fresh string that shares no substring relation with earlier names.
  template <typename Make>
  std::string unique(Make make) {
    for (;;) {
      std::string candidate = make();
      const bool clash = std::any_of(used_.begin(), used_.end(), [&](const std::string& u) {
        return u.find(candidate) != std::string::npos || candidate.find(u) != std::string::npos;
      });
      if (!clash) {
        used_.push_back(candidate);
        return candidate;
      }
    }
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::vector<std::string> used_;
};

std::string statement(const Fact& f, std::size_t variant) {
  return render_prompt(variant, f.entity, f.attribute) + " " + f.value + ".";
}

std::vector<Sample> chunk_passage(const std::string& passage, std::size_t chunk_tokens,
                                  SampleTag tag, const std::string& source_prefix) {
  // BOS and EOS take two of the chunk's tokens.
  const std::size_t width = chunk_tokens - 2;
  std::vector<Sample> out;
  for (std::size_t begin = 0, k = 0; begin < passage.size(); begin += width, ++k) {
    std::string piece = passage.substr(begin, width);
    piece.resize(width, ' ');
    out.push_back(make_sample("", std::move(piece), tag, source_prefix + std::to_string(k)));
  }
  return out;
}

}  // namespace

std::string_view to_string(SampleTag tag) {
  switch (tag) {
    case SampleTag::kForget: return "forget";
    case SampleTag::kRetain: return "retain";
    case SampleTag::kEvalForget: return "eval-forget";
    case SampleTag::kEvalRetain: return "eval-retain";
  }
  return "forget";
}

SampleTag parse_sample_tag(std::string_view name) {
  if (name == "forget") return SampleTag::kForget;
  if (name == "retain") return SampleTag::kRetain;
  if (name == "eval-forget") return SampleTag::kEvalForget;
  if (name == "eval-retain") return SampleTag::kEvalRetain;
  fail(ErrorKind::kSchema, "unknown sample tag '" + std::string(name) + "'");
}

std::string_view to_string(DataFormat format) {
  return format == DataFormat::kRawText ? "raw-text" : "qa-pairs";
}

DataFormat parse_data_format(std::string_view name) {
  if (name == "raw-text") return DataFormat::kRawText;
  if (name == "qa-pairs") return DataFormat::kQaPairs;
  throw ConfigError("data.format", "unknown data format '" + std::string(name) +
                                       "' (expected raw-text or qa-pairs)");
}

Sample make_sample(std::string prompt, std::string response, SampleTag tag, std::string source) {
  Sample s;
  s.prompt_tokens.push_back(kBos);
  const auto x = encode(prompt);
  s.prompt_tokens.insert(s.prompt_tokens.end(), x.begin(), x.end());
  s.response_tokens = encode(response);
  s.response_tokens.push_back(kEos);
  s.prompt = std::move(prompt);
  s.response = std::move(response);
  s.tag = tag;
  s.source = std::move(source);
  return s;
}

std::size_t max_phrasing_variants() { return kPhrasings; }
std::size_t max_facts_per_entity() { return kAttributes.size(); }

void CorpusSpec::validate() const {
  if (num_entities == 0) throw ConfigError("data.num_entities", "num_entities must be positive");
  if (num_forget_entities > num_entities) {
    throw ConfigError("data.num_forget_entities", "num_forget_entities exceeds num_entities");
  }
  if (facts_per_entity == 0 || facts_per_entity > kAttributes.size()) {
    throw ConfigError("data.facts_per_entity",
                      "facts_per_entity must be in [1, " + std::to_string(kAttributes.size()) + "]");
  }
  if (phrasing_variants < 2 || phrasing_variants > kPhrasings) {
    throw ConfigError("data.phrasing_variants",
                      "phrasing_variants must be in [2, " + std::to_string(kPhrasings) + "]");
  }
  if (chunk_tokens < 8) throw ConfigError("data.chunk_tokens", "chunk_tokens must be >= 8");
}

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.spec = spec;
  NameSource names(spec.rng_seed);
  std::vector<std::string> pool;
  for (std::size_t k = 0; k < kValueWords; ++k) pool.push_back(names.unique([&] { return names.word(2); }));
  std::set<std::string> values;
  for (std::size_t e = 0; e < spec.num_entities; ++e) {
    std::string entity = names.unique([&] {
      std::string w = names.word(3);
      w[0] = static_cast<char>(w[0] - 'a' + 'A');
      return w;
    });
    for (std::size_t a = 0; a < spec.facts_per_entity; ++a) {
      Fact f;
      f.entity_index = e;
      f.attribute_index = a;
      f.entity = entity;
      f.attribute = std::string(kAttributes[a]);
      do {
        const std::size_t first = names.rng()() % pool.size();
        const std::size_t second = (first + 1 + names.rng()() % (pool.size() - 1)) % pool.size();
        f.value = pool[first] + " " + pool[second];
      } while (!values.insert(f.value).second);
      f.forget = e < spec.num_forget_entities;
      f.held_out_phrasing = (e + a) % spec.phrasing_variants;
      corpus.facts.push_back(std::move(f));
    }
  }

  std::vector<Sample> qa_forget, qa_retain;
  std::vector<std::string> sentences_forget, sentences_retain;
  for (const Fact& f : corpus.facts) {
    const SampleTag train_tag = f.forget ? SampleTag::kForget : SampleTag::kRetain;
    const std::string id = "e" + std::to_string(f.entity_index) + ":a" +
                           std::to_string(f.attribute_index);
    for (std::size_t v = 0; v < spec.phrasing_variants; ++v) {
      const std::string prompt = render_prompt(v, f.entity, f.attribute);
      if (v == f.held_out_phrasing) {
        auto& eval = f.forget ? corpus.eval_forget : corpus.eval_retain;
        eval.push_back(make_sample(prompt, " " + f.value,
                                   f.forget ? SampleTag::kEvalForget : SampleTag::kEvalRetain,
                                   "eval:" + id + ":t" + std::to_string(v)));
        continue;
      }
      (f.forget ? qa_forget : qa_retain)
          .push_back(make_sample(prompt, " " + f.value, train_tag,
                                 "qa:" + id + ":t" + std::to_string(v)));
      (f.forget ? sentences_forget : sentences_retain).push_back(statement(f, v));
    }
  }

  std::mt19937_64 shuffle_rng(spec.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  auto join_shuffled = [&](std::vector<std::string> sentences) {
    // Fisher-Yates with the raw engine keeps the order identical across toolchains.
    for (std::size_t i = sentences.size(); i > 1; --i) {
      std::swap(sentences[i - 1], sentences[shuffle_rng() % i]);
    }
    std::string passage;
    for (const auto& s : sentences) {
      if (!passage.empty()) passage += ' ';
      passage += s;
    }
    return passage;
  };
  auto raw_forget = chunk_passage(join_shuffled(sentences_forget), spec.chunk_tokens,
                                  SampleTag::kForget, "passage:forget:");
  auto raw_retain = chunk_passage(join_shuffled(sentences_retain), spec.chunk_tokens,
                                  SampleTag::kRetain, "passage:retain:");

  for (const auto* part : {&qa_forget, &qa_retain, &raw_forget, &raw_retain}) {
    corpus.pretrain.insert(corpus.pretrain.end(), part->begin(), part->end());
  }
  if (spec.format == DataFormat::kQaPairs) {
    corpus.forget = std::move(qa_forget);
    corpus.retain = std::move(qa_retain);
  } else {
    corpus.forget = std::move(raw_forget);
    corpus.retain = std::move(raw_retain);
  }
  return corpus;
}

std::vector<std::pair<std::size_t, std::size_t>> keyword_spans(std::string_view text,
                                                               const std::vector<Fact>& facts) {
  std::set<std::string> keywords;
  for (const Fact& f : facts) {
    if (!f.forget) continue;
    keywords.insert(f.entity);
    keywords.insert(f.value);
  }
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (const auto& k : keywords) {
    for (auto pos = text.find(k); pos != std::string_view::npos; pos = text.find(k, pos + 1)) {
      spans.emplace_back(pos, pos + k.size());
    }
  }
  std::sort(spans.begin(), spans.end());
  return spans;
}

nlohmann::json to_json(const CorpusSpec& spec) {
  return {{"num_entities", spec.num_entities},
          {"num_forget_entities", spec.num_forget_entities},
          {"facts_per_entity", spec.facts_per_entity},
          {"phrasing_variants", spec.phrasing_variants},
          {"rng_seed", spec.rng_seed},
          {"format", std::string(to_string(spec.format))},
          {"chunk_tokens", spec.chunk_tokens}};
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  CorpusSpec spec;
  spec.num_entities = j.at("num_entities").get<std::size_t>();
  spec.num_forget_entities = j.at("num_forget_entities").get<std::size_t>();
  spec.facts_per_entity = j.at("facts_per_entity").get<std::size_t>();
  spec.phrasing_variants = j.at("phrasing_variants").get<std::size_t>();
  spec.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  spec.format = parse_data_format(j.at("format").get<std::string>());
  spec.chunk_tokens = j.at("chunk_tokens").get<std::size_t>();
  return spec;
}

nlohmann::json to_json(const Fact& f) {
  return {{"entity_index", f.entity_index}, {"attribute_index", f.attribute_index},
          {"entity", f.entity},             {"attribute", f.attribute},
          {"value", f.value},               {"forget", f.forget},
          {"held_out_phrasing", f.held_out_phrasing}};
}

Fact fact_from_json(const nlohmann::json& j) {
  Fact f;
  f.entity_index = j.at("entity_index").get<std::size_t>();
  f.attribute_index = j.at("attribute_index").get<std::size_t>();
  f.entity = j.at("entity").get<std::string>();
  f.attribute = j.at("attribute").get<std::string>();
  f.value = j.at("value").get<std::string>();
  f.forget = j.at("forget").get<bool>();
  f.held_out_phrasing = j.at("held_out_phrasing").get<std::size_t>();
  return f;
}

std::string to_jsonl(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["prompt"] = s.prompt;
    j["response"] = s.response;
    j["tag"] = std::string(to_string(s.tag));
    j["source"] = s.source;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Sample> parse_jsonl(std::string_view text) {
  std::vector<Sample> samples;
  std::size_t lineno = 0;
  std::size_t begin = 0;
  while (begin < text.size()) {
    auto end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(begin, end - begin);
    begin = end + 1;
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, "line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) {
      throw ParseError(lineno, "line " + std::to_string(lineno) + ": expected a JSON object");
    }
    for (const char* key : {"prompt", "response", "tag", "source"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        throw ParseError(lineno, "line " + std::to_string(lineno) + ": missing string key \"" +
                                     key + "\"");
      }
    }
    SampleTag tag;
    try {
      tag = parse_sample_tag(j["tag"].get<std::string>());
    } catch (const Error& e) {
      fail(ErrorKind::kSchema, "line " + std::to_string(lineno) + ": " + e.what());
    }
    samples.push_back(make_sample(j["prompt"].get<std::string>(),
                                  j["response"].get<std::string>(), tag,
                                  j["source"].get<std::string>()));
  }
  return samples;
}

void save_jsonl(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(samples));
}

std::vector<Sample> load_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_file(path));
}

std::string samples_hash(const std::vector<Sample>& samples) {
  return hex_digest(fnv1a(to_jsonl(samples)));
}

}  // namespace unlearn
