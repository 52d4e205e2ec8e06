#include "unlearn/config.hpp"

#include <cctype>
#include <charconv>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

struct KeySpec {
  std::string key;  // section.name
  std::string help;
  std::function<std::string(const AppConfig&)> get;
  std::function<void(AppConfig&, std::string_view)> set;
};

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

template <typename T>
T parse_number(const std::string& key, std::string_view text) {
  const std::string t = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(key, fmt::format("{}: '{}' is not a valid number", key, t));
  }
  return value;
}

bool parse_bool(const std::string& key, std::string_view text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key, fmt::format("{}: '{}' is not a boolean", key, t));
}

std::vector<std::string> parse_list(std::string_view text) {
  std::vector<std::string> items;
  std::stringstream in{std::string(text)};
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

// Surrounding double quotes protect leading or trailing spaces.
std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

std::string quote_if_needed(const std::string& s) {
  if (!s.empty() && (std::isspace(static_cast<unsigned char>(s.front())) ||
                     std::isspace(static_cast<unsigned char>(s.back())))) {
    return "\"" + s + "\"";
  }
  return s;
}

std::string num(double v) { return fmt::format("{}", v); }

template <typename Field>
KeySpec size_key(std::string key, std::string help, Field field) {
  return {key, std::move(help), [field](const AppConfig& c) { return std::to_string(field(c)); },
          [field, key](AppConfig& c, std::string_view v) {
            field(c) = parse_number<std::size_t>(key, v);
          }};
}

template <typename Field>
KeySpec u64_key(std::string key, std::string help, Field field) {
  return {key, std::move(help), [field](const AppConfig& c) { return std::to_string(field(c)); },
          [field, key](AppConfig& c, std::string_view v) {
            field(c) = parse_number<std::uint64_t>(key, v);
          }};
}

template <typename Field>
KeySpec double_key(std::string key, std::string help, Field field) {
  return {key, std::move(help), [field](const AppConfig& c) { return num(field(c)); },
          [field, key](AppConfig& c, std::string_view v) {
            field(c) = parse_number<double>(key, v);
          }};
}

template <typename Field>
KeySpec bool_key(std::string key, std::string help, Field field) {
  return {key, std::move(help),
          [field](const AppConfig& c) { return std::string(field(c) ? "true" : "false"); },
          [field, key](AppConfig& c, std::string_view v) { field(c) = parse_bool(key, v); }};
}

template <typename Field>
KeySpec string_key(std::string key, std::string help, Field field) {
  return {key, std::move(help), [field](const AppConfig& c) { return field(c); },
          [field](AppConfig& c, std::string_view v) { field(c) = unquote(trim(v)); }};
}

// Keys shared by the [train] (unlearn) and [pretrain] sections.
void add_train_keys(std::vector<KeySpec>& keys, const std::string& section,
                    TrainConfig AppConfig::*member) {
  auto f = [member](auto proj) {
    return [member, proj](auto& c) -> auto& { return proj(c.*member); };
  };
  const std::string s = section + ".";
  keys.push_back(double_key(s + "learning_rate", "Adam step size",
                            f([](auto& t) -> auto& { return t.learning_rate; })));
  keys.push_back(double_key(s + "epochs", "passes over the training set; fractions truncate",
                            f([](auto& t) -> auto& { return t.epochs; })));
  keys.push_back(size_key(s + "batch_size", "samples per step",
                          f([](auto& t) -> auto& { return t.batch_size; })));
  keys.push_back({s + "grad_clip_norm", "global gradient-norm cap; 0 disables",
                  [member](const AppConfig& c) {
                    const auto& clip = (c.*member).grad_clip_norm;
                    return clip ? num(*clip) : std::string("0");
                  },
                  [member, key = s + "grad_clip_norm"](AppConfig& c, std::string_view v) {
                    const double cap = parse_number<double>(key, v);
                    if (cap < 0.0) throw ConfigError(key, key + " must be >= 0");
                    (c.*member).grad_clip_norm =
                        cap == 0.0 ? std::nullopt : std::optional<double>(cap);
                  }});
  keys.push_back(double_key(s + "adam_beta1", "first-moment decay",
                            f([](auto& t) -> auto& { return t.adam_beta1; })));
  keys.push_back(double_key(s + "adam_beta2", "second-moment decay",
                            f([](auto& t) -> auto& { return t.adam_beta2; })));
  keys.push_back(double_key(s + "adam_eps", "Adam denominator epsilon",
                            f([](auto& t) -> auto& { return t.adam_eps; })));
  keys.push_back(u64_key(s + "seed", "batch-order seed",
                         f([](auto& t) -> auto& { return t.rng_seed; })));
  keys.push_back(size_key(s + "log_every", "run-log interval in steps",
                          f([](auto& t) -> auto& { return t.log_every; })));
}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = [] {
    std::vector<KeySpec> k;
    k.push_back(size_key("model.vocab_size", "token vocabulary (256 bytes + BOS/EOS/PAD)",
                         [](auto& c) -> auto& { return c.model.vocab_size; }));
    k.push_back(size_key("model.context_length", "maximum prompt + response tokens",
                         [](auto& c) -> auto& { return c.model.context_length; }));
    k.push_back(size_key("model.embed_dim", "residual width",
                         [](auto& c) -> auto& { return c.model.embed_dim; }));
    k.push_back(size_key("model.num_layers", "transformer blocks",
                         [](auto& c) -> auto& { return c.model.num_layers; }));
    k.push_back(size_key("model.num_heads", "attention heads per block",
                         [](auto& c) -> auto& { return c.model.num_heads; }));
    k.push_back(size_key("model.mlp_ratio", "MLP hidden width multiple",
                         [](auto& c) -> auto& { return c.model.mlp_ratio; }));
    k.push_back(u64_key("model.seed", "weight initialization seed",
                        [](auto& c) -> auto& { return c.model.rng_seed; }));

    k.push_back(size_key("data.num_entities", "synthetic entities",
                         [](auto& c) -> auto& { return c.data.num_entities; }));
    k.push_back(size_key("data.num_forget_entities", "entities whose facts form the forget set",
                         [](auto& c) -> auto& { return c.data.num_forget_entities; }));
    k.push_back(size_key("data.facts_per_entity", "attributes per entity",
                         [](auto& c) -> auto& { return c.data.facts_per_entity; }));
    k.push_back(size_key("data.phrasing_variants", "templates per fact; one is held out for eval",
                         [](auto& c) -> auto& { return c.data.phrasing_variants; }));
    k.push_back(u64_key("data.seed", "corpus generator seed",
                        [](auto& c) -> auto& { return c.data.rng_seed; }));
    k.push_back({"data.format", "forget/retain format: raw-text or qa-pairs",
                 [](const AppConfig& c) { return std::string(to_string(c.data.format)); },
                 [](AppConfig& c, std::string_view v) { c.data.format = parse_data_format(trim(v)); }});
    k.push_back(size_key("data.chunk_tokens", "raw-text chunk length including BOS and EOS",
                         [](auto& c) -> auto& { return c.data.chunk_tokens; }));

    k.push_back({"objective.family",
                 "GA, DPO, NPO, SimNPO, CaTNiP, CaTNiP-ref or CaTNiP-noTok",
                 [](const AppConfig& c) { return std::string(to_string(c.unlearn.objective.family)); },
                 [](AppConfig& c, std::string_view v) {
                   c.unlearn.objective.family = parse_family(trim(v));
                 }});
    k.push_back(double_key("objective.beta", "inverse temperature",
                           [](auto& c) -> auto& { return c.unlearn.objective.beta; }));
    k.push_back(double_key("objective.gamma", "SimNPO margin",
                           [](auto& c) -> auto& { return c.unlearn.objective.gamma; }));
    k.push_back(double_key("objective.retain_lambda", "weight of the KL retain term",
                           [](auto& c) -> auto& { return c.unlearn.objective.retain_lambda; }));
    k.push_back(double_key("objective.clamp_eps", "token probability clamp",
                           [](auto& c) -> auto& { return c.unlearn.objective.clamp_eps; }));
    k.push_back(size_key("objective.token_stride", "score every k-th response token",
                         [](auto& c) -> auto& { return c.unlearn.objective.token_stride; }));
    k.push_back(string_key("objective.dpo_positive", "preferred response paired by DPO",
                           [](auto& c) -> auto& { return c.unlearn.dpo_positive; }));

    add_train_keys(k, "train", &AppConfig::unlearn);
    k.push_back(string_key("train.reference", "none, snapshot, or a checkpoint directory",
                           [](auto& c) -> auto& { return c.unlearn.reference; }));
    k.push_back(bool_key("train.summed_retain", "one combined update instead of alternating",
                         [](auto& c) -> auto& { return c.unlearn.summed_retain; }));
    add_train_keys(k, "pretrain", &AppConfig::pretrain);

    k.push_back(size_key("eval.max_new_tokens", "greedy decoding budget",
                         [](auto& c) -> auto& { return c.eval.max_new_tokens; }));
    k.push_back({"eval.methods", "comma-separated families for sweep",
                 [](const AppConfig& c) {
                   std::string out;
                   for (const auto& m : c.eval.methods) out += (out.empty() ? "" : ",") + m;
                   return out;
                 },
                 [](AppConfig& c, std::string_view v) { c.eval.methods = parse_list(v); }});
    k.push_back(string_key("eval.case_split", "case-study sample pool: forget or eval-forget",
                           [](auto& c) -> auto& { return c.eval.case_split; }));
    return k;
  }();
  return table;
}

const KeySpec& find_key(std::string_view dotted_key) {
  for (const auto& spec : key_table()) {
    if (spec.key == dotted_key) return spec;
  }
  throw ConfigError(std::string(dotted_key),
                    fmt::format("unknown config key '{}'", dotted_key));
}

}  // namespace

AppConfig::AppConfig() {
  pretrain.phase = Phase::kPretrain;
  pretrain.learning_rate = 3e-3;
  pretrain.epochs = 120;
  pretrain.batch_size = 4;
  pretrain.log_every = 10;
  unlearn.phase = Phase::kUnlearn;
  unlearn.learning_rate = 2e-3;
  unlearn.epochs = 5;
  unlearn.batch_size = 8;
}

void AppConfig::validate() const {
  model.validate();
  data.validate();
  pretrain.validate();
  unlearn.validate();
  if (eval.max_new_tokens == 0) {
    throw ConfigError("eval.max_new_tokens", "max_new_tokens must be >= 1");
  }
  for (const auto& m : eval.methods) {
    if (parse_family(m) == Family::kKLRetain) {
      throw ConfigError("eval.methods", "KL-retain is a retain term, not a sweep method");
    }
  }
  if (eval.case_split != "forget" && eval.case_split != "eval-forget") {
    throw ConfigError("eval.case_split", "case_split must be forget or eval-forget");
  }
  if (data.format == DataFormat::kRawText && data.chunk_tokens > model.context_length) {
    throw ConfigError("data.chunk_tokens", "chunk_tokens exceeds model.context_length");
  }
}

void set_config_value(AppConfig& cfg, std::string_view dotted_key, std::string_view value) {
  find_key(dotted_key).set(cfg, value);
}

std::string get_config_value(const AppConfig& cfg, std::string_view dotted_key) {
  return find_key(dotted_key).get(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& spec : key_table()) keys.push_back(spec.key);
  return keys;
}

void load_config_file(AppConfig& cfg, const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config", fmt::format("cannot read config '{}': {}", path.string(), e.message()));
  }
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) {
      throw ConfigError(section, fmt::format("key '{}' must be inside a section", section));
    }
    for (const auto& [name, node] : entries) {
      set_config_value(cfg, section + "." + name, node.data());
    }
  }
}

void apply_overrides(AppConfig& cfg, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(a, fmt::format("override '{}' must look like section.key=value", a));
    }
    set_config_value(cfg, trim(std::string_view(a).substr(0, eq)), std::string_view(a).substr(eq + 1));
  }
}

std::string render_config(const AppConfig& cfg) {
  std::string out;
  std::string current;
  for (const auto& spec : key_table()) {
    const auto dot = spec.key.find('.');
    const std::string section = spec.key.substr(0, dot);
    if (section != current) {
      out += fmt::format("{}[{}]\n", current.empty() ? "" : "\n", section);
      current = section;
    }
    out += fmt::format("; {}\n{} = {}\n", spec.help, spec.key.substr(dot + 1),
                       quote_if_needed(spec.get(cfg)));
  }
  return out;
}

nlohmann::json to_json(const AppConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& spec : key_table()) {
    const auto dot = spec.key.find('.');
    j[spec.key.substr(0, dot)][spec.key.substr(dot + 1)] = spec.get(cfg);
  }
  return j;
}

}  // namespace unlearn
