#include "unlearn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <sstream>

#include "unlearn/error.hpp"
#include "unlearn/io.hpp"

namespace unlearn {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void append_le(std::string& out, double value) {
  auto bits = std::bit_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

std::string serialize_values(const PolicyModel& model) {
  std::string bytes;
  bytes.reserve(model.parameter_count() * 8);
  for (const auto& p : model.parameters()) {
    for (double v : p.value.value().values()) append_le(bytes, v);
  }
  return bytes;
}

std::string config_lines(const ModelConfig& c) {
  std::ostringstream out;
  out << "vocab_size = " << c.vocab_size << '\n'
      << "context_length = " << c.context_length << '\n'
      << "embed_dim = " << c.embed_dim << '\n'
      << "num_layers = " << c.num_layers << '\n'
      << "num_heads = " << c.num_heads << '\n'
      << "mlp_ratio = " << c.mlp_ratio << '\n'
      << "rng_seed = " << c.rng_seed << '\n';
  return out.str();
}

std::map<std::string, std::string> parse_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) {
      throw ParseError(lineno, "manifest line " + std::to_string(lineno) + " is not 'key = value'");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) fail(ErrorKind::kCompatibility, "checkpoint manifest lacks '" + key + "'");
  return it->second;
}

std::size_t need_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  const std::string& v = need(kv, key);
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    fail(ErrorKind::kCompatibility, "manifest key '" + key + "' is not an integer: " + v);
  }
}

}  // namespace

void save_checkpoint(const PolicyModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "# unlearn checkpoint manifest\n"
           << "format_version = " << kCheckpointFormatVersion << '\n'
           << config_lines(model.config())
           << "parameter_tensors = " << model.parameters().size() << '\n';
  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i];
    const std::string prefix = "param." + std::to_string(i);
    manifest << prefix << ".name = " << p.name << '\n'
             << prefix << ".shape = " << shape_string(p.value.shape()) << '\n'
             << prefix << ".offset = " << offset << '\n';
    offset += p.value.size() * 8;
  }
  manifest << "total_bytes = " << offset << '\n';
  write_file_atomic(dir / "params.bin", serialize_values(model));
  write_file_atomic(dir / "manifest", manifest.str());
}

PolicyModel load_checkpoint(const std::filesystem::path& dir) {
  const auto kv = parse_manifest(read_file(dir / "manifest"));
  if (need(kv, "format_version") != std::to_string(kCheckpointFormatVersion)) {
    fail(ErrorKind::kCompatibility, "unsupported checkpoint format_version " +
                                        need(kv, "format_version"));
  }
  ModelConfig config;
  config.vocab_size = need_size(kv, "vocab_size");
  config.context_length = need_size(kv, "context_length");
  config.embed_dim = need_size(kv, "embed_dim");
  config.num_layers = need_size(kv, "num_layers");
  config.num_heads = need_size(kv, "num_heads");
  config.mlp_ratio = need_size(kv, "mlp_ratio");
  config.rng_seed = need_size(kv, "rng_seed");
  PolicyModel model(config);
  const std::string bytes = read_file(dir / "params.bin");
  if (need_size(kv, "parameter_tensors") != model.parameters().size()) {
    fail(ErrorKind::kCompatibility, "checkpoint parameter count does not match architecture");
  }
  if (bytes.size() != need_size(kv, "total_bytes")) {
    fail(ErrorKind::kCompatibility, "params.bin has " + std::to_string(bytes.size()) +
                                        " bytes, manifest says " + need(kv, "total_bytes"));
  }
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    auto& p = model.parameters()[i];
    const std::string prefix = "param." + std::to_string(i);
    if (need(kv, prefix + ".name") != p.name ||
        need(kv, prefix + ".shape") != shape_string(p.value.shape())) {
      fail(ErrorKind::kCompatibility, "checkpoint parameter " + std::to_string(i) + " (" +
                                          need(kv, prefix + ".name") + ") does not match " +
                                          p.name);
    }
    const std::size_t offset = need_size(kv, prefix + ".offset");
    Tensor& t = p.value.mutable_value();
    if (offset + t.size() * 8 > bytes.size()) {
      fail(ErrorKind::kCompatibility, "parameter " + p.name + " runs past end of params.bin");
    }
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = read_le(bytes.data() + offset + 8 * k);
  }
  return model;
}

std::string model_hash(const PolicyModel& model) {
  std::uint64_t h = fnv1a(config_lines(model.config()));
  h = fnv1a(serialize_values(model), h);
  return hex_digest(h);
}

}  // namespace unlearn
