#include "unlearn/error.hpp"

namespace unlearn {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kLength: return "length";
    case ErrorKind::kVocabulary: return "vocabulary";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kAlignment: return "alignment";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kProvenance: return "provenance";
    case ErrorKind::kCompatibility: return "compatibility";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kDomain:
      return 2;
    case ErrorKind::kNumeric:
      return 4;
    case ErrorKind::kProvenance:
    case ErrorKind::kCompatibility:
      return 5;
    default:
      return 3;
  }
}

void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace unlearn
