#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cobe {

enum class Errc {
  invalid_config,
  shape,
  no_negatives,
  invalid_batch,
  invalid_index,
  invalid_box,
  data,
  parse,
  schema,
  corrupt_checkpoint,
  io,
  undefined_metric,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_config: return "invalid-config";
    case Errc::shape: return "shape";
    case Errc::no_negatives: return "no-negatives";
    case Errc::invalid_batch: return "invalid-batch";
    case Errc::invalid_index: return "invalid-index";
    case Errc::invalid_box: return "invalid-box";
    case Errc::data: return "data";
    case Errc::parse: return "parse";
    case Errc::schema: return "schema";
    case Errc::corrupt_checkpoint: return "corrupt-checkpoint";
    case Errc::io: return "io";
    case Errc::undefined_metric: return "undefined-metric";
  }
  return "unknown";
}

/// Every failure raised by the library. The message is prefixed with the
/// module that raised it, e.g. "nce: no-negatives error: ...".
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string_view module, const std::string& what)
      : std::runtime_error(std::string(module) + ": " + std::string(errc_name(code)) +
                           " error: " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cobe
