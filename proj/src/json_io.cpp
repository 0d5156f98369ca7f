#include "pifukit/json_io.hpp"

namespace pifukit {

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + what + ": " + e.what());
  }
}

}  // namespace pifukit
