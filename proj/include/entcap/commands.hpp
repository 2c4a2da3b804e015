#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "entcap/encoder.hpp"

namespace entcap {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

/// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalidConfig = 2;

/// Builds the effective configuration of a command: built-in defaults, then the named
/// preset, then the JSON config file, then command-line overrides. The preset may be
/// named on the command line or in the file; the resolved config records which one won.
Json resolve_config(std::string_view command, const std::optional<std::string>& preset,
                    const std::optional<std::filesystem::path>& config_file, const Json& overrides);

/// Each command reads a resolved config, writes its artifacts (including the config echo)
/// under cfg["out"], and returns an exit code. Invalid configs throw ConfigError with the
/// offending field name first.
int cmd_train(const Json& cfg);
int cmd_caption(const Json& cfg);
int cmd_evaluate(const Json& cfg);
int cmd_diagnose(const Json& cfg);
/// Prints retrieved entities and the top class probabilities for one input as JSON.
int cmd_retrieve(const Json& cfg, std::ostream& out);

/// JSON-lines `{"id": ..., "embedding": [...]}`; embeddings are L2-normalised on load.
std::vector<std::pair<std::string, Embedding>> load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::vector<std::pair<std::string, Embedding>>& rows,
                     const std::filesystem::path& path);

std::vector<Json> read_json_lines(const std::filesystem::path& path);
Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed JSON with a trailing newline, written via a temporary file.
void write_json_file(const Json& value, const std::filesystem::path& path);

}  // namespace entcap
