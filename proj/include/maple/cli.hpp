#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "maple/cv.hpp"

namespace maple::cli {

// Exit codes of the `maple` tool.
enum ExitCode : int {
    kOk = 0,
    kInternalError = 1,
    kConfigError = 2,
    kDataError = 3,
    kDivergence = 4,
};

// Validated run configuration. Paths are absolute.
struct RunConfig {
    std::filesystem::path manifest;
    std::optional<std::filesystem::path> folds;
    std::filesystem::path output_dir;
    bool use_context = true;
    bool use_features = false;
    double dropout_rate = 0.5;
    std::optional<std::string> holistic_trait;
    std::size_t jobs = 1;
    TrainConfig train;

    nlohmann::json to_json() const;
};

nlohmann::json default_config();

// Applies `a.b.c=value` to a JSON object; value is parsed as JSON, falling
// back to a plain string.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Merges onto defaults, rejects unknown keys, resolves relative paths against
// `base_dir`, and fills a missing seed from MAPLE_SEED (else 0).
RunConfig resolve_config(const nlohmann::json& user, const std::filesystem::path& base_dir);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace maple::cli
