#pragma once

#include "driftlab/experiments.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace driftlab {

struct LoadedConfig {
    ExperimentConfig config;
    std::string effective_json;  // post-override, with the seed filled in
    bool seed_generated = false;
};

/// Parses a JSON config, applies dotted `key=value` overrides and an optional
/// seed override, and validates the result. Unknown keys are rejected with a
/// ValidationError naming the dotted key.
LoadedConfig load_config(const std::string& json_text, const std::vector<std::string>& overrides = {},
                         std::optional<std::uint64_t> seed = std::nullopt);

/// Entry point of the command-line tool. Returns 0 on success, 1 on a
/// validation error, 2 on a runtime failure; failures print one line of the
/// form `error kind=<kind> key=<key> message="..."` to `err`.
int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace driftlab
