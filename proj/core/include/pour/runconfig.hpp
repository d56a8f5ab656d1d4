#pragma once

#include <filesystem>
#include <string>

#include "pour/cascade.hpp"
#include "pour/phantom.hpp"

namespace pour {

// Flat key=value run configuration covering every tunable in the pipeline.
// Unknown keys are rejected; defaults are printable for diff-able experiment
// records.

struct RunConfig {
    std::uint64_t seed = 0;
    CascadeConfig cascade;
    PhantomSpec phantom;
    DegradeParams degrade;
    int ssim_window = 7;
    bool eval_masked = false;
};

// Parses "key = value" lines ('#' starts a comment). Throws ContractError on
// unknown keys or malformed values, FormatError on unreadable files.
RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config(const std::filesystem::path& path);

// All keys with their defaults and one-line descriptions, parseable by
// parse_run_config_text.
std::string dump_default_config();

}  // namespace pour
