#pragma once

#include <filesystem>
#include <string>

#include "izsd/losses.hpp"
#include "izsd/trainer.hpp"

namespace izsd {

/// Flat key=value run configuration. Every field is optional and defaults to
/// the standard values; unknown keys are rejected. Values survive a
/// serialize/parse round trip losslessly.
struct RunConfig {
    std::string dataset_train;
    std::string dataset_test;
    std::string embeddings;
    std::string split;
    std::string out_dir = ".";

    HyperParams hp;
    TrainConfig train;

    std::string serialize() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace izsd
