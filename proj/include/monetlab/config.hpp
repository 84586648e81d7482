#pragma once

#include <optional>
#include <string>

#include "monetlab/diffusion.hpp"
#include "monetlab/evalmod.hpp"
#include "monetlab/synthdata.hpp"

namespace monetlab::config {

struct TimelapseConfig {
    int frames_per_sequence = 0;  // 0: all frames in the manifest
    int steps = 50;
    uint64_t seed = 5;
    bool chain_previous = false;
};

// One JSON document drives every subcommand; unknown keys are rejected and
// each run embeds its resolved config in the outputs.
struct RunConfig {
    synth::DatasetConfig dataset;
    std::optional<synth::DatasetConfig> shifted_dataset;
    diffusion::TrainingConfig train;
    eval::EvalOptions eval;
    eval::AdaptOptions adapt;
    TimelapseConfig timelapse;
    int threads = 0;
    std::string out = "out";

    std::string to_json() const;
};

RunConfig default_config();
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text);

}  // namespace monetlab::config
