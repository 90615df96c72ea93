#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dptq/dataset.hpp"
#include "dptq/networks.hpp"
#include "dptq/training.hpp"

namespace dptq {

// One config file drives the whole pipeline. A single top-level seed feeds
// every stage (stages split it into sub-streams by tag); the network's input
// and output dims always come from the dataset section so they cannot drift
// apart. Unknown keys are rejected rather than ignored.

struct AnalysisConfig {
    int histogram_max_examples = 0;  // 0 means the full split
    std::vector<double> perturb_degrees = {0.0, 0.25, 0.5, 1.0, 2.0};
    int eval_batch_size = 256;
};

struct RunConfig {
    std::uint64_t seed = 1;
    DatasetConfig dataset;
    NetSpec network;
    TeacherConfig teacher;
    KDConfig kd;
    PairTrainConfig pair;
    AnalysisConfig analysis;
};

RunConfig default_config();

// Parse JSON text over the defaults. Unknown key, wrong type, or a budget
// outside the feasible range raise the matching error.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

// Canonical effective-config JSON (sorted keys, stable float formatting);
// parse_config(dump_config(c)) reproduces c.
std::string dump_config(const RunConfig& cfg);

// FNV-1a over the canonical dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

// Propagate a --seed override into every stage config.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

// Range checks that must fail before any stage starts.
void validate_config(const RunConfig& cfg);

}  // namespace dptq
