// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/dataworld.hpp"
#include "editflow/trainer.hpp"

#include <map>
#include <string>
#include <vector>

namespace editflow::eval {

struct EvalReport {
    std::map<std::string, double> success_by_type; // rate in [0,1] per edit type
    double overall = 0.0;                          // arithmetic mean over types
    double identity_drift = 0.0;                   // mean oracle drift
    double realism_proxy = 0.0;                    // teacher flow loss on outputs
    int n_samples = 0;
    std::string config_hash;
    uint64_t dataset_seed = 0;
    bool halted = false; // training NaN-halted before its budget

    std::string serialize() const; // line-delimited, fixed field names
    static EvalReport deserialize(const std::string& text);
};

// Runs 4-step inference for the first n dataset records, scores each with the
// oracle, and aggregates. Deterministic given seed.
EvalReport evaluate(const std::string& checkpoint_path, const world::Dataset& dataset, int n,
                    uint64_t seed);

struct AblationResult {
    std::vector<std::pair<std::string, EvalReport>> by_mode;

    std::string serialize() const;
};

struct AblationOptions {
    std::string out_dir;
    int eval_n = 500;
    uint64_t eval_seed = 99;
    // Sequential by default; parallel runs each mode in its own thread.
    bool parallel = false;
    std::vector<std::string> modes{"full", "only_dmd", "only_vlm", "no_identity_q", "standard_ce"};
};

// Trains every mode with identical seeds and budget, evaluates each, writes
// the comparison table, curves, bars and sample grids under out_dir. A mode
// that NaN-halts is recorded as halted and evaluated at its last dump.
AblationResult run_ablation_suite(const train::TrainConfig& base_config,
                                  const world::Dataset& dataset, const AblationOptions& opt);

// Emits the before/after sample grid for a checkpoint.
void write_sample_grid(const std::string& checkpoint_path, const world::Dataset& dataset,
                       int n_samples, uint64_t seed, const std::string& png_path);

} // namespace editflow::eval
