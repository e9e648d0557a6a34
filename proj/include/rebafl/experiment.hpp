#pragma once

#include <string>
#include <vector>

#include "rebafl/config.hpp"
#include "rebafl/federation.hpp"

namespace rebafl {

struct ExperimentResult {
    FederationResult fed;
    std::string out_dir;
    StabilityStats window;  // trailing min(50, rounds) accuracy window
};

// Executes one configured run and writes manifest.json, round_log.csv,
// history.json, accuracy.tsv and (optionally) checkpoint.json into the
// output directory. `resume_from` continues a saved checkpoint; per-round
// streams are stateless so the resumed trajectory is bit-identical to an
// uninterrupted run.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& resume_from = "",
                                bool quiet = false);

struct SweepRow {
    std::string param;
    double value = 0.0;
    std::uint64_t seed = 0;
    double final_accuracy = 0.0;
    StabilityStats window;
    std::string out_dir;
};

// One run per value; run k uses seed cfg.seed + k and writes under
// out/<param>_<value>. Parallel execution yields identical outputs to
// sequential (per-run seed and directory isolation).
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& param,
                                const std::vector<double>& values, bool parallel = false,
                                bool quiet = false);

}  // namespace rebafl
