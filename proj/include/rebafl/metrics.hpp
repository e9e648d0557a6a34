#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rebafl/data.hpp"
#include "rebafl/model.hpp"

namespace rebafl {

struct RoundRecord {
    int round = 0;
    std::vector<int> active;
    double accuracy = 0.0;
    double diversity = 0.0;  // Lambda over the active set's local models
    bool skipped = false;
    double wall_time_s = 0.0;
    std::uint64_t model_checksum = 0;
};

// Fraction of argmax-correct predictions; ties break toward the lowest
// class id.
double test_accuracy(const ModelParams& params, const Dataset& test,
                     std::size_t eval_batch = 512, std::size_t threads = 1);

// Lambda = (1/n) * sum_i ||w_i - w_bar||^2 with w_bar the unweighted mean
// of the local models, over the full flattened parameter vector.
double weight_diversity(const std::vector<const ModelParams*>& models);
double weight_diversity(const std::vector<ModelParams>& models);

struct StabilityStats {
    double mean = 0.0;
    double stddev = 0.0;  // population std over the window
};

StabilityStats stability_stats(const std::vector<RoundRecord>& history, std::size_t window);

// CSV schema: round,active_count,accuracy,diversity,skipped. Rendering is
// deterministic so reruns with the same seed produce identical bytes.
std::string round_csv(const std::vector<RoundRecord>& history);
std::string accuracy_tsv(const std::vector<RoundRecord>& history);

}  // namespace rebafl
