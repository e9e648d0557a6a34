#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rebafl/data.hpp"
#include "rebafl/federation.hpp"

namespace rebafl {

struct DatasetConfig {
    std::string kind = "synthetic";  // synthetic | idx | cifar10
    // synthetic
    std::size_t classes = 10;
    std::size_t dim = 32;
    std::size_t per_class = 5000;
    std::size_t test_per_class = 300;
    double separation = 3.0;
    std::uint64_t seed = 7;
    // idx (paths may be relative to $REBAFL_DATA_DIR)
    std::string train_images, train_labels, test_images, test_labels;
    // cifar10
    std::vector<std::string> train_paths, test_paths;
};

struct PartitionConfig {
    std::string mode = "pathological";  // pathological | clustered
    std::size_t clients = 20;
    std::size_t classes_per_client = 2;
    std::size_t samples_per_client = 1000;
    std::vector<ClusterSpec> clusters;
    std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct DropoutConfig {
    std::string kind = "independent";  // independent | periodic
    double p = 1.0;
    std::size_t period = 1;
};

// Everything one experiment needs; serializes to/from a single JSON
// document with strict key checking.
struct ExperimentConfig {
    DatasetConfig dataset;
    std::string model = "mlp";
    std::size_t mlp_hidden = 128;
    PartitionConfig partition;
    DropoutConfig dropout;
    StrategyConfig strategy;
    int rounds = 200;
    std::uint64_t seed = 1;
    std::string out = "runs/out";
    std::string precision = "float64";  // float64 | float32
    std::size_t threads = 0;            // 0 = hardware concurrency
    std::size_t eval_batch = 512;
    bool write_checkpoint = true;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);
void validate_config(const ExperimentConfig& cfg);

// Built artifacts shared by run/sweep.
struct ExperimentInputs {
    Dataset train;
    Dataset test;
    std::vector<ClientShard> shards;
    DropoutModel dropout;
    ModelParams model;
};

ExperimentInputs build_inputs(const ExperimentConfig& cfg);

}  // namespace rebafl
