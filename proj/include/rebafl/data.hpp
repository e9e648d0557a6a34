#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rebafl/matrix.hpp"

namespace rebafl {

// An immutable labeled dataset. Pixels/features are stored as float32 to
// keep large image sets compact; batches are materialized as 64-bit
// matrices on demand. Labels are 0-based class ids.
struct Dataset {
    std::string name;
    std::size_t num = 0;
    std::size_t dim = 0;
    std::size_t channels = 1, height = 1, width = 1;
    std::size_t num_classes = 0;
    std::vector<float> values;  // num x dim, row-major
    std::vector<int> labels;

    Matrix gather(std::span<const std::size_t> indices) const;
    std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
};

// One client's slice of a dataset: indices into the parent set, the label
// subset it covers, and nothing else.
struct ClientShard {
    int client_id = 0;
    std::vector<std::size_t> indices;
    std::vector<int> label_set;  // sorted, 0-based

    std::size_t size() const { return indices.size(); }
};

struct ClusterSpec {
    std::size_t size = 0;
    std::size_t classes_per_client = 0;
    double p = 1.0;  // per-cluster transmission probability
};

struct PartitionSpec {
    enum class Mode { Pathological, Clustered };
    Mode mode = Mode::Pathological;
    std::size_t clients = 0;
    std::size_t classes_per_client = 0;   // N (pathological mode)
    std::size_t samples_per_client = 0;   // n_i
    std::uint64_t seed = 0;
    std::vector<ClusterSpec> clusters;    // clustered mode
};

// IDX image/label pair, big-endian, optionally gzip-compressed. Pixels are
// scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072
// channel-major pixels.
Dataset load_cifar10_binary(const std::vector<std::string>& paths);

// Gaussian blobs: one unit-covariance cluster per class, means at pairwise
// distance `separation`. Requires dim >= classes. Samples are stored
// class-major; partitioners draw per class anyway.
Dataset make_synthetic(std::size_t classes, std::size_t dim, std::size_t per_class,
                       std::uint64_t seed, double separation);

// Each client receives a uniformly drawn subset of N classes and
// samples_per_client/N samples of each, without replacement across clients.
std::vector<ClientShard> pathological_partition(const Dataset& ds, const PartitionSpec& spec);

// Clients are grouped into clusters that share N; label subsets are still
// drawn independently per client.
std::vector<ClientShard> clustered_partition(const Dataset& ds, const PartitionSpec& spec);

// Index of the cluster each client belongs to (clusters listed in order).
std::vector<std::size_t> cluster_of_client(const PartitionSpec& spec);

// Uniform label distribution: every class truncated to the minimum class
// count, original sample order preserved.
Dataset balanced_test_set(const Dataset& ds);

std::vector<std::int64_t> shard_label_counts(const Dataset& ds, const ClientShard& shard);

}  // namespace rebafl
