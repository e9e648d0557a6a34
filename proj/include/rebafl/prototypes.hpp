#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "rebafl/data.hpp"
#include "rebafl/losses.hpp"
#include "rebafl/matrix.hpp"
#include "rebafl/model.hpp"

namespace rebafl {

// Class-wise feature centroids. Classes absent from the map are unknown,
// never zero vectors. `round` on an entry is the round the centroid was
// last freshly computed at, so carried-forward (stale) entries are visible.
struct PrototypeEntry {
    std::vector<double> centroid;
    std::int64_t count = 0;
    int round = -1;
};

struct PrototypeSet {
    std::map<int, PrototypeEntry> entries;
    int round = -1;

    bool empty() const { return entries.empty(); }
    std::size_t dim() const { return entries.empty() ? 0 : entries.begin()->second.centroid.size(); }
    std::vector<int> class_ids() const;
};

// Mean embedding of each locally present class under the given extractor;
// one no-gradient pass over the shard.
PrototypeSet extract_local_prototypes(const ModelParams& params, const Dataset& ds,
                                      const ClientShard& shard, int round);

// Local entries win for the client's own classes; everything else keeps the
// global value. Classes in neither stay absent.
PrototypeSet merge_prototypes(const PrototypeSet& global, const PrototypeSet& local);

// Count-weighted mean per class over the clients that hold it; counts sum.
PrototypeSet aggregate_prototypes(const std::vector<PrototypeSet>& locals);

// h_tilde = dst_center + lambda * (h - src_center).
std::vector<double> feature_transfer(std::span<const double> h, std::span<const double> src_center,
                                     std::span<const double> dst_center, double lambda);

// Embeddings transferred onto other classes, with the prior recomputed over
// the assigned target labels. Empty (signaled, not fatal) when fewer than
// two prototype classes exist.
struct AugmentedBatch {
    Matrix features;
    std::vector<int> labels;
    LabelPrior prior;

    bool empty() const { return features.rows == 0; }
};

// Targets walk the prototype-set classes in ascending order, starting at
// `cycle_offset` (mod class count) and skipping each element's own label.
// The caller advances the offset by one per optimization step.
AugmentedBatch cyclic_augment_batch(const Matrix& h, const std::vector<int>& labels,
                                    const PrototypeSet& protos, double lambda,
                                    std::size_t cycle_offset, double epsilon,
                                    std::size_t num_classes);

}  // namespace rebafl
