#include "rebafl/prototypes.hpp"

#include <algorithm>
#include <string>

#include "rebafl/errors.hpp"

namespace rebafl {

std::vector<int> PrototypeSet::class_ids() const {
    std::vector<int> ids;
    ids.reserve(entries.size());
    for (const auto& [c, e] : entries) ids.push_back(c);
    return ids;
}

PrototypeSet extract_local_prototypes(const ModelParams& params, const Dataset& ds,
                                      const ClientShard& shard, int round) {
    if (shard.indices.empty())
        throw DataError("extract_local_prototypes: empty shard for client " +
                        std::to_string(shard.client_id));
    const std::size_t d = params.feature_dim;
    std::map<int, PrototypeEntry> acc;

    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < shard.indices.size(); start += kChunk) {
        const std::size_t len = std::min(kChunk, shard.indices.size() - start);
        std::span<const std::size_t> part(shard.indices.data() + start, len);
        Matrix x = ds.gather(part);
        auto [h, cache] = forward_features(params, x);
        for (std::size_t r = 0; r < len; ++r) {
            const int y = ds.labels[part[r]];
            PrototypeEntry& e = acc[y];
            if (e.centroid.empty()) e.centroid.assign(d, 0.0);
            const double* hr = h.data.data() + r * d;
            for (std::size_t k = 0; k < d; ++k) e.centroid[k] += hr[k];
            ++e.count;
        }
    }
    PrototypeSet out;
    out.round = round;
    for (auto& [c, e] : acc) {
        const double inv = 1.0 / static_cast<double>(e.count);
        for (double& v : e.centroid) v *= inv;
        e.round = round;
        out.entries.emplace(c, std::move(e));
    }
    return out;
}

PrototypeSet merge_prototypes(const PrototypeSet& global, const PrototypeSet& local) {
    if (!global.empty() && !local.empty() && global.dim() != local.dim())
        throw ConfigError("merge_prototypes: dimension mismatch (" +
                          std::to_string(global.dim()) + " vs " + std::to_string(local.dim()) +
                          ")");
    PrototypeSet out = global;
    for (const auto& [c, e] : local.entries) out.entries[c] = e;
    out.round = std::max(global.round, local.round);
    return out;
}

PrototypeSet aggregate_prototypes(const std::vector<PrototypeSet>& locals) {
    if (locals.empty()) throw InternalError("aggregate_prototypes: empty client list");
    PrototypeSet out;
    std::map<int, std::int64_t> counts;
    for (const PrototypeSet& set : locals) {
        if (!set.empty() && !out.empty() && set.dim() != out.dim())
            throw ConfigError("aggregate_prototypes: dimension mismatch across clients");
        for (const auto& [c, e] : set.entries) {
            PrototypeEntry& agg = out.entries[c];
            if (agg.centroid.empty()) agg.centroid.assign(e.centroid.size(), 0.0);
            const double w = static_cast<double>(e.count);
            for (std::size_t k = 0; k < e.centroid.size(); ++k)
                agg.centroid[k] += w * e.centroid[k];
            counts[c] += e.count;
            agg.round = std::max(agg.round, e.round);
        }
        out.round = std::max(out.round, set.round);
    }
    for (auto& [c, e] : out.entries) {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (double& v : e.centroid) v *= inv;
        e.count = counts[c];
    }
    return out;
}

std::vector<double> feature_transfer(std::span<const double> h, std::span<const double> src_center,
                                     std::span<const double> dst_center, double lambda) {
    if (h.size() != src_center.size() || h.size() != dst_center.size())
        throw ConfigError("feature_transfer: dimension mismatch");
    std::vector<double> out(h.size());
    for (std::size_t k = 0; k < h.size(); ++k)
        out[k] = dst_center[k] + lambda * (h[k] - src_center[k]);
    return out;
}

AugmentedBatch cyclic_augment_batch(const Matrix& h, const std::vector<int>& labels,
                                    const PrototypeSet& protos, double lambda,
                                    std::size_t cycle_offset, double epsilon,
                                    std::size_t num_classes) {
    if (labels.size() != h.rows)
        throw ConfigError("cyclic_augment_batch: label/feature batch mismatch");
    AugmentedBatch out;
    const std::vector<int> classes = protos.class_ids();
    if (classes.size() < 2) return out;  // nothing to transfer onto
    if (protos.dim() != h.cols)
        throw ConfigError("cyclic_augment_batch: prototype dimension mismatch");

    out.features = Matrix(h.rows, h.cols);
    out.labels.resize(h.rows);
    std::size_t ptr = cycle_offset % classes.size();
    for (std::size_t j = 0; j < h.rows; ++j) {
        const int y = labels[j];
        auto src = protos.entries.find(y);
        if (src == protos.entries.end())
            throw ConfigError("cyclic_augment_batch: no prototype for batch label " +
                              std::to_string(y));
        if (classes[ptr] == y) ptr = (ptr + 1) % classes.size();
        const int target = classes[ptr];
        ptr = (ptr + 1) % classes.size();
        const PrototypeEntry& dst = protos.entries.at(target);
        const double* hr = h.data.data() + j * h.cols;
        double* orow = out.features.data.data() + j * h.cols;
        for (std::size_t k = 0; k < h.cols; ++k)
            orow[k] = dst.centroid[k] + lambda * (hr[k] - src->second.centroid[k]);
        out.labels[j] = target;
    }
    out.prior = prior_from_labels(out.labels, num_classes, epsilon);
    return out;
}

}  // namespace rebafl
