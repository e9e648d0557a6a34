#include "rebafl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "rebafl/errors.hpp"

namespace rebafl {

namespace {

std::size_t correct_in_range(const ModelParams& params, const Dataset& test, std::size_t begin,
                             std::size_t end, std::size_t eval_batch) {
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = begin; start < end; start += eval_batch) {
        const std::size_t len = std::min(eval_batch, end - start);
        idx.resize(len);
        std::iota(idx.begin(), idx.end(), start);
        Matrix x = test.gather(idx);
        auto [h, cache] = forward_features(params, x);
        Matrix z = forward_logits(params, h);
        for (std::size_t r = 0; r < len; ++r) {
            const double* zr = z.data.data() + r * z.cols;
            std::size_t best = 0;
            for (std::size_t c = 1; c < z.cols; ++c)
                if (zr[c] > zr[best]) best = c;  // ties keep the lowest id
            if (static_cast<int>(best) == test.labels[idx[r]]) ++correct;
        }
    }
    return correct;
}

}  // namespace

double test_accuracy(const ModelParams& params, const Dataset& test, std::size_t eval_batch,
                     std::size_t threads) {
    if (test.num == 0) throw DataError("test_accuracy: empty test set");
    if (eval_batch == 0) eval_batch = 512;
    std::size_t correct = 0;
    if (threads <= 1 || test.num < 2 * eval_batch) {
        correct = correct_in_range(params, test, 0, test.num, eval_batch);
    } else {
        const std::size_t n_threads = std::min<std::size_t>(threads, 16);
        // chunk boundaries aligned to eval_batch; integer counts make the
        // result independent of the split
        std::vector<std::size_t> partial(n_threads, 0);
        std::vector<std::thread> pool;
        const std::size_t chunk =
            (test.num / n_threads + eval_batch - 1) / eval_batch * eval_batch;
        for (std::size_t t = 0; t < n_threads; ++t) {
            const std::size_t begin = std::min(test.num, t * chunk);
            const std::size_t end = std::min(test.num, (t + 1) * chunk);
            pool.emplace_back([&, t, begin, end] {
                partial[t] = correct_in_range(params, test, begin, end, eval_batch);
            });
        }
        for (auto& th : pool) th.join();
        for (std::size_t c : partial) correct += c;
    }
    return static_cast<double>(correct) / static_cast<double>(test.num);
}

double weight_diversity(const std::vector<const ModelParams*>& models) {
    if (models.empty()) throw ConfigError("weight_diversity: no models");
    std::vector<double> mean = flatten_params(*models[0]);
    const std::size_t dim = mean.size();
    for (std::size_t i = 1; i < models.size(); ++i) {
        const std::vector<double> flat = flatten_params(*models[i]);
        if (flat.size() != dim) throw ConfigError("weight_diversity: model shape mismatch");
        for (std::size_t k = 0; k < dim; ++k) mean[k] += flat[k];
    }
    const double inv_n = 1.0 / static_cast<double>(models.size());
    for (double& v : mean) v *= inv_n;
    double acc = 0.0;
    for (const ModelParams* m : models) {
        const std::vector<double> flat = flatten_params(*m);
        for (std::size_t k = 0; k < dim; ++k) {
            const double d = flat[k] - mean[k];
            acc += d * d;
        }
    }
    return acc * inv_n;
}

double weight_diversity(const std::vector<ModelParams>& models) {
    std::vector<const ModelParams*> ptrs;
    ptrs.reserve(models.size());
    for (const ModelParams& m : models) ptrs.push_back(&m);
    return weight_diversity(ptrs);
}

StabilityStats stability_stats(const std::vector<RoundRecord>& history, std::size_t window) {
    if (window == 0) throw ConfigError("stability_stats: zero window");
    if (window > history.size())
        throw ConfigError("stability_stats: window " + std::to_string(window) +
                          " exceeds history length " + std::to_string(history.size()));
    double mean = 0.0;
    for (std::size_t i = history.size() - window; i < history.size(); ++i)
        mean += history[i].accuracy;
    mean /= static_cast<double>(window);
    double var = 0.0;
    for (std::size_t i = history.size() - window; i < history.size(); ++i) {
        const double d = history[i].accuracy - mean;
        var += d * d;
    }
    var /= static_cast<double>(window);
    return {mean, std::sqrt(var)};
}

std::string round_csv(const std::vector<RoundRecord>& history) {
    std::string out = "round,active_count,accuracy,diversity,skipped\n";
    char buf[128];
    for (const RoundRecord& r : history) {
        std::snprintf(buf, sizeof(buf), "%d,%zu,%.10g,%.10g,%d\n", r.round, r.active.size(),
                      r.accuracy, r.diversity, r.skipped ? 1 : 0);
        out += buf;
    }
    return out;
}

std::string accuracy_tsv(const std::vector<RoundRecord>& history) {
    std::string out = "round\taccuracy\n";
    char buf[64];
    for (const RoundRecord& r : history) {
        std::snprintf(buf, sizeof(buf), "%d\t%.10g\n", r.round, r.accuracy);
        out += buf;
    }
    return out;
}

}  // namespace rebafl
