#include "rebafl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <random>
#include <thread>

#include "rebafl/errors.hpp"
#include "rebafl/losses.hpp"
#include "rebafl/rng.hpp"

namespace rebafl {

void DropoutModel::validate(std::size_t clients) const {
    if (p < 0.0 || p > 1.0)
        throw ConfigError("dropout: p " + std::to_string(p) + " outside [0, 1]");
    if (period < 1) throw ConfigError("dropout: period must be >= 1");
    if (!per_client_p.empty()) {
        if (per_client_p.size() != clients)
            throw ConfigError("dropout: per-client p list does not match client count");
        for (double v : per_client_p)
            if (v < 0.0 || v > 1.0) throw ConfigError("dropout: per-client p outside [0, 1]");
    }
}

void StrategyConfig::validate() const {
    if (epsilon < 0.0 || epsilon > 1.0) throw ConfigError("strategy: epsilon outside [0, 1]");
    if (mu < 0.0) throw ConfigError("strategy: mu must be nonnegative");
    if (mu_prox < 0.0) throw ConfigError("strategy: mu_prox must be nonnegative");
    if (lr < 0.0) throw ConfigError("strategy: lr must be nonnegative");
    if (local_epochs < 1) throw ConfigError("strategy: local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("strategy: batch_size must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("strategy: weight_decay must be nonnegative");
    for (double e : epsilon_per_client)
        if (e < 0.0 || e > 1.0) throw ConfigError("strategy: per-client epsilon outside [0, 1]");
}

Strategy parse_strategy(const std::string& name) {
    if (name == "fedavg") return Strategy::FedAvg;
    if (name == "fedprox") return Strategy::FedProx;
    if (name == "bsm_fedavg") return Strategy::BsmFedAvg;
    if (name == "rebafl") return Strategy::ReBaFL;
    throw ConfigError("unknown strategy: " + name);
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::FedAvg: return "fedavg";
        case Strategy::FedProx: return "fedprox";
        case Strategy::BsmFedAvg: return "bsm_fedavg";
        case Strategy::ReBaFL: return "rebafl";
    }
    return "fedavg";
}

std::vector<int> sample_active_set(const DropoutModel& dropout, int round, std::size_t clients,
                                   std::uint64_t run_seed) {
    if (clients == 0) throw ConfigError("sample_active_set: zero clients");
    // Periodic behavior draws at the window start round and holds.
    std::uint64_t draw_round = static_cast<std::uint64_t>(round);
    if (dropout.kind == DropoutModel::Kind::Periodic)
        draw_round -= draw_round % dropout.period;
    std::vector<int> active;
    for (std::size_t i = 0; i < clients; ++i) {
        auto eng = rng::engine(run_seed, rng::Stream::Dropout, draw_round, i);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (u(eng) < dropout.prob_for(i)) active.push_back(static_cast<int>(i));
    }
    return active;
}

ModelParams fedprox_penalty_grad(const ModelParams& w, const ModelParams& w_global,
                                 double mu_prox) {
    ModelParams g = w;
    axpy_params(g, -1.0, w_global);  // w - w_global
    for (auto s : param_spans(g))
        for (double& v : s) v *= mu_prox;
    return g;
}

ClientUpdate local_train(const Dataset& ds, const ClientShard& shard,
                         const ModelParams& global_model, const PrototypeSet& global_protos,
                         const StrategyConfig& strat, std::uint64_t run_seed, int round,
                         bool quantize_f32) {
    if (shard.indices.empty())
        throw DataError("local_train: empty shard for client " + std::to_string(shard.client_id));

    const auto counts = shard_label_counts(ds, shard);
    const double eps = strat.name == Strategy::BsmFedAvg
                           ? 0.0
                           : strat.epsilon_for(static_cast<std::size_t>(shard.client_id));
    LabelPrior prior;
    if (strat.name == Strategy::BsmFedAvg || strat.name == Strategy::ReBaFL)
        prior = smoothed_prior(counts, eps);

    ModelParams w = global_model;  // Eq-style local init: w_i <- w
    PrototypeSet merged;
    if (strat.name == Strategy::ReBaFL)
        merged = merge_prototypes(global_protos,
                                  extract_local_prototypes(global_model, ds, shard, round));

    auto eng = rng::engine(run_seed, rng::Stream::ClientTrain, static_cast<std::uint64_t>(round),
                           static_cast<std::uint64_t>(shard.client_id));
    std::vector<std::size_t> order = shard.indices;
    std::size_t step = 0;
    double last_loss = 0.0;

    for (std::size_t epoch = 0; epoch < strat.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), eng);
        for (std::size_t start = 0; start < order.size(); start += strat.batch_size) {
            const std::size_t len = std::min(strat.batch_size, order.size() - start);
            std::span<const std::size_t> batch(order.data() + start, len);
            Matrix x = ds.gather(batch);
            std::vector<int> y = ds.gather_labels(batch);

            auto [h, cache] = forward_features(w, x);
            Matrix z = forward_logits(w, h);

            LossResult loss;
            switch (strat.name) {
                case Strategy::FedAvg:
                case Strategy::FedProx:
                    loss = vanilla_ce(z, y);
                    break;
                case Strategy::BsmFedAvg:
                case Strategy::ReBaFL:
                    loss = rbsm_loss(z, y, prior);
                    break;
            }
            ModelParams grads = backward(w, cache, loss.dl_dz);
            double loss_value = loss.value;

            if (strat.name == Strategy::ReBaFL && strat.mu > 0.0) {
                AugmentedBatch aug = cyclic_augment_batch(h, y, merged, strat.lambda, step, eps,
                                                          ds.num_classes);
                if (!aug.empty()) {
                    // Augmented-term gradients flow to the classifier only;
                    // the transferred features are treated as constants.
                    Matrix z_aug = forward_logits(w, aug.features);
                    LossResult aug_loss = rbsm_loss(z_aug, aug.labels, aug.prior);
                    Matrix dphi = matmul_at_b(aug.features, aug_loss.dl_dz);
                    for (std::size_t k = 0; k < dphi.data.size(); ++k)
                        grads.classifier.w.data[k] += strat.mu * dphi.data[k];
                    if (w.classifier.use_bias) {
                        const std::vector<double> db = colsum(aug_loss.dl_dz);
                        for (std::size_t k = 0; k < db.size(); ++k)
                            grads.classifier.b[k] += strat.mu * db[k];
                    }
                    loss_value += strat.mu * aug_loss.value;
                }
            }
            if (strat.name == Strategy::FedProx && strat.mu_prox > 0.0) {
                axpy_params(grads, strat.mu_prox, w);
                axpy_params(grads, -strat.mu_prox, global_model);
                loss_value += 0.5 * strat.mu_prox * param_sqdist(w, global_model);
            }
            if (!std::isfinite(loss_value))
                throw NumericError("local_train: non-finite loss at round " +
                                   std::to_string(round) + ", client " +
                                   std::to_string(shard.client_id) + ", step " +
                                   std::to_string(step));
            sgd_step(w, grads, strat.lr, strat.weight_decay);
            if (quantize_f32) quantize_params_f32(w);
            last_loss = loss_value;
            ++step;
        }
    }

    ClientUpdate update;
    update.client_id = shard.client_id;
    update.n = static_cast<std::int64_t>(shard.size());
    update.final_loss = last_loss;
    if (strat.name == Strategy::ReBaFL)
        update.prototypes = extract_local_prototypes(w, ds, shard, round + 1);
    update.delta = std::move(w);
    axpy_params(update.delta, -1.0, global_model);
    return update;
}

ModelParams aggregate_models(const ServerState& server, const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw ConfigError("aggregate_models: no updates");
    std::vector<const ClientUpdate*> ordered;
    ordered.reserve(updates.size());
    for (const ClientUpdate& u : updates) ordered.push_back(&u);
    std::sort(ordered.begin(), ordered.end(),
              [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
    double total = 0.0;
    for (const ClientUpdate* u : ordered) total += static_cast<double>(u->n);
    if (total <= 0.0) throw DataError("aggregate_models: zero total sample size");
    ModelParams next = server.model;
    for (const ClientUpdate* u : ordered)
        axpy_params(next, static_cast<double>(u->n) / total, u->delta);
    return next;
}

FederationResult run_federation(const FederationConfig& config) {
    if (!config.train || !config.test) throw ConfigError("run_federation: datasets not set");
    if (config.shards.empty()) throw ConfigError("run_federation: no client shards");
    config.strategy.validate();
    config.dropout.validate(config.shards.size());
    if (!config.strategy.epsilon_per_client.empty() &&
        config.strategy.epsilon_per_client.size() != config.shards.size())
        throw ConfigError("strategy: per-client epsilon list does not match client count");

    FederationResult result;
    ServerState& state = result.final_state;
    state.model = config.initial_model;
    state.prototypes = config.initial_prototypes;
    state.round = config.start_round;

    const std::size_t m = config.shards.size();
    const std::size_t threads = std::max<std::size_t>(1, config.threads);

    for (int t = config.start_round; t < config.rounds; ++t) {
        const auto tic = std::chrono::steady_clock::now();
        RoundRecord rec;
        rec.round = t;
        rec.active = sample_active_set(config.dropout, t, m, config.seed);

        if (rec.active.empty()) {
            rec.skipped = true;  // state carries forward untouched
        } else {
            std::vector<ClientUpdate> updates(rec.active.size());
            auto train_one = [&](std::size_t slot) {
                const ClientShard& shard = config.shards[static_cast<std::size_t>(rec.active[slot])];
                updates[slot] = local_train(*config.train, shard, state.model, state.prototypes,
                                            config.strategy, config.seed, t, config.quantize_f32);
            };
            if (threads <= 1 || updates.size() <= 1) {
                for (std::size_t s = 0; s < updates.size(); ++s) train_one(s);
            } else {
                std::atomic<std::size_t> cursor{0};
                std::vector<std::thread> pool;
                std::exception_ptr first_error;
                std::mutex err_mutex;
                const std::size_t n_workers = std::min(threads, updates.size());
                for (std::size_t i = 0; i < n_workers; ++i) {
                    pool.emplace_back([&] {
                        for (;;) {
                            const std::size_t s = cursor.fetch_add(1);
                            if (s >= updates.size()) return;
                            try {
                                train_one(s);
                            } catch (...) {
                                std::lock_guard<std::mutex> lock(err_mutex);
                                if (!first_error) first_error = std::current_exception();
                                return;
                            }
                        }
                    });
                }
                for (auto& th : pool) th.join();
                if (first_error) std::rethrow_exception(first_error);
            }

            std::vector<ModelParams> locals;
            locals.reserve(updates.size());
            for (const ClientUpdate& u : updates) {
                ModelParams local = state.model;
                axpy_params(local, 1.0, u.delta);
                locals.push_back(std::move(local));
            }
            rec.diversity = weight_diversity(locals);

            state.model = aggregate_models(state, updates);

            std::vector<PrototypeSet> proto_sets;
            for (const ClientUpdate& u : updates)
                if (!u.prototypes.empty()) proto_sets.push_back(u.prototypes);
            if (!proto_sets.empty()) {
                // Classes reported by no active client keep their previous
                // global centroid (stale carry-forward).
                PrototypeSet fresh = aggregate_prototypes(proto_sets);
                state.prototypes = merge_prototypes(state.prototypes, fresh);
            }
            state.prototypes.round = t + 1;
        }

        rec.accuracy = test_accuracy(state.model, *config.test, config.eval_batch, threads);
        rec.model_checksum = params_checksum(state.model);
        rec.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
        result.history.push_back(rec);
        state.round = t + 1;
        if (config.round_hook) config.round_hook(t, state.model, state.prototypes);
    }
    return result;
}

}  // namespace rebafl
