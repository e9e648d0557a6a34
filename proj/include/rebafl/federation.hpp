#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rebafl/data.hpp"
#include "rebafl/metrics.hpp"
#include "rebafl/model.hpp"
#include "rebafl/prototypes.hpp"

namespace rebafl {

// Client availability. Independent: each client transmits with probability
// p per round. Periodic: the active set is redrawn only on rounds that are
// multiples of `period` and held constant in between.
struct DropoutModel {
    enum class Kind { Independent, Periodic };
    Kind kind = Kind::Independent;
    double p = 1.0;
    std::size_t period = 1;
    std::vector<double> per_client_p;  // optional cluster-wise override

    double prob_for(std::size_t client) const {
        return per_client_p.empty() ? p : per_client_p[client];
    }
    void validate(std::size_t clients) const;
};

enum class Strategy { FedAvg, FedProx, BsmFedAvg, ReBaFL };
Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);

struct StrategyConfig {
    Strategy name = Strategy::FedAvg;
    double epsilon = 0.01;   // prior smoothing (ReBaFL)
    double mu = 0.1;         // augmentation weight (ReBaFL)
    double mu_prox = 0.0;    // proximal coefficient (FedProx)
    double lr = 0.01;
    std::size_t local_epochs = 5;
    std::size_t batch_size = 50;
    double weight_decay = 5e-4;
    double lambda = 1.0;     // feature-transfer scaling
    bool classifier_bias = false;
    std::vector<double> epsilon_per_client;  // optional per-client override

    double epsilon_for(std::size_t client) const {
        return epsilon_per_client.empty() ? epsilon : epsilon_per_client[client];
    }
    void validate() const;
};

struct ServerState {
    ModelParams model;
    PrototypeSet prototypes;
    int round = 0;
};

struct ClientUpdate {
    int client_id = 0;
    ModelParams delta;  // w_i - w_global after local training
    PrototypeSet prototypes;
    std::int64_t n = 0;
    double final_loss = 0.0;
};

// Ids of the clients that successfully transmit in the given round, in
// ascending order. Draws are per (seed, round, client) so they are stable
// under concurrency; an empty set is a legal outcome.
std::vector<int> sample_active_set(const DropoutModel& dropout, int round, std::size_t clients,
                                   std::uint64_t run_seed);

// E epochs of mini-batch SGD from the broadcast model under the selected
// strategy; fresh local prototypes before (for augmentation) and after
// training (for upload) when running ReBaFL.
ClientUpdate local_train(const Dataset& ds, const ClientShard& shard,
                         const ModelParams& global_model, const PrototypeSet& global_protos,
                         const StrategyConfig& strat, std::uint64_t run_seed, int round,
                         bool quantize_f32 = false);

// w_new = w + sum_i (n_i / sum n) * delta_i, summed in ascending client id
// order for bit-level reproducibility.
ModelParams aggregate_models(const ServerState& server, const std::vector<ClientUpdate>& updates);

ModelParams fedprox_penalty_grad(const ModelParams& w, const ModelParams& w_global,
                                 double mu_prox);

struct FederationConfig {
    const Dataset* train = nullptr;
    const Dataset* test = nullptr;
    std::vector<ClientShard> shards;
    StrategyConfig strategy;
    DropoutModel dropout;
    ModelParams initial_model;
    PrototypeSet initial_prototypes;
    int rounds = 0;
    int start_round = 0;  // resume support
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::size_t eval_batch = 512;
    bool quantize_f32 = false;
    // Called after each completed round with the new global model.
    std::function<void(int, const ModelParams&, const PrototypeSet&)> round_hook;
};

struct FederationResult {
    std::vector<RoundRecord> history;
    ServerState final_state;
};

// The synchronous round loop: sample the active set, train actives on
// disjoint model copies, aggregate models and prototypes (stale classes
// carry forward), evaluate on the balanced test set, record. An empty
// active set skips the round with state unchanged.
FederationResult run_federation(const FederationConfig& config);

}  // namespace rebafl
