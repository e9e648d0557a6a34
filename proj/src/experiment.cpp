#include "rebafl/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <future>
#include <thread>

#include "rebafl/errors.hpp"
#include "rebafl/serialize.hpp"

namespace rebafl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json manifest_json(const Dataset& ds, const std::vector<ClientShard>& shards) {
    json j = json::object();
    for (const ClientShard& s : shards)
        j[std::to_string(s.client_id)] = json{{"classes", s.label_set}, {"count", s.size()}};
    (void)ds;
    return j;
}

json history_json(const std::vector<RoundRecord>& history) {
    json arr = json::array();
    char checksum[32];
    for (const RoundRecord& r : history) {
        std::snprintf(checksum, sizeof(checksum), "%016llx",
                      static_cast<unsigned long long>(r.model_checksum));
        arr.push_back(json{{"round", r.round},
                           {"active", r.active},
                           {"accuracy", r.accuracy},
                           {"diversity", r.diversity},
                           {"skipped", r.skipped},
                           {"wall_time_s", r.wall_time_s},
                           {"model_checksum", checksum}});
    }
    return arr;
}

std::size_t resolve_threads(std::size_t configured) {
    if (configured > 0) return configured;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

void apply_sweep_param(ExperimentConfig& cfg, const std::string& param, double value) {
    if (param == "p") {
        cfg.dropout.p = value;
    } else if (param == "E") {
        cfg.strategy.local_epochs = static_cast<std::size_t>(value);
    } else if (param == "epsilon") {
        cfg.strategy.epsilon = value;
    } else if (param == "mu") {
        cfg.strategy.mu = value;
    } else if (param == "s") {
        cfg.dropout.kind = "periodic";
        cfg.dropout.period = static_cast<std::size_t>(value);
    } else if (param == "m") {
        cfg.partition.clients = static_cast<std::size_t>(value);
    } else {
        throw ConfigError("sweep: unknown parameter '" + param + "' (p|E|epsilon|mu|s|m)");
    }
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& resume_from,
                                bool quiet) {
    validate_config(cfg);
    ExperimentInputs in = build_inputs(cfg);

    FederationConfig fed;
    fed.train = &in.train;
    fed.test = &in.test;
    fed.shards = in.shards;
    fed.strategy = cfg.strategy;
    fed.dropout = in.dropout;
    fed.rounds = cfg.rounds;
    fed.seed = cfg.seed;
    fed.threads = resolve_threads(cfg.threads);
    fed.eval_batch = cfg.eval_batch;
    fed.quantize_f32 = cfg.precision == "float32";
    fed.initial_model = std::move(in.model);

    if (!resume_from.empty()) {
        Checkpoint ckpt = checkpoint_from_json(json::parse(read_text_file(resume_from)));
        if (ckpt.seed != cfg.seed)
            throw ConfigError("resume: checkpoint was produced with seed " +
                              std::to_string(ckpt.seed) + ", config has " +
                              std::to_string(cfg.seed));
        fed.start_round = ckpt.round;
        fed.initial_model = std::move(ckpt.model);
        fed.initial_prototypes = std::move(ckpt.prototypes);
        if (fed.start_round > fed.rounds)
            throw ConfigError("resume: checkpoint round exceeds configured rounds");
    }
    if (fed.quantize_f32) quantize_params_f32(fed.initial_model);

    ExperimentResult result;
    result.out_dir = cfg.out;
    fs::create_directories(cfg.out);
    write_text_file((fs::path(cfg.out) / "manifest.json").string(),
                    manifest_json(in.train, fed.shards).dump(2) + "\n");
    write_text_file((fs::path(cfg.out) / "config.json").string(),
                    config_to_json(cfg).dump(2) + "\n");

    result.fed = run_federation(fed);

    write_text_file((fs::path(cfg.out) / "round_log.csv").string(),
                    round_csv(result.fed.history));
    write_text_file((fs::path(cfg.out) / "history.json").string(),
                    history_json(result.fed.history).dump(2) + "\n");
    write_text_file((fs::path(cfg.out) / "accuracy.tsv").string(),
                    accuracy_tsv(result.fed.history));
    if (cfg.write_checkpoint) {
        Checkpoint ckpt;
        ckpt.round = result.fed.final_state.round;
        ckpt.seed = cfg.seed;
        ckpt.model = result.fed.final_state.model;
        ckpt.prototypes = result.fed.final_state.prototypes;
        write_text_file((fs::path(cfg.out) / "checkpoint.json").string(),
                        checkpoint_to_json(ckpt).dump() + "\n");
    }

    if (!result.fed.history.empty()) {
        const std::size_t window =
            std::min<std::size_t>(50, result.fed.history.size());
        result.window = stability_stats(result.fed.history, window);
        if (!quiet) {
            std::printf("final accuracy: %.4f\n", result.fed.history.back().accuracy);
            std::printf("trailing %zu-round window: mean %.4f, std %.4f\n", window,
                        result.window.mean, result.window.stddev);
        }
    } else if (!quiet) {
        std::printf("no rounds executed\n");
    }
    return result;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::string& param,
                                const std::vector<double>& values, bool parallel, bool quiet) {
    if (values.empty()) throw ConfigError("sweep: no values given");
    {
        ExperimentConfig probe = cfg;  // reject unknown parameter up front
        apply_sweep_param(probe, param, values[0]);
    }

    std::vector<SweepRow> rows(values.size());
    auto run_one = [&](std::size_t k) {
        ExperimentConfig sub = cfg;
        apply_sweep_param(sub, param, values[k]);
        sub.seed = cfg.seed + k;
        sub.out = (fs::path(cfg.out) / (param + "_" + format_value(values[k]))).string();
        ExperimentResult res = run_experiment(sub, "", true);
        SweepRow row;
        row.param = param;
        row.value = values[k];
        row.seed = sub.seed;
        row.final_accuracy =
            res.fed.history.empty() ? 0.0 : res.fed.history.back().accuracy;
        row.window = res.window;
        row.out_dir = res.out_dir;
        rows[k] = row;
    };

    if (parallel && values.size() > 1) {
        std::vector<std::future<void>> futures;
        for (std::size_t k = 0; k < values.size(); ++k)
            futures.push_back(std::async(std::launch::async, run_one, k));
        for (auto& f : futures) f.get();
    } else {
        for (std::size_t k = 0; k < values.size(); ++k) run_one(k);
    }

    std::string csv = "param,value,seed,final_accuracy,window_mean,window_std\n";
    char buf[160];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.10g,%llu,%.10g,%.10g,%.10g\n", r.param.c_str(),
                      r.value, static_cast<unsigned long long>(r.seed), r.final_accuracy,
                      r.window.mean, r.window.stddev);
        csv += buf;
    }
    fs::create_directories(cfg.out);
    write_text_file((fs::path(cfg.out) / "sweep_summary.csv").string(), csv);
    if (!quiet) std::printf("%s", csv.c_str());
    return rows;
}

}  // namespace rebafl
