#include "rebafl/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <set>
#include <thread>

#include "rebafl/errors.hpp"
#include "rebafl/rng.hpp"
#include "rebafl/serialize.hpp"

namespace rebafl {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(where + ": unknown field '" + it.key() + "'");
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("field '" + key + "': " + e.what());
    }
}

std::string resolve_data_path(const std::string& path) {
    if (path.empty()) return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    if (const char* root = std::getenv("REBAFL_DATA_DIR"))
        return (std::filesystem::path(root) / p).string();
    return path;
}

}  // namespace

json config_to_json(const ExperimentConfig& cfg) {
    json jd{{"kind", cfg.dataset.kind}};
    if (cfg.dataset.kind == "synthetic") {
        jd["classes"] = cfg.dataset.classes;
        jd["dim"] = cfg.dataset.dim;
        jd["per_class"] = cfg.dataset.per_class;
        jd["test_per_class"] = cfg.dataset.test_per_class;
        jd["separation"] = cfg.dataset.separation;
        jd["seed"] = cfg.dataset.seed;
    } else if (cfg.dataset.kind == "idx") {
        jd["train_images"] = cfg.dataset.train_images;
        jd["train_labels"] = cfg.dataset.train_labels;
        jd["test_images"] = cfg.dataset.test_images;
        jd["test_labels"] = cfg.dataset.test_labels;
    } else if (cfg.dataset.kind == "cifar10") {
        jd["train_paths"] = cfg.dataset.train_paths;
        jd["test_paths"] = cfg.dataset.test_paths;
    }

    json jp{{"mode", cfg.partition.mode},
            {"clients", cfg.partition.clients},
            {"samples_per_client", cfg.partition.samples_per_client}};
    if (cfg.partition.mode == "clustered") {
        json clusters = json::array();
        for (const ClusterSpec& c : cfg.partition.clusters)
            clusters.push_back(json{{"size", c.size},
                                    {"classes_per_client", c.classes_per_client},
                                    {"p", c.p}});
        jp["clusters"] = std::move(clusters);
    } else {
        jp["classes_per_client"] = cfg.partition.classes_per_client;
    }
    if (cfg.partition.seed) jp["seed"] = *cfg.partition.seed;

    json js{{"name", strategy_name(cfg.strategy.name)},
            {"epsilon", cfg.strategy.epsilon},
            {"mu", cfg.strategy.mu},
            {"mu_prox", cfg.strategy.mu_prox},
            {"lr", cfg.strategy.lr},
            {"local_epochs", cfg.strategy.local_epochs},
            {"batch_size", cfg.strategy.batch_size},
            {"weight_decay", cfg.strategy.weight_decay},
            {"lambda", cfg.strategy.lambda},
            {"classifier_bias", cfg.strategy.classifier_bias}};
    if (!cfg.strategy.epsilon_per_client.empty())
        js["epsilon_per_client"] = cfg.strategy.epsilon_per_client;

    return json{{"dataset", std::move(jd)},
                {"model", cfg.model},
                {"mlp_hidden", cfg.mlp_hidden},
                {"partition", std::move(jp)},
                {"dropout", json{{"kind", cfg.dropout.kind},
                                 {"p", cfg.dropout.p},
                                 {"period", cfg.dropout.period}}},
                {"strategy", std::move(js)},
                {"rounds", cfg.rounds},
                {"seed", cfg.seed},
                {"out", cfg.out},
                {"precision", cfg.precision},
                {"threads", cfg.threads},
                {"eval_batch", cfg.eval_batch},
                {"write_checkpoint", cfg.write_checkpoint}};
}

ExperimentConfig config_from_json(const json& j) {
    check_keys(j, {"dataset", "model", "mlp_hidden", "partition", "dropout", "strategy", "rounds",
                   "seed", "out", "precision", "threads", "eval_batch", "write_checkpoint"},
               "config");
    ExperimentConfig cfg;

    if (j.contains("dataset")) {
        const json& jd = j.at("dataset");
        check_keys(jd,
                   {"kind", "classes", "dim", "per_class", "test_per_class", "separation", "seed",
                    "train_images", "train_labels", "test_images", "test_labels", "train_paths",
                    "test_paths"},
                   "dataset");
        cfg.dataset.kind = get_or<std::string>(jd, "kind", "synthetic");
        cfg.dataset.classes = get_or<std::size_t>(jd, "classes", cfg.dataset.classes);
        cfg.dataset.dim = get_or<std::size_t>(jd, "dim", cfg.dataset.dim);
        cfg.dataset.per_class = get_or<std::size_t>(jd, "per_class", cfg.dataset.per_class);
        cfg.dataset.test_per_class =
            get_or<std::size_t>(jd, "test_per_class", cfg.dataset.test_per_class);
        cfg.dataset.separation = get_or<double>(jd, "separation", cfg.dataset.separation);
        cfg.dataset.seed = get_or<std::uint64_t>(jd, "seed", cfg.dataset.seed);
        cfg.dataset.train_images = get_or<std::string>(jd, "train_images", "");
        cfg.dataset.train_labels = get_or<std::string>(jd, "train_labels", "");
        cfg.dataset.test_images = get_or<std::string>(jd, "test_images", "");
        cfg.dataset.test_labels = get_or<std::string>(jd, "test_labels", "");
        cfg.dataset.train_paths = get_or<std::vector<std::string>>(jd, "train_paths", {});
        cfg.dataset.test_paths = get_or<std::vector<std::string>>(jd, "test_paths", {});
    }

    cfg.model = get_or<std::string>(j, "model", cfg.model);
    cfg.mlp_hidden = get_or<std::size_t>(j, "mlp_hidden", cfg.mlp_hidden);

    if (j.contains("partition")) {
        const json& jp = j.at("partition");
        check_keys(jp,
                   {"mode", "clients", "classes_per_client", "samples_per_client", "clusters",
                    "seed"},
                   "partition");
        cfg.partition.mode = get_or<std::string>(jp, "mode", "pathological");
        cfg.partition.clients = get_or<std::size_t>(jp, "clients", cfg.partition.clients);
        cfg.partition.classes_per_client =
            get_or<std::size_t>(jp, "classes_per_client", cfg.partition.classes_per_client);
        cfg.partition.samples_per_client =
            get_or<std::size_t>(jp, "samples_per_client", cfg.partition.samples_per_client);
        if (jp.contains("seed")) cfg.partition.seed = jp.at("seed").get<std::uint64_t>();
        if (jp.contains("clusters")) {
            for (const json& jc : jp.at("clusters")) {
                check_keys(jc, {"size", "classes_per_client", "p"}, "partition.clusters[]");
                ClusterSpec c;
                c.size = jc.at("size").get<std::size_t>();
                c.classes_per_client = jc.at("classes_per_client").get<std::size_t>();
                c.p = get_or<double>(jc, "p", 1.0);
                cfg.partition.clusters.push_back(c);
            }
        }
    }

    if (j.contains("dropout")) {
        const json& jd = j.at("dropout");
        check_keys(jd, {"kind", "p", "period"}, "dropout");
        cfg.dropout.kind = get_or<std::string>(jd, "kind", "independent");
        cfg.dropout.p = get_or<double>(jd, "p", cfg.dropout.p);
        cfg.dropout.period = get_or<std::size_t>(jd, "period", cfg.dropout.period);
    }

    if (j.contains("strategy")) {
        const json& js = j.at("strategy");
        check_keys(js,
                   {"name", "epsilon", "mu", "mu_prox", "lr", "local_epochs", "batch_size",
                    "weight_decay", "lambda", "classifier_bias", "epsilon_per_client"},
                   "strategy");
        cfg.strategy.name = parse_strategy(get_or<std::string>(js, "name", "fedavg"));
        cfg.strategy.epsilon = get_or<double>(js, "epsilon", cfg.strategy.epsilon);
        cfg.strategy.mu = get_or<double>(js, "mu", cfg.strategy.mu);
        cfg.strategy.mu_prox = get_or<double>(js, "mu_prox", cfg.strategy.mu_prox);
        cfg.strategy.lr = get_or<double>(js, "lr", cfg.strategy.lr);
        cfg.strategy.local_epochs = get_or<std::size_t>(js, "local_epochs", cfg.strategy.local_epochs);
        cfg.strategy.batch_size = get_or<std::size_t>(js, "batch_size", cfg.strategy.batch_size);
        cfg.strategy.weight_decay = get_or<double>(js, "weight_decay", cfg.strategy.weight_decay);
        cfg.strategy.lambda = get_or<double>(js, "lambda", cfg.strategy.lambda);
        cfg.strategy.classifier_bias =
            get_or<bool>(js, "classifier_bias", cfg.strategy.classifier_bias);
        cfg.strategy.epsilon_per_client =
            get_or<std::vector<double>>(js, "epsilon_per_client", {});
    }

    cfg.rounds = get_or<int>(j, "rounds", cfg.rounds);
    cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
    cfg.out = get_or<std::string>(j, "out", cfg.out);
    cfg.precision = get_or<std::string>(j, "precision", cfg.precision);
    cfg.threads = get_or<std::size_t>(j, "threads", cfg.threads);
    cfg.eval_batch = get_or<std::size_t>(j, "eval_batch", cfg.eval_batch);
    cfg.write_checkpoint = get_or<bool>(j, "write_checkpoint", cfg.write_checkpoint);

    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j);
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "idx" &&
        cfg.dataset.kind != "cifar10")
        throw ConfigError("dataset.kind must be synthetic, idx or cifar10");
    if (cfg.partition.mode != "pathological" && cfg.partition.mode != "clustered")
        throw ConfigError("partition.mode must be pathological or clustered");
    if (cfg.dropout.kind != "independent" && cfg.dropout.kind != "periodic")
        throw ConfigError("dropout.kind must be independent or periodic");
    if (cfg.precision != "float64" && cfg.precision != "float32")
        throw ConfigError("precision must be float64 or float32");
    if (cfg.rounds < 0) throw ConfigError("rounds must be nonnegative");
    parse_arch(cfg.model);
    cfg.strategy.validate();
    DropoutModel d;
    d.p = cfg.dropout.p;
    d.period = std::max<std::size_t>(1, cfg.dropout.period);
    d.validate(cfg.partition.clients);
    if (cfg.dropout.kind == "periodic" && cfg.dropout.period < 1)
        throw ConfigError("dropout.period must be >= 1");
    if (cfg.partition.mode == "clustered" && cfg.partition.clusters.empty())
        throw ConfigError("partition.clusters required in clustered mode");
    if (cfg.dataset.kind == "idx" &&
        (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty() ||
         cfg.dataset.test_images.empty() || cfg.dataset.test_labels.empty()))
        throw ConfigError("dataset: idx requires train/test image and label paths");
    if (cfg.dataset.kind == "cifar10" &&
        (cfg.dataset.train_paths.empty() || cfg.dataset.test_paths.empty()))
        throw ConfigError("dataset: cifar10 requires train_paths and test_paths");
}

ExperimentInputs build_inputs(const ExperimentConfig& cfg) {
    ExperimentInputs in;
    if (cfg.dataset.kind == "synthetic") {
        in.train = make_synthetic(cfg.dataset.classes, cfg.dataset.dim, cfg.dataset.per_class,
                                  cfg.dataset.seed, cfg.dataset.separation);
        in.test = make_synthetic(cfg.dataset.classes, cfg.dataset.dim, cfg.dataset.test_per_class,
                                 rng::splitmix64(cfg.dataset.seed ^ 0x7e57da7aull),
                                 cfg.dataset.separation);
    } else if (cfg.dataset.kind == "idx") {
        in.train = load_idx(resolve_data_path(cfg.dataset.train_images),
                            resolve_data_path(cfg.dataset.train_labels));
        in.test = load_idx(resolve_data_path(cfg.dataset.test_images),
                           resolve_data_path(cfg.dataset.test_labels));
    } else {
        std::vector<std::string> train_paths, test_paths;
        for (const std::string& p : cfg.dataset.train_paths)
            train_paths.push_back(resolve_data_path(p));
        for (const std::string& p : cfg.dataset.test_paths)
            test_paths.push_back(resolve_data_path(p));
        in.train = load_cifar10_binary(train_paths);
        in.test = load_cifar10_binary(test_paths);
    }
    in.test = balanced_test_set(in.test);

    PartitionSpec spec;
    spec.clients = cfg.partition.clients;
    spec.classes_per_client = cfg.partition.classes_per_client;
    spec.samples_per_client = cfg.partition.samples_per_client;
    spec.seed = cfg.partition.seed.value_or(cfg.seed);
    if (cfg.partition.mode == "clustered") {
        spec.mode = PartitionSpec::Mode::Clustered;
        spec.clusters = cfg.partition.clusters;
        in.shards = clustered_partition(in.train, spec);
    } else {
        spec.mode = PartitionSpec::Mode::Pathological;
        in.shards = pathological_partition(in.train, spec);
    }

    in.dropout.kind = cfg.dropout.kind == "periodic" ? DropoutModel::Kind::Periodic
                                                     : DropoutModel::Kind::Independent;
    in.dropout.p = cfg.dropout.p;
    in.dropout.period = cfg.dropout.period;
    if (cfg.partition.mode == "clustered") {
        const auto owner = cluster_of_client(spec);
        in.dropout.per_client_p.resize(owner.size());
        for (std::size_t i = 0; i < owner.size(); ++i)
            in.dropout.per_client_p[i] = cfg.partition.clusters[owner[i]].p;
    }

    in.model = make_model(parse_arch(cfg.model), in.train.channels, in.train.height,
                          in.train.width, in.train.num_classes, cfg.seed,
                          cfg.strategy.classifier_bias, cfg.mlp_hidden);
    return in;
}

}  // namespace rebafl
