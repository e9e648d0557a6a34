#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rebafl/errors.hpp"
#include "rebafl/experiment.hpp"
#include "rebafl/gradcheck.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;

int do_run(const std::string& config_path, long long seed, long long rounds,
           const std::string& out, const std::string& resume) {
    rebafl::ExperimentConfig cfg = rebafl::load_config_file(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (rounds >= 0) cfg.rounds = static_cast<int>(rounds);
    if (!out.empty()) cfg.out = out;
    rebafl::run_experiment(cfg, resume);
    return kExitOk;
}

int do_gradcheck(const std::string& model, const std::string& loss, double epsilon, double mu,
                 unsigned long long seed, bool corrupt) {
    rebafl::GradCheckReport report =
        rebafl::gradcheck_loss(model, loss, epsilon, mu, seed, corrupt);
    std::printf("gradcheck %s/%s (epsilon=%g, mu=%g, seed=%llu): %zu parameters, "
                "max relative error %.3e -> %s\n",
                report.model.c_str(), report.loss.c_str(), report.epsilon, report.mu, seed,
                report.params_checked, report.max_rel_error,
                report.pass ? "PASS" : "FAIL");
    return report.pass ? kExitOk : kExitNumeric;
}

int do_sweep(const std::string& config_path, const std::string& param,
             const std::vector<double>& values, bool parallel) {
    rebafl::ExperimentConfig cfg = rebafl::load_config_file(config_path);
    rebafl::run_sweep(cfg, param, values, parallel);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rebafl: deterministic federated-learning simulator"};
    app.require_subcommand(1);

    std::string config_path, out, resume;
    long long seed_override = -1, rounds_override = -1;
    auto* run = app.add_subcommand("run", "execute one experiment from a JSON config");
    run->add_option("config", config_path, "path to the experiment config")->required();
    run->add_option("--seed", seed_override, "override the run seed");
    run->add_option("--rounds", rounds_override, "override the round count");
    run->add_option("--out", out, "override the output directory");
    run->add_option("--resume", resume, "continue from a checkpoint.json");

    std::string gc_model = "mlp", gc_loss = "rbsm";
    double gc_epsilon = 0.01, gc_mu = 0.1;
    unsigned long long gc_seed = 1;
    bool gc_corrupt = false;
    auto* gradcheck = app.add_subcommand(
        "gradcheck", "compare analytic gradients against central finite differences");
    gradcheck->add_option("--model", gc_model, "mlp | cnn");
    gradcheck->add_option("--loss", gc_loss, "ce | rbsm | rebafl | fedprox");
    gradcheck->add_option("--epsilon", gc_epsilon, "prior smoothing for rbsm/rebafl");
    gradcheck->add_option("--mu", gc_mu, "augmentation weight for rebafl");
    gradcheck->add_option("--seed", gc_seed, "random model/batch seed");
    gradcheck->add_flag("--corrupt", gc_corrupt,
                        "perturb one analytic entry (negative-control test hook)");

    std::string sweep_config, sweep_param;
    std::vector<double> sweep_values;
    bool sweep_parallel = false;
    auto* sweep = app.add_subcommand("sweep", "one run per parameter value with derived seeds");
    sweep->add_option("config", sweep_config, "path to the base config")->required();
    sweep->add_option("--param", sweep_param, "p | E | epsilon | mu | s | m")->required();
    sweep->add_option("--values", sweep_values, "comma-separated values")
        ->required()
        ->delimiter(',');
    sweep->add_flag("--parallel", sweep_parallel, "run values concurrently");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return do_run(config_path, seed_override, rounds_override, out, resume);
        if (gradcheck->parsed())
            return do_gradcheck(gc_model, gc_loss, gc_epsilon, gc_mu, gc_seed, gc_corrupt);
        if (sweep->parsed())
            return do_sweep(sweep_config, sweep_param, sweep_values, sweep_parallel);
    } catch (const rebafl::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const rebafl::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitConfig;
    } catch (const rebafl::NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const rebafl::DegenerateLossError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitOk;
}
