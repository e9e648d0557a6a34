#include "rebafl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "rebafl/errors.hpp"
#include "rebafl/federation.hpp"
#include "rebafl/losses.hpp"
#include "rebafl/model.hpp"
#include "rebafl/prototypes.hpp"
#include "rebafl/rng.hpp"

namespace rebafl {

namespace {

struct Case {
    ModelParams params;
    Matrix x;
    std::vector<int> y;
    LabelPrior prior;
    // rebafl extras: transferred features are constants w.r.t. theta, so
    // the finite-difference objective holds them fixed as well
    Matrix h_aug;
    std::vector<int> y_aug;
    LabelPrior prior_aug;
    // fedprox extras
    ModelParams anchor;
    double mu_prox = 0.1;
};

Case build_case(const std::string& model, const std::string& loss, double epsilon,
                std::uint64_t seed) {
    Case cs;
    const std::size_t classes = model == "cnn" ? 6 : 10;
    if (model == "mlp") {
        cs.params = make_mlp(12, 16, classes, seed);
    } else if (model == "cnn") {
        cs.params = make_cnn(1, 8, 8, {2}, 3, 1, 12, classes, seed);
    } else {
        throw ConfigError("gradcheck: unknown model '" + model + "' (mlp|cnn)");
    }

    auto eng = rng::engine(seed, rng::Stream::GradCheck);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t batch = model == "cnn" ? 4 : 8;
    cs.x = Matrix(batch, cs.params.input_dim);
    for (double& v : cs.x.data) v = normal(eng);

    // local label subset: a little over half the classes are present
    std::vector<int> all(classes);
    for (std::size_t c = 0; c < classes; ++c) all[c] = static_cast<int>(c);
    std::vector<int> subset;
    std::sample(all.begin(), all.end(), std::back_inserter(subset),
                static_cast<long>(classes / 2 + 1), eng);
    std::sort(subset.begin(), subset.end());

    std::vector<std::int64_t> counts(classes, 0);
    std::uniform_int_distribution<int> count_dist(10, 100);
    for (int c : subset) counts[static_cast<std::size_t>(c)] = count_dist(eng);
    cs.prior = smoothed_prior(counts, epsilon);

    std::uniform_int_distribution<std::size_t> pick(0, subset.size() - 1);
    cs.y.resize(batch);
    for (std::size_t j = 0; j < batch; ++j) cs.y[j] = subset[pick(eng)];

    if (loss == "rebafl") {
        PrototypeSet protos;
        protos.round = 0;
        for (int c : subset) {
            PrototypeEntry e;
            e.centroid.resize(cs.params.feature_dim);
            for (double& v : e.centroid) v = normal(eng);
            e.count = counts[static_cast<std::size_t>(c)];
            e.round = 0;
            protos.entries.emplace(c, std::move(e));
        }
        auto [h, cache] = forward_features(cs.params, cs.x);
        AugmentedBatch aug = cyclic_augment_batch(h, cs.y, protos, 1.0, 0, epsilon, classes);
        cs.h_aug = aug.features;
        cs.y_aug = aug.labels;
        cs.prior_aug = aug.prior;
    }
    if (loss == "fedprox") {
        cs.anchor = cs.params;
        for (auto s : param_spans(cs.anchor))
            for (double& v : s) v += 0.1 * normal(eng);
    }
    return cs;
}

double objective(const Case& cs, const std::string& loss, double mu, const ModelParams& params) {
    auto [h, cache] = forward_features(params, cs.x);
    Matrix z = forward_logits(params, h);
    if (loss == "ce") return vanilla_ce(z, cs.y).value;
    if (loss == "rbsm") return rbsm_loss(z, cs.y, cs.prior).value;
    if (loss == "rebafl") {
        double v = rbsm_loss(z, cs.y, cs.prior).value;
        Matrix z_aug = forward_logits(params, cs.h_aug);
        return v + mu * rbsm_loss(z_aug, cs.y_aug, cs.prior_aug).value;
    }
    if (loss == "fedprox")
        return vanilla_ce(z, cs.y).value + 0.5 * cs.mu_prox * param_sqdist(params, cs.anchor);
    throw ConfigError("gradcheck: unknown loss '" + loss + "' (ce|rbsm|rebafl|fedprox)");
}

ModelParams analytic_gradient(const Case& cs, const std::string& loss, double mu,
                              const ModelParams& params) {
    auto [h, cache] = forward_features(params, cs.x);
    Matrix z = forward_logits(params, h);
    LossResult main = (loss == "ce" || loss == "fedprox") ? vanilla_ce(z, cs.y)
                                                          : rbsm_loss(z, cs.y, cs.prior);
    ModelParams grads = backward(params, cache, main.dl_dz);
    if (loss == "rebafl") {
        Matrix z_aug = forward_logits(params, cs.h_aug);
        LossResult aug = rbsm_loss(z_aug, cs.y_aug, cs.prior_aug);
        Matrix dphi = matmul_at_b(cs.h_aug, aug.dl_dz);
        for (std::size_t k = 0; k < dphi.data.size(); ++k)
            grads.classifier.w.data[k] += mu * dphi.data[k];
    }
    if (loss == "fedprox")
        axpy_params(grads, 1.0, fedprox_penalty_grad(params, cs.anchor, cs.mu_prox));
    return grads;
}

}  // namespace

GradCheckReport gradcheck_loss(const std::string& model, const std::string& loss, double epsilon,
                               double mu, std::uint64_t seed, bool corrupt) {
    Case cs = build_case(model, loss, epsilon, seed);
    GradCheckReport report;
    report.model = model;
    report.loss = loss;
    report.epsilon = epsilon;
    report.mu = mu;

    ModelParams analytic = analytic_gradient(cs, loss, mu, cs.params);
    auto grad_spans = param_spans(analytic);
    if (corrupt && !grad_spans.empty() && !grad_spans[0].empty()) grad_spans[0][0] += 1e-3;

    ModelParams probe = cs.params;
    auto spans = param_spans(probe);
    std::size_t flat_index = 0;
    for (std::size_t b = 0; b < spans.size(); ++b) {
        for (std::size_t k = 0; k < spans[b].size(); ++k, ++flat_index) {
            const double orig = spans[b][k];
            const double h = 1e-5 * std::max(1.0, std::abs(orig));
            spans[b][k] = orig + h;
            const double f_plus = objective(cs, loss, mu, probe);
            spans[b][k] = orig - h;
            const double f_minus = objective(cs, loss, mu, probe);
            spans[b][k] = orig;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double a = grad_spans[b][k];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_index = flat_index;
            }
        }
    }
    report.params_checked = flat_index;
    report.pass = report.max_rel_error < kGradCheckTolerance;
    return report;
}

}  // namespace rebafl
