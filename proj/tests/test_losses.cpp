#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "rebafl/errors.hpp"
#include "rebafl/losses.hpp"
#include "rebafl/model.hpp"
#include "rebafl/rng.hpp"

using namespace rebafl;

namespace {

Matrix random_logits(std::size_t n, std::size_t c, std::mt19937_64& eng, double scale = 2.0) {
    Matrix z(n, c);
    std::normal_distribution<double> d(0.0, scale);
    for (double& v : z.data) v = d(eng);
    return z;
}

std::vector<int> random_labels(std::size_t n, const std::vector<int>& pool,
                               std::mt19937_64& eng) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<int> y(n);
    for (int& v : y) v = pool[pick(eng)];
    return y;
}

// direct-formula oracle: naive exp/sum arithmetic, valid for moderate logits
double oracle_ce(const Matrix& z, const std::vector<int>& y) {
    double total = 0.0;
    for (std::size_t j = 0; j < z.rows; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < z.cols; ++c) s += std::exp(z(j, c));
        total += -std::log(std::exp(z(j, static_cast<std::size_t>(y[j]))) / s);
    }
    return total / static_cast<double>(z.rows);
}

double oracle_bsm(const Matrix& z, const std::vector<int>& y, const std::vector<double>& prior) {
    double total = 0.0;
    for (std::size_t j = 0; j < z.rows; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < z.cols; ++c) s += prior[c] * std::exp(z(j, c));
        const auto yy = static_cast<std::size_t>(y[j]);
        total += -std::log(prior[yy] * std::exp(z(j, yy)) / s);
    }
    return total / static_cast<double>(z.rows);
}

}  // namespace

TEST_CASE("smoothed prior arithmetic") {
    SUBCASE("two present classes of ten, eps 0.01") {
        std::vector<std::int64_t> counts(10, 0);
        counts[0] = counts[1] = 500;
        LabelPrior prior = smoothed_prior(counts, 0.01);
        CHECK(prior.smoothed[0] == doctest::Approx(0.496).epsilon(1e-12));
        CHECK(prior.smoothed[1] == doctest::Approx(0.496).epsilon(1e-12));
        for (std::size_t c = 2; c < 10; ++c)
            CHECK(prior.smoothed[c] == doctest::Approx(0.001).epsilon(1e-12));
    }
    SUBCASE("eps 1 gives the uniform prior regardless of counts") {
        LabelPrior prior = smoothed_prior({7, 0, 2, 991}, 1.0);
        for (double p : prior.smoothed) CHECK(p == 0.25);
        CHECK(prior.is_uniform());
    }
    SUBCASE("eps 0 gives the empirical prior") {
        std::vector<std::int64_t> counts(10, 0);
        counts[0] = counts[1] = 500;
        LabelPrior prior = smoothed_prior(counts, 0.0);
        CHECK(prior.smoothed[0] == 0.5);
        CHECK(prior.smoothed[1] == 0.5);
        for (std::size_t c = 2; c < 10; ++c) CHECK(prior.smoothed[c] == 0.0);
    }
    SUBCASE("entries sum to one and respect the eps/C floor") {
        auto eng = rng::engine(3, rng::Stream::GradCheck);
        std::uniform_int_distribution<std::int64_t> cnt(0, 400);
        for (int rep = 0; rep < 50; ++rep) {
            std::vector<std::int64_t> counts(8);
            std::int64_t total = 0;
            for (auto& c : counts) total += (c = cnt(eng));
            if (total == 0) counts[0] = 1;
            const double eps = rep / 50.0;
            LabelPrior prior = smoothed_prior(counts, eps);
            double sum = 0.0;
            for (double p : prior.smoothed) {
                sum += p;
                CHECK(p >= eps / 8.0 - 1e-15);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(smoothed_prior({0, 0, 0}, 0.1), DataError);
        CHECK_THROWS_AS(smoothed_prior({1, 2}, 1.5), ConfigError);
        CHECK_THROWS_AS(smoothed_prior({1, 2}, -0.1), ConfigError);
        CHECK_THROWS_AS(smoothed_prior({1, -2}, 0.1), DataError);
    }
}

TEST_CASE("vanilla cross-entropy") {
    SUBCASE("zero logits over ten classes cost ln 10") {
        Matrix z(4, 10);
        std::vector<int> y = {0, 3, 7, 9};
        LossResult r = vanilla_ce(z, y);
        CHECK(r.value == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    }
    SUBCASE("saturated true logit costs nearly nothing") {
        Matrix z(1, 10);
        z(0, 2) = 50.0;
        LossResult r = vanilla_ce(z, {2});
        CHECK(r.value < 1e-9);
        CHECK(r.value >= 0.0);
    }
    SUBCASE("random case matches the direct-formula oracle") {
        auto eng = rng::engine(11, rng::Stream::GradCheck);
        Matrix z = random_logits(16, 6, eng);
        std::vector<int> y = random_labels(16, {0, 1, 2, 3, 4, 5}, eng);
        LossResult r = vanilla_ce(z, y);
        CHECK(r.value == doctest::Approx(oracle_ce(z, y)).epsilon(1e-12));
        // dL/dZ = (softmax - onehot)/n
        for (std::size_t j = 0; j < z.rows; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < z.cols; ++c) s += std::exp(z(j, c));
            for (std::size_t c = 0; c < z.cols; ++c) {
                const double expect =
                    (std::exp(z(j, c)) / s - (static_cast<int>(c) == y[j] ? 1.0 : 0.0)) / 16.0;
                CHECK(r.dl_dz(j, c) == doctest::Approx(expect).epsilon(1e-10));
            }
        }
    }
    SUBCASE("gradient rows sum to zero") {
        auto eng = rng::engine(12, rng::Stream::GradCheck);
        Matrix z = random_logits(8, 5, eng);
        std::vector<int> y = random_labels(8, {0, 1, 2, 3, 4}, eng);
        LossResult r = vanilla_ce(z, y);
        for (std::size_t j = 0; j < 8; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < 5; ++c) s += r.dl_dz(j, c);
            CHECK(std::abs(s) < 1e-10);
        }
    }
    SUBCASE("label out of range is a data error") {
        Matrix z(1, 3);
        CHECK_THROWS_AS(vanilla_ce(z, {3}), DataError);
        CHECK_THROWS_AS(vanilla_ce(z, {-1}), DataError);
    }
}

TEST_CASE("relaxed balanced-softmax") {
    SUBCASE("symmetric two-class case costs ln 2") {
        Matrix z(1, 2);
        LabelPrior prior = smoothed_prior({500, 500}, 0.0);
        LossResult r = rbsm_loss(z, {0}, prior);
        CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("uniform prior reduces to vanilla CE bit for bit") {
        auto eng = rng::engine(17, rng::Stream::GradCheck);
        Matrix z = random_logits(12, 7, eng);
        std::vector<int> y = random_labels(12, {0, 1, 2, 3, 4, 5, 6}, eng);
        LabelPrior prior = smoothed_prior({3, 1, 4, 1, 5, 9, 2}, 1.0);
        LossResult a = rbsm_loss(z, y, prior);
        LossResult b = vanilla_ce(z, y);
        CHECK(a.value == b.value);
        for (std::size_t k = 0; k < a.dl_dz.data.size(); ++k)
            CHECK(a.dl_dz.data[k] == b.dl_dz.data[k]);
    }
    SUBCASE("hand case: prior (1/3, 2/3), z = (ln 2, 0), y = first class") {
        Matrix z(1, 2);
        z(0, 0) = std::log(2.0);
        LabelPrior prior = smoothed_prior({1, 2}, 0.0);
        LossResult r = rbsm_loss(z, {0}, prior);
        // numerator (1/3)*2 = 2/3, denominator 2/3 + 2/3 = 4/3, ratio 1/2
        CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("pure BSM matches the direct formula of the prior-weighted softmax") {
        auto eng = rng::engine(23, rng::Stream::GradCheck);
        Matrix z = random_logits(10, 6, eng);
        std::vector<std::int64_t> counts = {10, 0, 30, 0, 25, 5};
        LabelPrior prior = smoothed_prior(counts, 0.0);
        std::vector<int> y = random_labels(10, {0, 2, 4, 5}, eng);
        LossResult r = rbsm_loss(z, y, prior);
        CHECK(r.value == doctest::Approx(oracle_bsm(z, y, prior.smoothed)).epsilon(1e-12));
    }
    SUBCASE("a batch label with zero prior is a degenerate-loss error") {
        Matrix z(1, 3);
        LabelPrior prior = smoothed_prior({5, 5, 0}, 0.0);
        CHECK_THROWS_AS(rbsm_loss(z, {2}, prior), DegenerateLossError);
    }
    SUBCASE("single-class client under pure BSM: zero loss, zero gradient") {
        // every score is already 1, so local training cannot move
        Matrix z(3, 4);
        z(0, 1) = 5.0;
        LabelPrior prior = smoothed_prior({0, 42, 0, 0}, 0.0);
        LossResult r = rbsm_loss(z, {1, 1, 1}, prior);
        CHECK(r.value == 0.0);
        for (double g : r.dl_dz.data) CHECK(g == 0.0);
    }
    SUBCASE("no overflow for logits up to +-700") {
        Matrix z(2, 3);
        z(0, 0) = 700.0;
        z(0, 1) = -700.0;
        z(1, 2) = -700.0;
        LabelPrior prior = smoothed_prior({1, 1, 2}, 0.01);
        LossResult r = rbsm_loss(z, {1, 2}, prior);
        CHECK(std::isfinite(r.value));
        for (double g : r.dl_dz.data) CHECK(std::isfinite(g));
        LossResult v = vanilla_ce(z, {1, 2});
        CHECK(std::isfinite(v.value));
    }
}

TEST_CASE("missing classes receive exactly zero gradient under eps = 0") {
    // property over 100 random batches, exact zeros required
    auto eng = rng::engine(29, rng::Stream::GradCheck);
    std::uniform_int_distribution<std::int64_t> cnt(1, 200);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t classes = 10;
        std::vector<int> all(classes);
        for (std::size_t c = 0; c < classes; ++c) all[c] = static_cast<int>(c);
        std::vector<int> present;
        std::sample(all.begin(), all.end(), std::back_inserter(present), 4, eng);
        std::sort(present.begin(), present.end());
        std::vector<std::int64_t> counts(classes, 0);
        for (int c : present) counts[static_cast<std::size_t>(c)] = cnt(eng);
        LabelPrior prior = smoothed_prior(counts, 0.0);

        Matrix z = random_logits(8, classes, eng, 3.0);
        std::vector<int> y = random_labels(8, present, eng);
        LossResult r = rbsm_loss(z, y, prior);

        Matrix h = random_logits(8, 6, eng);  // arbitrary feature block
        Matrix dphi = matmul_at_b(h, r.dl_dz);
        for (std::size_t c = 0; c < classes; ++c) {
            if (counts[c] != 0) continue;
            for (std::size_t j = 0; j < 8; ++j) CHECK(r.dl_dz(j, c) == 0.0);
            for (std::size_t k = 0; k < 6; ++k) CHECK(dphi(k, c) == 0.0);
        }
    }
}

TEST_CASE("normalized scores") {
    SUBCASE("uniform prior and zero logits give 1/C") {
        Matrix z(3, 5);
        LabelPrior prior = smoothed_prior({1, 1, 1, 1, 1}, 1.0);
        Matrix q = normalized_scores(z, prior);
        for (double v : q.data) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("zero-prior class has an identically zero column") {
        auto eng = rng::engine(31, rng::Stream::GradCheck);
        Matrix z = random_logits(6, 4, eng);
        LabelPrior prior = smoothed_prior({4, 0, 6, 2}, 0.0);
        Matrix q = normalized_scores(z, prior);
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(q(j, 1) == 0.0);
            double s = 0.0;
            for (std::size_t c = 0; c < 4; ++c) s += q(j, c);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("random case matches the direct formula") {
        auto eng = rng::engine(37, rng::Stream::GradCheck);
        Matrix z = random_logits(5, 6, eng);
        LabelPrior prior = smoothed_prior({1, 2, 3, 4, 5, 6}, 0.2);
        Matrix q = normalized_scores(z, prior);
        for (std::size_t j = 0; j < 5; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < 6; ++c) s += prior.smoothed[c] * std::exp(z(j, c));
            for (std::size_t c = 0; c < 6; ++c)
                CHECK(q(j, c) == doctest::Approx(prior.smoothed[c] * std::exp(z(j, c)) / s)
                                     .epsilon(1e-12));
        }
    }
    SUBCASE("an all-zero prior is degenerate") {
        LabelPrior broken;
        broken.counts = {0, 0};
        broken.smoothed = {0.0, 0.0};
        CHECK_THROWS_AS(normalized_scores(Matrix(1, 2), broken), DegenerateLossError);
    }
}

TEST_CASE("proxy force decomposition") {
    SUBCASE("a missing class feels neither pull nor push") {
        auto eng = rng::engine(41, rng::Stream::GradCheck);
        Matrix h = random_logits(6, 4, eng);
        LabelPrior prior = smoothed_prior({7, 0, 9, 4}, 0.0);
        Matrix z = random_logits(6, 4, eng);
        Matrix q = normalized_scores(z, prior);
        std::vector<int> y = random_labels(6, {0, 2, 3}, eng);
        ForceDecomposition f = proxy_force_decomposition(h, y, q, 0.1, 6);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(f.pull(1, k) == 0.0);
            CHECK(f.push(1, k) == 0.0);
        }
    }
    SUBCASE("a perfectly confident sample exerts no pull") {
        Matrix h(1, 3, 1.0);
        Matrix q(1, 2);
        q(0, 0) = 1.0;
        ForceDecomposition f = proxy_force_decomposition(h, {0}, q, 0.5, 1);
        for (std::size_t k = 0; k < 3; ++k) CHECK(f.pull(0, k) == 0.0);
    }
    SUBCASE("pull minus push reconstructs the backprop proxy step") {
        auto eng = rng::engine(43, rng::Stream::GradCheck);
        const std::size_t d = 5, classes = 6, n = 12;
        ModelParams m = make_linear(d, classes, 43);
        Matrix h = random_logits(n, d, eng);
        LabelPrior prior = smoothed_prior({5, 1, 0, 8, 2, 4}, 0.01);
        auto [feat, cache] = forward_features(m, h);
        Matrix z = forward_logits(m, feat);
        std::vector<int> y = random_labels(n, {0, 1, 3, 4, 5}, eng);

        const double lr = 0.07;
        Matrix q = normalized_scores(z, prior);
        ForceDecomposition f = proxy_force_decomposition(h, y, q, lr, n);

        LossResult loss = rbsm_loss(z, y, prior);
        ModelParams grads = backward(m, cache, loss.dl_dz);
        for (std::size_t c = 0; c < classes; ++c)
            for (std::size_t k = 0; k < d; ++k) {
                const double delta_phi = f.pull(c, k) - f.push(c, k);
                CHECK(delta_phi ==
                      doctest::Approx(-lr * grads.classifier.w(k, c)).epsilon(1e-10));
            }
    }
}

TEST_CASE("bayes recalibration") {
    SUBCASE("equal priors are the identity") {
        Matrix post(2, 3);
        post(0, 0) = 0.2; post(0, 1) = 0.5; post(0, 2) = 0.3;
        post(1, 0) = 0.6; post(1, 1) = 0.1; post(1, 2) = 0.3;
        std::vector<double> prior = {0.3, 0.4, 0.3};
        Matrix out = bayes_recalibrate(post, prior, prior);
        for (std::size_t k = 0; k < post.data.size(); ++k)
            CHECK(out.data[k] == doctest::Approx(post.data[k]).epsilon(1e-12));
    }
    SUBCASE("uniform posteriors follow the target prior") {
        Matrix post(1, 2, 0.5);
        Matrix out = bayes_recalibrate(post, {0.5, 0.5}, {0.9, 0.1});
        CHECK(out(0, 0) > out(0, 1));
        CHECK(out(0, 0) == doctest::Approx(0.9).epsilon(1e-12));
    }
    SUBCASE("three-class numeric case matches the formula") {
        Matrix post(1, 3);
        post(0, 0) = 0.5; post(0, 1) = 0.25; post(0, 2) = 0.25;
        std::vector<double> src = {0.6, 0.2, 0.2};
        std::vector<double> tgt = {1.0 / 3, 1.0 / 3, 1.0 / 3};
        Matrix out = bayes_recalibrate(post, src, tgt);
        double raw[3];
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += raw[c] = post(0, static_cast<std::size_t>(c)) * tgt[c] / src[c];
        for (int c = 0; c < 3; ++c)
            CHECK(out(0, static_cast<std::size_t>(c)) ==
                  doctest::Approx(raw[c] / s).epsilon(1e-12));
    }
    SUBCASE("zero source prior with posterior mass is ill-conditioned") {
        Matrix post(1, 2);
        post(0, 0) = 0.25;
        post(0, 1) = 0.75;
        CHECK_THROWS_AS(bayes_recalibrate(post, {0.0, 1.0}, {0.5, 0.5}), DegenerateLossError);
        // zero posterior mass on the zero-prior class is fine
        Matrix ok(1, 2);
        ok(0, 1) = 1.0;
        Matrix out = bayes_recalibrate(ok, {0.0, 1.0}, {0.5, 0.5});
        CHECK(out(0, 0) == 0.0);
        CHECK(out(0, 1) == 1.0);
    }
    SUBCASE("non-stochastic rows are rejected") {
        Matrix post(1, 2, 0.9);
        CHECK_THROWS_AS(bayes_recalibrate(post, {0.5, 0.5}, {0.5, 0.5}), DataError);
    }
}

TEST_CASE("loss values are nonnegative and finite on random inputs") {
    auto eng = rng::engine(47, rng::Stream::GradCheck);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix z = random_logits(6, 5, eng, 5.0);
        std::vector<int> y = random_labels(6, {0, 1, 2, 3, 4}, eng);
        LossResult v = vanilla_ce(z, y);
        CHECK(v.value >= 0.0);
        CHECK(std::isfinite(v.value));
        LabelPrior prior = smoothed_prior({1, 2, 3, 4, 5}, 0.05);
        LossResult r = rbsm_loss(z, y, prior);
        CHECK(r.value >= 0.0);
        CHECK(std::isfinite(r.value));
    }
}
