#include "rebafl/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "rebafl/errors.hpp"

namespace rebafl {

namespace {

void check_labels(const std::vector<int>& labels, std::size_t batch, std::size_t classes,
                  const char* op) {
    if (labels.size() != batch)
        throw DataError(std::string(op) + ": " + std::to_string(labels.size()) +
                        " labels for a batch of " + std::to_string(batch));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw DataError(std::string(op) + ": label " + std::to_string(y) +
                            " outside [0, " + std::to_string(classes) + ")");
}

// Shared log-domain core. `log_prior` may be empty (plain softmax); where
// `masked` is set the class is excluded from the normalization entirely and
// its gradient is exactly zero.
LossResult softmax_xent(const Matrix& z, const std::vector<int>& labels,
                        const std::vector<double>& log_prior, const std::vector<char>& masked) {
    const std::size_t n = z.rows, c_count = z.cols;
    const bool with_prior = !log_prior.empty();
    LossResult res;
    res.dl_dz = Matrix(n, c_count);
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double* zr = z.data.data() + j * c_count;
        double* gr = res.dl_dz.data.data() + j * c_count;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < c_count; ++c) {
            if (!masked.empty() && masked[c]) continue;
            const double a = with_prior ? zr[c] + log_prior[c] : zr[c];
            if (a > m) m = a;
        }
        double s = 0.0;
        for (std::size_t c = 0; c < c_count; ++c) {
            if (!masked.empty() && masked[c]) {
                gr[c] = 0.0;
                continue;
            }
            const double a = with_prior ? zr[c] + log_prior[c] : zr[c];
            const double e = std::exp(a - m);
            gr[c] = e;
            s += e;
        }
        const std::size_t y = static_cast<std::size_t>(labels[j]);
        const double a_y = with_prior ? zr[y] + log_prior[y] : zr[y];
        total += m + std::log(s) - a_y;
        const double inv_s = 1.0 / s;
        for (std::size_t c = 0; c < c_count; ++c) {
            if (!masked.empty() && masked[c]) continue;
            gr[c] = gr[c] * inv_s * inv_n;
        }
        gr[y] -= inv_n;
    }
    res.value = total * inv_n;
    return res;
}

}  // namespace

bool LabelPrior::is_uniform() const {
    if (smoothed.empty() || smoothed[0] <= 0.0) return false;
    for (double p : smoothed)
        if (p != smoothed[0]) return false;
    return true;
}

LabelPrior smoothed_prior(const std::vector<std::int64_t>& counts, double epsilon) {
    if (epsilon < 0.0 || epsilon > 1.0)
        throw ConfigError("smoothed_prior: epsilon " + std::to_string(epsilon) +
                          " outside [0, 1]");
    if (counts.empty()) throw ConfigError("smoothed_prior: empty count vector");
    LabelPrior prior;
    prior.counts = counts;
    prior.epsilon = epsilon;
    for (std::int64_t c : counts) {
        if (c < 0) throw DataError("smoothed_prior: negative class count");
        prior.total += c;
    }
    if (prior.total == 0) throw DataError("smoothed_prior: client holds no samples");
    const double c_count = static_cast<double>(counts.size());
    const double inv_total = 1.0 / static_cast<double>(prior.total);
    prior.smoothed.resize(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c)
        prior.smoothed[c] =
            (1.0 - epsilon) * static_cast<double>(counts[c]) * inv_total + epsilon / c_count;
    return prior;
}

LabelPrior prior_from_labels(const std::vector<int>& labels, std::size_t num_classes,
                             double epsilon) {
    std::vector<std::int64_t> counts(num_classes, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw DataError("prior_from_labels: label out of range");
        ++counts[static_cast<std::size_t>(y)];
    }
    return smoothed_prior(counts, epsilon);
}

LossResult vanilla_ce(const Matrix& z, const std::vector<int>& labels) {
    if (z.rows == 0) throw DataError("vanilla_ce: empty batch");
    check_labels(labels, z.rows, z.cols, "vanilla_ce");
    return softmax_xent(z, labels, {}, {});
}

LossResult rbsm_loss(const Matrix& z, const std::vector<int>& labels, const LabelPrior& prior) {
    if (z.rows == 0) throw DataError("rbsm_loss: empty batch");
    if (prior.num_classes() != z.cols)
        throw ConfigError("rbsm_loss: prior covers " + std::to_string(prior.num_classes()) +
                          " classes, logits have " + std::to_string(z.cols));
    check_labels(labels, z.rows, z.cols, "rbsm_loss");
    for (int y : labels)
        if (prior.smoothed[static_cast<std::size_t>(y)] == 0.0)
            throw DegenerateLossError("rbsm_loss: batch label " + std::to_string(y) +
                                      " has zero prior probability");
    // A uniform prior cancels out of the softmax ratio; route through the
    // plain cross-entropy path so the reduction is exact to the bit.
    if (prior.is_uniform()) return softmax_xent(z, labels, {}, {});

    std::vector<double> log_prior(z.cols, 0.0);
    std::vector<char> masked(z.cols, 0);
    for (std::size_t c = 0; c < z.cols; ++c) {
        if (prior.smoothed[c] == 0.0)
            masked[c] = 1;
        else
            log_prior[c] = std::log(prior.smoothed[c]);
    }
    return softmax_xent(z, labels, log_prior, masked);
}

Matrix normalized_scores(const Matrix& z, const LabelPrior& prior) {
    if (prior.num_classes() != z.cols)
        throw ConfigError("normalized_scores: prior/logit class count mismatch");
    if (!all_finite(z)) throw NumericError("normalized_scores: non-finite logits");
    double mass = 0.0;
    for (double p : prior.smoothed) mass += p;
    if (mass == 0.0) throw DegenerateLossError("normalized_scores: all-zero prior");

    Matrix q(z.rows, z.cols);
    for (std::size_t j = 0; j < z.rows; ++j) {
        const double* zr = z.data.data() + j * z.cols;
        double* qr = q.data.data() + j * q.cols;
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < z.cols; ++c)
            if (prior.smoothed[c] > 0.0) {
                const double a = zr[c] + std::log(prior.smoothed[c]);
                if (a > m) m = a;
            }
        double s = 0.0;
        for (std::size_t c = 0; c < z.cols; ++c) {
            if (prior.smoothed[c] > 0.0) {
                qr[c] = std::exp(zr[c] + std::log(prior.smoothed[c]) - m);
                s += qr[c];
            } else {
                qr[c] = 0.0;
            }
        }
        const double inv_s = 1.0 / s;
        for (std::size_t c = 0; c < z.cols; ++c) qr[c] *= inv_s;
    }
    return q;
}

ForceDecomposition proxy_force_decomposition(const Matrix& h, const std::vector<int>& labels,
                                             const Matrix& scores, double lr,
                                             std::size_t batch_size) {
    if (scores.rows != h.rows)
        throw ConfigError("proxy_force_decomposition: scores/features batch mismatch");
    check_labels(labels, h.rows, scores.cols, "proxy_force_decomposition");
    if (batch_size == 0) throw ConfigError("proxy_force_decomposition: zero batch size");

    const double scale = lr / static_cast<double>(batch_size);
    ForceDecomposition f;
    f.pull = Matrix(scores.cols, h.cols);
    f.push = Matrix(scores.cols, h.cols);
    for (std::size_t j = 0; j < h.rows; ++j) {
        const std::size_t y = static_cast<std::size_t>(labels[j]);
        const double* hr = h.data.data() + j * h.cols;
        for (std::size_t c = 0; c < scores.cols; ++c) {
            const double q = scores(j, c);
            double* row = c == y ? f.pull.data.data() + c * h.cols
                                 : f.push.data.data() + c * h.cols;
            const double coeff = c == y ? 1.0 - q : q;
            for (std::size_t k = 0; k < h.cols; ++k) row[k] += coeff * hr[k];
        }
    }
    for (double& v : f.pull.data) v *= scale;
    for (double& v : f.push.data) v *= scale;
    return f;
}

Matrix bayes_recalibrate(const Matrix& posteriors, const std::vector<double>& source_prior,
                         const std::vector<double>& target_prior) {
    if (source_prior.size() != posteriors.cols || target_prior.size() != posteriors.cols)
        throw ConfigError("bayes_recalibrate: prior length does not match class count");
    Matrix out(posteriors.rows, posteriors.cols);
    for (std::size_t j = 0; j < posteriors.rows; ++j) {
        const double* pr = posteriors.data.data() + j * posteriors.cols;
        double* orow = out.data.data() + j * out.cols;
        double row_mass = 0.0;
        for (std::size_t c = 0; c < posteriors.cols; ++c) row_mass += pr[c];
        if (std::abs(row_mass - 1.0) > 1e-6)
            throw DataError("bayes_recalibrate: row " + std::to_string(j) +
                            " is not a probability distribution");
        double s = 0.0;
        for (std::size_t c = 0; c < posteriors.cols; ++c) {
            if (source_prior[c] == 0.0) {
                if (pr[c] != 0.0)
                    throw DegenerateLossError(
                        "bayes_recalibrate: zero source prior for class " + std::to_string(c) +
                        " with nonzero posterior mass (ill-conditioned)");
                orow[c] = 0.0;
                continue;
            }
            orow[c] = pr[c] * target_prior[c] / source_prior[c];
            s += orow[c];
        }
        if (s == 0.0)
            throw DegenerateLossError("bayes_recalibrate: row " + std::to_string(j) +
                                      " has no mass after rescoring");
        const double inv = 1.0 / s;
        for (std::size_t c = 0; c < posteriors.cols; ++c) orow[c] *= inv;
    }
    return out;
}

}  // namespace rebafl
