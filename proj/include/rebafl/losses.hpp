#pragma once

#include <cstdint>
#include <vector>

#include "rebafl/matrix.hpp"

namespace rebafl {

// Per-class sample counts of one client plus the epsilon-smoothed prior
// p_hat(c) = (1-eps) * n_c / n + eps / C. With eps = 1 the prior is exactly
// uniform; with eps = 0 it is the empirical label distribution (classes the
// client never saw get probability exactly zero).
struct LabelPrior {
    std::vector<std::int64_t> counts;
    std::int64_t total = 0;
    double epsilon = 0.0;
    std::vector<double> smoothed;

    std::size_t num_classes() const { return smoothed.size(); }
    // True when every smoothed entry is the same positive value; the prior
    // factor then cancels out of the softmax ratio and the loss reduces to
    // the plain cross-entropy code path, bit for bit.
    bool is_uniform() const;
};

LabelPrior smoothed_prior(const std::vector<std::int64_t>& counts, double epsilon);
LabelPrior prior_from_labels(const std::vector<int>& labels, std::size_t num_classes,
                             double epsilon);

// Mean loss over the batch plus its gradient w.r.t. the logits. Rows of
// dl_dz sum to zero (softmax family) and carry the 1/batch factor.
struct LossResult {
    double value = 0.0;
    Matrix dl_dz;
};

// Softmax cross-entropy, mean-reduced.
LossResult vanilla_ce(const Matrix& z, const std::vector<int>& labels);

// Relaxed balanced-softmax: the softmax weights every class logit by the
// smoothed prior. Classes with p_hat(c) = 0 contribute nothing to the
// denominator and receive exactly zero gradient.
LossResult rbsm_loss(const Matrix& z, const std::vector<int>& labels, const LabelPrior& prior);

// q[j][c] = p_hat(c) e^{z_jc} / sum_c' p_hat(c') e^{z_jc'}; rows sum to 1.
Matrix normalized_scores(const Matrix& z, const LabelPrior& prior);

// One-step proxy update split into the pulling force of positive features
// and the pushing force of negative features. Row c of each matrix is the
// force on the class-c proxy; pull - push equals -lr * dL/dphi_c.
struct ForceDecomposition {
    Matrix pull;  // num_classes x feature_dim
    Matrix push;
};

ForceDecomposition proxy_force_decomposition(const Matrix& h, const std::vector<int>& labels,
                                             const Matrix& scores, double lr,
                                             std::size_t batch_size);

// Rescores row-stochastic posteriors from a source label distribution onto
// a target one: score(c) proportional to post(c) * target(c) / source(c),
// renormalized per row. A zero source prior under nonzero posterior mass is
// ill-conditioned and rejected.
Matrix bayes_recalibrate(const Matrix& posteriors, const std::vector<double>& source_prior,
                         const std::vector<double>& target_prior);

}  // namespace rebafl
