#pragma once

#include <cstdint>
#include <string>

namespace rebafl {

// Central-difference gradient verification at 64-bit precision on small
// random models. `loss` is one of: ce, rbsm, rebafl, fedprox; `model` is
// mlp or cnn. The relative error uses max(|analytic|, |numeric|, 1e-4) as
// denominator so near-zero entries are compared absolutely.
struct GradCheckReport {
    std::string model;
    std::string loss;
    double epsilon = 0.0;
    double mu = 0.0;
    std::size_t params_checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    bool pass = false;
};

constexpr double kGradCheckTolerance = 1e-5;

GradCheckReport gradcheck_loss(const std::string& model, const std::string& loss, double epsilon,
                               double mu, std::uint64_t seed, bool corrupt = false);

}  // namespace rebafl
