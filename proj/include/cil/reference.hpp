#pragma once

#include <utility>
#include <vector>

#include "cil/losses.hpp"
#include "cil/nn.hpp"
#include "cil/sample.hpp"

namespace cil {

// Serial reference kernels: a second, independently written implementation of
// the hot paths. Tests use them as oracles against the parallel kernels and
// the benchmark uses them as the single-thread baseline. Deliberately plain
// loops; do not share helpers with the primary implementations.

std::vector<double> reference_forward_scores(const Model& m, const std::vector<double>& x);

BatchLossValue reference_duplet_loss(const Model& model, const Model* teacher,
                                     const std::vector<DupletPair>& duplets,
                                     const std::vector<Sample>& replay, const LossParams& p);

// Top-1 accuracy by argmax over head scores, serial loop.
double reference_evaluate_head(const Model& m, const std::vector<Sample>& test_set);

// Sample mean and covariance (1/n) * sum (x-mu)(x-mu)^T as flat row-major d*d.
std::pair<std::vector<double>, std::vector<double>> reference_covariance(
    const std::vector<std::vector<double>>& rows);

}  // namespace cil
