#pragma once

#include <cstdint>
#include <vector>

#include "cil/nn.hpp"
#include "cil/sample.hpp"

namespace cil {

// Class-range and balance parameters shared by every per-sample loss.
// Old classes are 1..n_old, new classes n_old+1..n_total.
struct LossParams {
    double lambda = 1.0;
    uint32_t n_old = 0;
    uint32_t n_total = 0;

    void validate() const;
    bool is_new_class(uint32_t k) const { return k > n_old && k <= n_total; }
};

struct LossBreakdown {
    double cls = 0.0;
    double dis = 0.0;
    double total = 0.0;  // cls + lambda * dis
};

// Binary cross entropy term -[y*log(y_hat) + (1-y)*log(1-y_hat)] with y_hat
// clamped to [1e-7, 1-1e-7] before the logs.
double entropy(double y_hat, double y);

// Per-sample loss of one score vector: classification over the new-class
// range against indicator targets plus distillation over the old-class range
// against the teacher's scores. A null teacher (session 1) makes dis == 0.
LossBreakdown sample_loss(const std::vector<double>& scores_t,
                          const std::vector<double>* teacher_scores, uint32_t label,
                          const LossParams& p);

struct BatchLossValue {
    double loss = 0.0;
    LossBreakdown breakdown;
    Gradients grads;
};

// Duplet objective L1 + L2dup: L1 averages the per-sample loss over the
// replay set, L2dup averages it over both members of every duplet pair
// (normalized by |A| + |A_hat| = 2 * pair count). Teacher scores are computed
// on the fly from the frozen snapshot. Gradients are exact and accumulated in
// sample-index order.
BatchLossValue duplet_batch_loss(const Model& model, const Model* teacher,
                                 const std::vector<DupletPair>& duplets,
                                 const std::vector<Sample>& replay, const LossParams& p);

// Classifier-adaptation objective: mean over samples of the full-range BCE
// against true labels. Gradients are nonzero only on head parameters.
BatchLossValue ca_loss(const Model& model, const std::vector<Sample>& samples);

}  // namespace cil
