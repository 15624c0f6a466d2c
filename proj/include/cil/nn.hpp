#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cil/rng.hpp"
#include "cil/tensor.hpp"

namespace cil {

enum class Activation { relu, identity };

struct DenseLayer {
    uint32_t in_dim = 0;
    uint32_t out_dim = 0;
    std::vector<double> weights;  // out_dim x in_dim, row-major
    std::vector<double> bias;     // out_dim
    Activation act = Activation::identity;
};

// Feature extractor (hidden stack) plus per-class head. The head produces
// logits; forward() applies a per-class sigmoid so every score lies in (0,1).
// Value semantics: a copy is a fully independent snapshot.
struct Model {
    std::vector<DenseLayer> extractor;
    DenseLayer head;  // n_classes x feature_dim
    uint32_t input_dim = 0;
    uint32_t feature_dim = 0;
    uint32_t n_classes = 0;
};

Model make_model(uint32_t input_dim, const std::vector<uint32_t>& hidden_widths,
                 uint32_t n_classes, Rng& rng);

// Frozen teacher snapshot. A plain copy, named for intent: the returned model
// shares no storage with the original.
Model clone_snapshot(const Model& m);

// Mutable views over every parameter block, in a fixed order that Gradients
// and the optimizer share: extractor[i].weights, extractor[i].bias, ...,
// head.weights, head.bias.
struct ParamBlock {
    std::string name;
    double* data;
    std::size_t size;
};
std::vector<ParamBlock> param_blocks(Model& m);
std::size_t param_count(const Model& m);

struct Gradients {
    std::vector<std::vector<double>> blocks;

    static Gradients zeros_like(const Model& m);
    void add_scaled(const Gradients& other, double scale);
    void set_zero();
};

// Per-sample forward pass with stored activations, for backprop.
struct ForwardTrace {
    std::vector<std::vector<double>> post;  // post[0] = input, post[i] = output of extractor layer i-1
    std::vector<std::vector<double>> pre;   // pre-activation of extractor layer i
    std::vector<double> logits;
    std::vector<double> scores;  // sigmoid(logits), strictly inside (0,1)
};

ForwardTrace forward_trace(const Model& m, const std::vector<double>& x);

// Per-class scores F_t(x); throws a shape error on input dimension mismatch.
Tensor forward(const Model& m, const Tensor& x);
std::vector<double> forward_scores(const Model& m, const std::vector<double>& x);

// Output of the extractor B_t; forward == sigmoid(head * features + bias).
Tensor extract_features(const Model& m, const Tensor& x);
std::vector<double> extract_features(const Model& m, const std::vector<double>& x);

// Accumulates scale * dL/dtheta into grads given dL/dlogits for one sample.
void backward_into(const Model& m, const ForwardTrace& trace,
                   const std::vector<double>& dlogits, double scale, Gradients& grads);

struct SgdConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-3;
    std::vector<std::pair<uint32_t, double>> schedule;  // (epoch, divisor)

    void validate() const;
    // Base rate with every divisor whose epoch has been reached applied.
    double lr_at_epoch(uint32_t epoch) const;
};

// Momentum SGD with decoupled-from-nothing classic weight decay:
//   v = momentum*v + g + wd*w;  w -= lr*v
class SgdOptimizer {
public:
    SgdOptimizer(const Model& m, SgdConfig cfg);

    void step(Model& m, const Gradients& g, double lr);
    // Updates head blocks only; extractor parameters stay bit-identical.
    void step_head_only(Model& m, const Gradients& g, double lr);

    const SgdConfig& config() const { return cfg_; }

private:
    void step_blocks(Model& m, const Gradients& g, double lr, std::size_t first_block);
    SgdConfig cfg_;
    std::vector<std::vector<double>> velocity_;
};

// Evaluates (loss, gradients) for the current parameters.
using BatchLossFn = std::function<std::pair<double, Gradients>(const Model&)>;

// Throws a numeric error naming the offending parameter block if the loss or
// any gradient value is non-finite.
void validate_finite(Model& m, double loss, const Gradients& g);

// One optimizer step; returns the pre-step loss. Throws a numeric error
// naming the offending parameter block if the loss or any gradient is
// non-finite.
double backward_and_step(Model& m, const BatchLossFn& loss_fn, SgdOptimizer& opt, double lr);

// Max over sampled parameters of |g_analytic - g_fd| / max(1, |g_a|, |g_fd|),
// with central finite differences of step eps. Samples at most
// max_params_per_block parameters uniformly from each block. head_only
// restricts the check to head blocks, for losses that freeze the extractor
// by contract.
double gradient_check(const Model& m, const BatchLossFn& loss_fn, double eps,
                      std::size_t max_params_per_block = 512, uint64_t seed = 0,
                      bool head_only = false);

}  // namespace cil
