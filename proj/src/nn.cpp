#include "cil/nn.hpp"

#include <algorithm>
#include <cmath>

#include "cil/errors.hpp"

namespace cil {

namespace {

constexpr double kScoreFloor = 1e-12;  // keeps every score strictly inside (0,1)

double stable_sigmoid(double z) {
    double s;
    if (z >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-z));
    } else {
        double e = std::exp(z);
        s = e / (1.0 + e);
    }
    return std::clamp(s, kScoreFloor, 1.0 - kScoreFloor);
}

DenseLayer make_layer(uint32_t in_dim, uint32_t out_dim, Activation act, Rng& rng) {
    DenseLayer l;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    l.act = act;
    l.weights.resize(static_cast<std::size_t>(in_dim) * out_dim);
    l.bias.assign(out_dim, 0.0);
    double s = std::sqrt(6.0 / (static_cast<double>(in_dim) + out_dim));
    for (double& w : l.weights) w = rng.uniform(-s, s);
    return l;
}

void apply_layer(const DenseLayer& l, const std::vector<double>& in,
                 std::vector<double>& pre, std::vector<double>& out) {
    pre.resize(l.out_dim);
    out.resize(l.out_dim);
    for (uint32_t o = 0; o < l.out_dim; ++o) {
        double acc = l.bias[o];
        const double* wrow = l.weights.data() + static_cast<std::size_t>(o) * l.in_dim;
        for (uint32_t i = 0; i < l.in_dim; ++i) acc += wrow[i] * in[i];
        pre[o] = acc;
        out[o] = (l.act == Activation::relu && acc < 0.0) ? 0.0 : acc;
    }
}

}  // namespace

Model make_model(uint32_t input_dim, const std::vector<uint32_t>& hidden_widths,
                 uint32_t n_classes, Rng& rng) {
    if (input_dim == 0) fail(errc::config, "model input dim must be positive");
    Model m;
    m.input_dim = input_dim;
    uint32_t d = input_dim;
    for (uint32_t w : hidden_widths) {
        if (w == 0) fail(errc::config, "hidden width must be positive");
        m.extractor.push_back(make_layer(d, w, Activation::relu, rng));
        d = w;
    }
    m.feature_dim = d;
    m.n_classes = n_classes;
    if (n_classes > 0) {
        m.head = make_layer(d, n_classes, Activation::identity, rng);
    } else {
        m.head.in_dim = d;
        m.head.out_dim = 0;
        m.head.act = Activation::identity;
    }
    return m;
}

Model clone_snapshot(const Model& m) { return m; }

std::vector<ParamBlock> param_blocks(Model& m) {
    std::vector<ParamBlock> blocks;
    for (std::size_t i = 0; i < m.extractor.size(); ++i) {
        DenseLayer& l = m.extractor[i];
        blocks.push_back({"extractor[" + std::to_string(i) + "].weights", l.weights.data(),
                          l.weights.size()});
        blocks.push_back(
            {"extractor[" + std::to_string(i) + "].bias", l.bias.data(), l.bias.size()});
    }
    blocks.push_back({"head.weights", m.head.weights.data(), m.head.weights.size()});
    blocks.push_back({"head.bias", m.head.bias.data(), m.head.bias.size()});
    return blocks;
}

std::size_t param_count(const Model& m) {
    std::size_t n = 0;
    for (const DenseLayer& l : m.extractor) n += l.weights.size() + l.bias.size();
    return n + m.head.weights.size() + m.head.bias.size();
}

Gradients Gradients::zeros_like(const Model& m) {
    Gradients g;
    for (const DenseLayer& l : m.extractor) {
        g.blocks.emplace_back(l.weights.size(), 0.0);
        g.blocks.emplace_back(l.bias.size(), 0.0);
    }
    g.blocks.emplace_back(m.head.weights.size(), 0.0);
    g.blocks.emplace_back(m.head.bias.size(), 0.0);
    return g;
}

void Gradients::add_scaled(const Gradients& other, double scale) {
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t j = 0; j < blocks[b].size(); ++j)
            blocks[b][j] += scale * other.blocks[b][j];
}

void Gradients::set_zero() {
    for (auto& b : blocks) std::fill(b.begin(), b.end(), 0.0);
}

ForwardTrace forward_trace(const Model& m, const std::vector<double>& x) {
    if (x.size() != m.input_dim)
        fail(errc::shape, "input length " + std::to_string(x.size()) +
                              " does not match model input dim " + std::to_string(m.input_dim));
    ForwardTrace t;
    t.post.resize(m.extractor.size() + 1);
    t.pre.resize(m.extractor.size());
    t.post[0] = x;
    for (std::size_t i = 0; i < m.extractor.size(); ++i)
        apply_layer(m.extractor[i], t.post[i], t.pre[i], t.post[i + 1]);

    const std::vector<double>& feat = t.post.back();
    t.logits.resize(m.n_classes);
    t.scores.resize(m.n_classes);
    for (uint32_t c = 0; c < m.n_classes; ++c) {
        double acc = m.head.bias[c];
        const double* wrow = m.head.weights.data() + static_cast<std::size_t>(c) * m.feature_dim;
        for (uint32_t i = 0; i < m.feature_dim; ++i) acc += wrow[i] * feat[i];
        t.logits[c] = acc;
        t.scores[c] = stable_sigmoid(acc);
    }
    return t;
}

std::vector<double> forward_scores(const Model& m, const std::vector<double>& x) {
    return forward_trace(m, x).scores;
}

Tensor forward(const Model& m, const Tensor& x) {
    return Tensor::vector(forward_scores(m, x.data));
}

std::vector<double> extract_features(const Model& m, const std::vector<double>& x) {
    if (x.size() != m.input_dim)
        fail(errc::shape, "input length " + std::to_string(x.size()) +
                              " does not match model input dim " + std::to_string(m.input_dim));
    std::vector<double> cur = x;
    std::vector<double> pre, out;
    for (const DenseLayer& l : m.extractor) {
        apply_layer(l, cur, pre, out);
        cur = out;
    }
    return cur;
}

Tensor extract_features(const Model& m, const Tensor& x) {
    return Tensor::vector(extract_features(m, x.data));
}

void backward_into(const Model& m, const ForwardTrace& trace,
                   const std::vector<double>& dlogits, double scale, Gradients& grads) {
    std::size_t nblocks = grads.blocks.size();
    std::vector<double>& head_w = grads.blocks[nblocks - 2];
    std::vector<double>& head_b = grads.blocks[nblocks - 1];

    const std::vector<double>& feat = trace.post.back();
    std::vector<double> dfeat(m.feature_dim, 0.0);
    for (uint32_t c = 0; c < m.n_classes; ++c) {
        double gl = dlogits[c];
        head_b[c] += scale * gl;
        const double* wrow = m.head.weights.data() + static_cast<std::size_t>(c) * m.feature_dim;
        double* grow = head_w.data() + static_cast<std::size_t>(c) * m.feature_dim;
        for (uint32_t i = 0; i < m.feature_dim; ++i) {
            grow[i] += scale * gl * feat[i];
            dfeat[i] += gl * wrow[i];
        }
    }
    // dcur carries the unscaled upstream gradient; parameter writes apply `scale`.
    std::vector<double> dcur = std::move(dfeat);
    for (std::size_t li = m.extractor.size(); li-- > 0;) {
        const DenseLayer& l = m.extractor[li];
        std::vector<double>& gw = grads.blocks[2 * li];
        std::vector<double>& gb = grads.blocks[2 * li + 1];
        const std::vector<double>& in = trace.post[li];
        std::vector<double> dprev(l.in_dim, 0.0);
        for (uint32_t o = 0; o < l.out_dim; ++o) {
            double g = dcur[o];
            if (l.act == Activation::relu && trace.pre[li][o] <= 0.0) g = 0.0;
            gb[o] += scale * g;
            const double* wrow = l.weights.data() + static_cast<std::size_t>(o) * l.in_dim;
            double* grow = gw.data() + static_cast<std::size_t>(o) * l.in_dim;
            for (uint32_t i = 0; i < l.in_dim; ++i) {
                grow[i] += scale * g * in[i];
                dprev[i] += g * wrow[i];
            }
        }
        dcur = std::move(dprev);
    }
}

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0)) fail(errc::config, "learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) fail(errc::config, "momentum must lie in [0,1)");
    if (weight_decay < 0.0) fail(errc::config, "weight_decay must be non-negative");
    for (const auto& [epoch, divisor] : schedule)
        if (!(divisor > 1.0)) fail(errc::config, "schedule divisors must exceed 1");
}

double SgdConfig::lr_at_epoch(uint32_t epoch) const {
    double lr = learning_rate;
    for (const auto& [at, divisor] : schedule)
        if (epoch >= at) lr /= divisor;
    return lr;
}

SgdOptimizer::SgdOptimizer(const Model& m, SgdConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Gradients g = Gradients::zeros_like(m);
    velocity_ = std::move(g.blocks);
}

void SgdOptimizer::step_blocks(Model& m, const Gradients& g, double lr,
                               std::size_t first_block) {
    std::vector<ParamBlock> blocks = param_blocks(m);
    if (blocks.size() != velocity_.size())
        fail(errc::state, "optimizer state does not match model shape");
    for (std::size_t b = first_block; b < blocks.size(); ++b) {
        if (blocks[b].size != velocity_[b].size() || blocks[b].size != g.blocks[b].size())
            fail(errc::state, "optimizer state does not match model shape at " + blocks[b].name);
        double* w = blocks[b].data;
        double* v = velocity_[b].data();
        const double* gb = g.blocks[b].data();
        for (std::size_t j = 0; j < blocks[b].size; ++j) {
            v[j] = cfg_.momentum * v[j] + gb[j] + cfg_.weight_decay * w[j];
            w[j] -= lr * v[j];
        }
    }
}

void SgdOptimizer::step(Model& m, const Gradients& g, double lr) {
    step_blocks(m, g, lr, 0);
}

void SgdOptimizer::step_head_only(Model& m, const Gradients& g, double lr) {
    step_blocks(m, g, lr, velocity_.size() - 2);
}

void validate_finite(Model& m, double loss, const Gradients& g) {
    if (!std::isfinite(loss)) fail(errc::numeric, "non-finite batch loss");
    std::vector<ParamBlock> blocks = param_blocks(m);
    for (std::size_t b = 0; b < g.blocks.size(); ++b)
        for (double v : g.blocks[b])
            if (!std::isfinite(v))
                fail(errc::numeric, "non-finite gradient in " + blocks[b].name);
}

double backward_and_step(Model& m, const BatchLossFn& loss_fn, SgdOptimizer& opt, double lr) {
    auto [loss, grads] = loss_fn(m);
    validate_finite(m, loss, grads);
    opt.step(m, grads, lr);
    return loss;
}

double gradient_check(const Model& m, const BatchLossFn& loss_fn, double eps,
                      std::size_t max_params_per_block, uint64_t seed, bool head_only) {
    if (eps < 1e-7 || eps > 1e-3) fail(errc::config, "gradient_check eps outside [1e-7, 1e-3]");
    auto [loss0, analytic] = loss_fn(m);
    (void)loss0;

    Model probe = m;
    std::vector<ParamBlock> blocks = param_blocks(probe);
    Rng rng(seed ^ 0x5bd1e995u);
    double worst = 0.0;
    std::size_t first_block = head_only ? blocks.size() - 2 : 0;
    for (std::size_t b = first_block; b < blocks.size(); ++b) {
        std::size_t n = blocks[b].size;
        if (n == 0) continue;
        std::vector<std::size_t> idx;
        if (n <= max_params_per_block) {
            idx.resize(n);
            for (std::size_t j = 0; j < n; ++j) idx[j] = j;
        } else {
            idx.reserve(max_params_per_block);
            for (std::size_t j = 0; j < max_params_per_block; ++j) idx.push_back(rng.index(n));
        }
        for (std::size_t j : idx) {
            double saved = blocks[b].data[j];
            blocks[b].data[j] = saved + eps;
            double lp = loss_fn(probe).first;
            blocks[b].data[j] = saved - eps;
            double lm = loss_fn(probe).first;
            blocks[b].data[j] = saved;
            double g_fd = (lp - lm) / (2.0 * eps);
            double g_a = analytic.blocks[b][j];
            double rel = std::abs(g_a - g_fd) / std::max({1.0, std::abs(g_a), std::abs(g_fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace cil
