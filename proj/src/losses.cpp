#include "cil/losses.hpp"

#include <cmath>

#include "cil/errors.hpp"

namespace cil {

namespace {

constexpr double kEps = 1e-7;

// dL/dlogit of BCE through the sigmoid: score - target, bounded everywhere.
// The eps clamp protects only the logged loss value; zeroing the gradient in
// the clamp region would silence confidently-wrong predictions for good.
double bce_logit_grad(double score, double target) { return score - target; }

// Loss parts and per-class logit gradient for one sample. ca_mode switches to
// the classifier-adaptation objective: BCE against indicator targets over the
// full class range, no distillation.
struct SamplePartial {
    double cls = 0.0;
    double dis = 0.0;
};

SamplePartial eval_sample(const std::vector<double>& scores,
                          const std::vector<double>* teacher, uint32_t label,
                          const LossParams& p, bool ca_mode, std::vector<double>& dlogits) {
    SamplePartial out;
    dlogits.assign(p.n_total, 0.0);
    if (ca_mode) {
        for (uint32_t k = 1; k <= p.n_total; ++k) {
            double target = (label == k) ? 1.0 : 0.0;
            out.cls += entropy(scores[k - 1], target);
            dlogits[k - 1] = bce_logit_grad(scores[k - 1], target);
        }
        return out;
    }
    for (uint32_t k = p.n_old + 1; k <= p.n_total; ++k) {
        double target = (label == k) ? 1.0 : 0.0;
        out.cls += entropy(scores[k - 1], target);
        dlogits[k - 1] = bce_logit_grad(scores[k - 1], target);
    }
    if (teacher) {
        for (uint32_t k = 1; k <= p.n_old; ++k) {
            out.dis += entropy(scores[k - 1], (*teacher)[k - 1]);
            dlogits[k - 1] = p.lambda * bce_logit_grad(scores[k - 1], (*teacher)[k - 1]);
        }
    }
    return out;
}

struct BatchItem {
    const std::vector<double>* x;
    uint32_t label;
    double weight;
};

// Samples are grouped into fixed-size chunks; each chunk accumulates its
// samples in index order, and chunks are reduced in ascending order. The
// grouping depends only on the batch, so results are bit-identical for any
// thread count.
constexpr std::size_t kChunk = 8;

BatchLossValue batch_eval(const Model& model, const Model* teacher,
                          const std::vector<BatchItem>& items, const LossParams& p,
                          bool ca_mode, bool head_only) {
    // Validate every shape before entering the parallel region; nothing below
    // may throw from a worker thread.
    for (const BatchItem& item : items)
        if (item.x->size() != model.input_dim)
            fail(errc::shape, "batch sample length does not match model input dim");
    if (teacher && teacher->input_dim != model.input_dim)
        fail(errc::shape, "teacher input dim does not match model input dim");
    if (teacher && teacher->n_classes < p.n_old)
        fail(errc::shape, "teacher has fewer classes than the old-class range");

    const std::size_t n = items.size();
    const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<Gradients> chunk_grads(n_chunks);
    std::vector<SamplePartial> parts(n);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
        Gradients& grads = chunk_grads[c];
        grads = Gradients::zeros_like(model);
        const std::size_t lo = static_cast<std::size_t>(c) * kChunk;
        const std::size_t hi = std::min(lo + kChunk, n);
        std::vector<double> dlogits, teacher_scores;
        for (std::size_t i = lo; i < hi; ++i) {
            const BatchItem& item = items[i];
            ForwardTrace trace = forward_trace(model, *item.x);
            const std::vector<double>* teacher_ptr = nullptr;
            if (teacher && !ca_mode) {
                teacher_scores = forward_scores(*teacher, *item.x);
                teacher_ptr = &teacher_scores;
            }
            parts[i] = eval_sample(trace.scores, teacher_ptr, item.label, p, ca_mode, dlogits);
            if (head_only) {
                // head gradient only: dW[c] = g * features, db[c] = g
                std::size_t nb = grads.blocks.size();
                std::vector<double>& gw = grads.blocks[nb - 2];
                std::vector<double>& gb = grads.blocks[nb - 1];
                const std::vector<double>& feat = trace.post.back();
                for (uint32_t k = 0; k < model.n_classes; ++k) {
                    double g = item.weight * dlogits[k];
                    gb[k] += g;
                    double* grow = gw.data() + static_cast<std::size_t>(k) * model.feature_dim;
                    for (uint32_t f = 0; f < model.feature_dim; ++f) grow[f] += g * feat[f];
                }
            } else {
                backward_into(model, trace, dlogits, item.weight, grads);
            }
        }
    }

    BatchLossValue out;
    out.grads = Gradients::zeros_like(model);
    for (std::size_t i = 0; i < n; ++i) {
        out.breakdown.cls += items[i].weight * parts[i].cls;
        out.breakdown.dis += items[i].weight * parts[i].dis;
    }
    out.breakdown.total = out.breakdown.cls + p.lambda * out.breakdown.dis;
    out.loss = out.breakdown.total;

    for (std::size_t b = 0; b < out.grads.blocks.size(); ++b) {
        std::vector<double>& dst = out.grads.blocks[b];
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(dst.size()); ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < n_chunks; ++c) acc += chunk_grads[c].blocks[b][j];
            dst[j] = acc;
        }
    }
    return out;
}

}  // namespace

void LossParams::validate() const {
    if (lambda < 0.0) fail(errc::config, "lambda must be non-negative");
    if (n_total == 0) fail(errc::config, "loss params need at least one class");
    if (n_old > n_total) fail(errc::config, "old-class range exceeds total class count");
}

double entropy(double y_hat, double y) {
    double c = y_hat;
    if (c < kEps) c = kEps;
    if (c > 1.0 - kEps) c = 1.0 - kEps;
    return -(y * std::log(c) + (1.0 - y) * std::log(1.0 - c));
}

LossBreakdown sample_loss(const std::vector<double>& scores_t,
                          const std::vector<double>* teacher_scores, uint32_t label,
                          const LossParams& p) {
    p.validate();
    if (scores_t.size() != p.n_total)
        fail(errc::shape, "score vector length does not match class count");
    if (teacher_scores && teacher_scores->size() != p.n_old)
        fail(errc::shape, "teacher score length does not match old-class count");
    if (label < 1 || label > p.n_total)
        fail(errc::label, "label " + std::to_string(label) + " outside 1.." +
                              std::to_string(p.n_total));
    LossBreakdown out;
    for (uint32_t k = p.n_old + 1; k <= p.n_total; ++k)
        out.cls += entropy(scores_t[k - 1], label == k ? 1.0 : 0.0);
    if (teacher_scores)
        for (uint32_t k = 1; k <= p.n_old; ++k)
            out.dis += entropy(scores_t[k - 1], (*teacher_scores)[k - 1]);
    out.total = out.cls + p.lambda * out.dis;
    return out;
}

BatchLossValue duplet_batch_loss(const Model& model, const Model* teacher,
                                 const std::vector<DupletPair>& duplets,
                                 const std::vector<Sample>& replay, const LossParams& p) {
    p.validate();
    if (duplets.empty() && replay.empty())
        fail(errc::empty_input, "duplet batch loss needs duplets or replay samples");
    std::vector<BatchItem> items;
    items.reserve(replay.size() + 2 * duplets.size());
    double w_replay = replay.empty() ? 0.0 : 1.0 / static_cast<double>(replay.size());
    for (const Sample& s : replay) {
        if (s.label < 1 || s.label > p.n_total)
            fail(errc::label, "replay label outside class range");
        items.push_back({&s.x.data, s.label, w_replay});
    }
    double w_dup = duplets.empty() ? 0.0 : 1.0 / static_cast<double>(2 * duplets.size());
    for (const DupletPair& d : duplets) {
        if (d.label <= p.n_old || d.label > p.n_total)
            fail(errc::label, "duplet label outside new-class range");
        items.push_back({&d.real.data, d.label, w_dup});
        items.push_back({&d.aux.data, d.label, w_dup});
    }
    return batch_eval(model, teacher, items, p, /*ca_mode=*/false, /*head_only=*/false);
}

BatchLossValue ca_loss(const Model& model, const std::vector<Sample>& samples) {
    if (samples.empty()) fail(errc::empty_input, "classifier adaptation needs samples");
    LossParams p;
    p.lambda = 0.0;
    p.n_old = 0;
    p.n_total = model.n_classes;
    p.validate();
    std::vector<BatchItem> items;
    items.reserve(samples.size());
    double w = 1.0 / static_cast<double>(samples.size());
    for (const Sample& s : samples) {
        if (s.label < 1 || s.label > model.n_classes)
            fail(errc::label, "adaptation label outside class range");
        items.push_back({&s.x.data, s.label, w});
    }
    return batch_eval(model, nullptr, items, p, /*ca_mode=*/true, /*head_only=*/true);
}

}  // namespace cil
