#include "cil/reference.hpp"

#include <cmath>

#include "cil/errors.hpp"

namespace cil {

namespace {

double ref_sigmoid(double z) {
    double s = 1.0 / (1.0 + std::exp(-z));
    if (s < 1e-12) s = 1e-12;
    if (s > 1.0 - 1e-12) s = 1.0 - 1e-12;
    return s;
}

// forward keeping per-layer pre/post activations
void ref_forward_full(const Model& m, const std::vector<double>& x,
                      std::vector<std::vector<double>>& pre,
                      std::vector<std::vector<double>>& post, std::vector<double>& scores) {
    pre.clear();
    post.clear();
    post.push_back(x);
    std::vector<double> a = x;
    for (const DenseLayer& l : m.extractor) {
        std::vector<double> z(l.out_dim);
        for (uint32_t j = 0; j < l.out_dim; ++j) z[j] = l.bias[j];
        // column-major accumulation, unlike the primary path
        for (uint32_t i = 0; i < l.in_dim; ++i)
            for (uint32_t j = 0; j < l.out_dim; ++j) z[j] += a[i] * l.weights[j * l.in_dim + i];
        pre.push_back(z);
        std::vector<double> h(l.out_dim);
        for (uint32_t j = 0; j < l.out_dim; ++j)
            h[j] = (l.act == Activation::relu && z[j] < 0.0) ? 0.0 : z[j];
        post.push_back(h);
        a = h;
    }
    scores.assign(m.n_classes, 0.0);
    std::vector<double> logits(m.n_classes);
    for (uint32_t c = 0; c < m.n_classes; ++c) logits[c] = m.head.bias[c];
    for (uint32_t i = 0; i < m.feature_dim; ++i)
        for (uint32_t c = 0; c < m.n_classes; ++c)
            logits[c] += a[i] * m.head.weights[c * m.feature_dim + i];
    for (uint32_t c = 0; c < m.n_classes; ++c) scores[c] = ref_sigmoid(logits[c]);
}

// accumulates weight * dLoss/dtheta for one sample into flat grad arrays
void ref_backprop(const Model& m, const std::vector<double>& x, uint32_t label,
                  const std::vector<double>* teacher_scores, const LossParams& p,
                  double weight, double& loss_cls, double& loss_dis, Gradients& grads) {
    std::vector<std::vector<double>> pre, post;
    std::vector<double> scores;
    ref_forward_full(m, x, pre, post, scores);

    const double eps = 1e-7;
    std::vector<double> dlogit(m.n_classes, 0.0);
    for (uint32_t k = 1; k <= p.n_total; ++k) {
        double s = scores[k - 1];
        double sc = s;
        if (sc < eps) sc = eps;
        if (sc > 1.0 - eps) sc = 1.0 - eps;
        if (k > p.n_old) {
            double target = (k == label) ? 1.0 : 0.0;
            loss_cls += weight * (-(target * std::log(sc) + (1.0 - target) * std::log(1.0 - sc)));
            dlogit[k - 1] = s - target;
        } else if (teacher_scores) {
            double target = (*teacher_scores)[k - 1];
            loss_dis += weight * (-(target * std::log(sc) + (1.0 - target) * std::log(1.0 - sc)));
            dlogit[k - 1] = p.lambda * (s - target);
        }
    }

    std::size_t nb = grads.blocks.size();
    std::vector<double>& ghw = grads.blocks[nb - 2];
    std::vector<double>& ghb = grads.blocks[nb - 1];
    const std::vector<double>& feat = post.back();
    std::vector<double> delta(m.feature_dim, 0.0);
    for (uint32_t c = 0; c < m.n_classes; ++c) {
        ghb[c] += weight * dlogit[c];
        for (uint32_t i = 0; i < m.feature_dim; ++i) {
            ghw[c * m.feature_dim + i] += weight * dlogit[c] * feat[i];
            delta[i] += dlogit[c] * m.head.weights[c * m.feature_dim + i];
        }
    }
    for (std::size_t li = m.extractor.size(); li-- > 0;) {
        const DenseLayer& l = m.extractor[li];
        std::vector<double> masked(l.out_dim);
        for (uint32_t j = 0; j < l.out_dim; ++j)
            masked[j] = (l.act == Activation::relu && pre[li][j] <= 0.0) ? 0.0 : delta[j];
        std::vector<double>& gw = grads.blocks[2 * li];
        std::vector<double>& gb = grads.blocks[2 * li + 1];
        for (uint32_t j = 0; j < l.out_dim; ++j) {
            gb[j] += weight * masked[j];
            for (uint32_t i = 0; i < l.in_dim; ++i)
                gw[j * l.in_dim + i] += weight * masked[j] * post[li][i];
        }
        std::vector<double> next_delta(l.in_dim, 0.0);
        for (uint32_t i = 0; i < l.in_dim; ++i)
            for (uint32_t j = 0; j < l.out_dim; ++j)
                next_delta[i] += masked[j] * l.weights[j * l.in_dim + i];
        delta = std::move(next_delta);
    }
}

}  // namespace

std::vector<double> reference_forward_scores(const Model& m, const std::vector<double>& x) {
    if (x.size() != m.input_dim) fail(errc::shape, "reference forward: input dim mismatch");
    std::vector<std::vector<double>> pre, post;
    std::vector<double> scores;
    ref_forward_full(m, x, pre, post, scores);
    return scores;
}

BatchLossValue reference_duplet_loss(const Model& model, const Model* teacher,
                                     const std::vector<DupletPair>& duplets,
                                     const std::vector<Sample>& replay, const LossParams& p) {
    if (duplets.empty() && replay.empty())
        fail(errc::empty_input, "reference duplet loss: empty batch");
    BatchLossValue out;
    out.grads = Gradients::zeros_like(model);

    double w_replay = replay.empty() ? 0.0 : 1.0 / static_cast<double>(replay.size());
    for (const Sample& s : replay) {
        std::vector<double> tscores;
        const std::vector<double>* tptr = nullptr;
        if (teacher) {
            tscores = reference_forward_scores(*teacher, s.x.data);
            tptr = &tscores;
        }
        ref_backprop(model, s.x.data, s.label, tptr, p, w_replay, out.breakdown.cls,
                     out.breakdown.dis, out.grads);
    }
    double w_dup = duplets.empty() ? 0.0 : 1.0 / static_cast<double>(2 * duplets.size());
    for (const DupletPair& d : duplets) {
        for (const Tensor* x : {&d.real, &d.aux}) {
            std::vector<double> tscores;
            const std::vector<double>* tptr = nullptr;
            if (teacher) {
                tscores = reference_forward_scores(*teacher, x->data);
                tptr = &tscores;
            }
            ref_backprop(model, x->data, d.label, tptr, p, w_dup, out.breakdown.cls,
                         out.breakdown.dis, out.grads);
        }
    }
    out.breakdown.total = out.breakdown.cls + p.lambda * out.breakdown.dis;
    out.loss = out.breakdown.total;
    return out;
}

double reference_evaluate_head(const Model& m, const std::vector<Sample>& test_set) {
    if (test_set.empty()) fail(errc::protocol, "reference evaluate: empty test set");
    std::size_t correct = 0;
    for (const Sample& s : test_set) {
        std::vector<double> scores = reference_forward_scores(m, s.x.data);
        uint32_t best = 0;
        for (uint32_t c = 1; c < m.n_classes; ++c)
            if (scores[c] > scores[best]) best = c;
        if (best + 1 == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

std::pair<std::vector<double>, std::vector<double>> reference_covariance(
    const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) fail(errc::empty_input, "reference covariance: no rows");
    const std::size_t d = rows[0].size();
    const double n = static_cast<double>(rows.size());
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < d; ++i) mean[i] += r[i];
    for (std::size_t i = 0; i < d; ++i) mean[i] /= n;
    std::vector<double> cov(d * d, 0.0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
    for (double& v : cov) v /= n;
    return {mean, cov};
}

}  // namespace cil
