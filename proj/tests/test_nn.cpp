#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cil/errors.hpp"
#include "cil/nn.hpp"
#include "cil/reference.hpp"

using namespace cil;

namespace {

void zero_params(Model& m) {
    for (ParamBlock& b : param_blocks(m))
        for (std::size_t i = 0; i < b.size; ++i) b.data[i] = 0.0;
}

std::vector<double> random_input(Rng& rng, uint32_t dim) {
    std::vector<double> x(dim);
    for (double& v : x) v = rng.normal();
    return x;
}

bool params_equal(const Model& a, const Model& b) {
    Model ma = a, mb = b;
    auto ba = param_blocks(ma), bb = param_blocks(mb);
    if (ba.size() != bb.size()) return false;
    for (std::size_t i = 0; i < ba.size(); ++i) {
        if (ba[i].size != bb[i].size) return false;
        for (std::size_t j = 0; j < ba[i].size; ++j)
            if (ba[i].data[j] != bb[i].data[j]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("zero-weight model scores 0.5 everywhere") {
    Rng rng(1);
    Model m = make_model(4, {8}, 3, rng);
    zero_params(m);
    auto scores = forward_scores(m, {0.3, -1.2, 5.0, 0.0});
    REQUIRE(scores.size() == 3);
    for (double s : scores) CHECK(s == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("orthogonal head row scores 0.5 through an identity extractor") {
    Rng rng(2);
    Model m = make_model(2, {2}, 1, rng);
    // identity extractor layer
    m.extractor[0].act = Activation::identity;
    m.extractor[0].weights = {1.0, 0.0, 0.0, 1.0};
    m.extractor[0].bias = {0.0, 0.0};
    // head row orthogonal to the input
    m.head.weights = {1.0, 1.0};
    m.head.bias = {0.0};
    auto scores = forward_scores(m, {1.0, -1.0});
    CHECK(scores[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("forward matches the independently coded reference") {
    for (uint64_t seed : {3u, 4u, 5u}) {
        Rng rng(seed);
        Model m = make_model(6, {10, 7}, 5, rng);
        for (int i = 0; i < 10; ++i) {
            auto x = random_input(rng, 6);
            auto a = forward_scores(m, x);
            auto b = reference_forward_scores(m, x);
            for (std::size_t c = 0; c < a.size(); ++c)
                CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-12));
        }
    }
}

TEST_CASE("forward rejects mismatched input dims") {
    Rng rng(6);
    Model m = make_model(4, {}, 2, rng);
    CHECK_THROWS_AS(forward_scores(m, {1.0, 2.0}), error);
    try {
        forward_scores(m, {1.0, 2.0});
    } catch (const error& e) {
        CHECK(e.kind() == errc::shape);
    }
}

TEST_CASE("features equal input for an empty extractor and compose with the head") {
    Rng rng(7);
    Model m = make_model(5, {}, 3, rng);
    auto x = random_input(rng, 5);
    auto feat = extract_features(m, x);
    CHECK(feat == x);

    Model deep = make_model(5, {12, 9}, 3, rng);
    auto f = extract_features(deep, x);
    CHECK(f.size() == 9);
    CHECK(deep.feature_dim == 9);
    auto scores = forward_scores(deep, x);
    for (uint32_t c = 0; c < 3; ++c) {
        double z = deep.head.bias[c];
        for (uint32_t i = 0; i < 9; ++i) z += deep.head.weights[c * 9 + i] * f[i];
        double sig = 1.0 / (1.0 + std::exp(-z));
        CHECK(scores[c] == doctest::Approx(sig).epsilon(1e-12));
    }
}

TEST_CASE("plain SGD step is exactly w - lr*g") {
    Rng rng(8);
    Model m = make_model(3, {4}, 2, rng);
    Model before = m;
    SgdConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    SgdOptimizer opt(m, cfg);

    Gradients g = Gradients::zeros_like(m);
    Rng grng(9);
    for (auto& block : g.blocks)
        for (double& v : block) v = grng.normal();

    opt.step(m, g, cfg.learning_rate);
    auto bb = param_blocks(before);
    auto mb = param_blocks(m);
    for (std::size_t b = 0; b < bb.size(); ++b)
        for (std::size_t j = 0; j < bb[b].size; ++j)
            CHECK(mb[b].data[j] == bb[b].data[j] - 0.05 * g.blocks[b][j]);
}

TEST_CASE("weight decay with zero gradient shrinks weights exactly") {
    Rng rng(10);
    Model m = make_model(3, {}, 2, rng);
    Model before = m;
    SgdConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.01;
    SgdOptimizer opt(m, cfg);
    Gradients g = Gradients::zeros_like(m);
    opt.step(m, g, cfg.learning_rate);
    auto bb = param_blocks(before);
    auto mb = param_blocks(m);
    for (std::size_t b = 0; b < bb.size(); ++b)
        for (std::size_t j = 0; j < bb[b].size; ++j)
            CHECK(mb[b].data[j] == bb[b].data[j] - 0.1 * 0.01 * bb[b].data[j]);
}

TEST_CASE("a step on a 1-D quadratic decreases the loss") {
    Rng rng(11);
    Model m = make_model(1, {}, 1, rng);
    SgdConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    SgdOptimizer opt(m, cfg);
    auto loss_fn = [](const Model& model) {
        double w = model.head.weights[0];
        Gradients g = Gradients::zeros_like(model);
        g.blocks[0][0] = 2.0 * (w - 3.0);
        return std::make_pair((w - 3.0) * (w - 3.0), std::move(g));
    };
    double before = loss_fn(m).first;
    backward_and_step(m, loss_fn, opt, cfg.learning_rate);
    CHECK(loss_fn(m).first < before);
}

TEST_CASE("backward_and_step rejects non-finite gradients naming the block") {
    Rng rng(12);
    Model m = make_model(2, {3}, 1, rng);
    SgdConfig cfg;
    SgdOptimizer opt(m, cfg);
    auto bad = [](const Model& model) {
        Gradients g = Gradients::zeros_like(model);
        g.blocks[1][0] = std::numeric_limits<double>::quiet_NaN();
        return std::make_pair(0.0, std::move(g));
    };
    try {
        backward_and_step(m, bad, opt, 0.1);
        FAIL("expected numeric error");
    } catch (const error& e) {
        CHECK(e.kind() == errc::numeric);
        CHECK(std::string(e.what()).find("extractor[0].bias") != std::string::npos);
    }
}

TEST_CASE("gradient check flags a corrupted gradient") {
    Rng rng(13);
    Model m = make_model(3, {}, 2, rng);
    auto x = random_input(rng, 3);
    // simple quadratic in the head weights, gradient doubled on purpose
    auto corrupted = [&](const Model& model) {
        Gradients g = Gradients::zeros_like(model);
        double loss = 0.0;
        for (std::size_t j = 0; j < model.head.weights.size(); ++j) {
            loss += model.head.weights[j] * model.head.weights[j];
            g.blocks[0][j] = 2.0 * 2.0 * model.head.weights[j];
        }
        (void)x;
        return std::make_pair(loss, std::move(g));
    };
    double err = gradient_check(m, corrupted, 1e-5);
    CHECK(err > 0.3);
}

TEST_CASE("snapshots are value-independent of the original") {
    Rng rng(14);
    Model m = make_model(4, {6}, 2, rng);
    Model snap = clone_snapshot(m);
    auto x = random_input(rng, 4);
    CHECK(forward_scores(m, x) == forward_scores(snap, x));

    auto before = forward_scores(snap, x);
    SgdConfig cfg;
    SgdOptimizer opt(m, cfg);
    Gradients g = Gradients::zeros_like(m);
    for (auto& block : g.blocks)
        for (double& v : block) v = 0.5;
    opt.step(m, g, 0.1);
    CHECK(forward_scores(snap, x) == before);
    CHECK_FALSE(params_equal(m, snap));

    Model snap2 = clone_snapshot(snap);
    CHECK(params_equal(snap, snap2));
}

TEST_CASE("identical seeds give bit-identical parameter trajectories") {
    auto run = [] {
        Rng rng(42);
        Model m = make_model(4, {8}, 3, rng);
        SgdConfig cfg;
        SgdOptimizer opt(m, cfg);
        Rng drng(43);
        for (int step = 0; step < 20; ++step) {
            Gradients g = Gradients::zeros_like(m);
            for (auto& block : g.blocks)
                for (double& v : block) v = drng.normal() * 0.01;
            opt.step(m, g, cfg.lr_at_epoch(static_cast<uint32_t>(step)));
        }
        return m;
    };
    CHECK(params_equal(run(), run()));
}

TEST_CASE("forward scores stay strictly inside (0,1)") {
    Rng rng(15);
    for (int trial = 0; trial < 50; ++trial) {
        Model m = make_model(3, {5}, 4, rng);
        // exaggerate weights to push logits to extremes
        for (ParamBlock& b : param_blocks(m))
            for (std::size_t j = 0; j < b.size; ++j) b.data[j] *= 200.0;
        auto s = forward_scores(m, random_input(rng, 3));
        for (double v : s) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("head-only steps leave the extractor bit-identical") {
    Rng rng(16);
    Model m = make_model(4, {8, 8}, 3, rng);
    Model before = m;
    SgdConfig cfg;
    SgdOptimizer opt(m, cfg);
    Gradients g = Gradients::zeros_like(m);
    for (auto& block : g.blocks)
        for (double& v : block) v = 1.0;
    opt.step_head_only(m, g, 0.1);
    for (std::size_t li = 0; li < m.extractor.size(); ++li) {
        CHECK(m.extractor[li].weights == before.extractor[li].weights);
        CHECK(m.extractor[li].bias == before.extractor[li].bias);
    }
    CHECK(m.head.weights != before.head.weights);
}

TEST_CASE("sgd config validation") {
    SgdConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), error);
    cfg.learning_rate = 0.1;
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), error);
    cfg.momentum = 0.9;
    cfg.schedule = {{3, 1.0}};
    CHECK_THROWS_AS(cfg.validate(), error);
    cfg.schedule = {{3, 5.0}, {5, 5.0}};
    cfg.validate();
    CHECK(cfg.lr_at_epoch(0) == doctest::Approx(0.1));
    CHECK(cfg.lr_at_epoch(3) == doctest::Approx(0.02));
    CHECK(cfg.lr_at_epoch(7) == doctest::Approx(0.004));
}
