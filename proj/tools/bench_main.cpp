// Compares the OpenMP batch kernels against the serial reference
// implementations on synthetic workloads and verifies they agree.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cil/codec.hpp"
#include "cil/eval.hpp"
#include "cil/losses.hpp"
#include "cil/nn.hpp"
#include "cil/reference.hpp"
#include "cil/rng.hpp"

namespace {

using namespace cil;

class Timer {
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();

public:
    double ms() const {
        auto end = std::chrono::steady_clock::now();
        return std::chrono::duration<double, std::milli>(end - start_).count();
    }
};

double grad_max_diff(const Gradients& a, const Gradients& b) {
    double worst = 0.0;
    for (std::size_t blk = 0; blk < a.blocks.size(); ++blk)
        for (std::size_t j = 0; j < a.blocks[blk].size(); ++j)
            worst = std::max(worst, std::abs(a.blocks[blk][j] - b.blocks[blk][j]));
    return worst;
}

void report(const char* kernel, double serial_ms, double parallel_ms, double parity) {
    std::printf("%-18s serial %9.2f ms   parallel %9.2f ms   speedup %5.2fx   max|diff| %.3g\n",
                kernel, serial_ms, parallel_ms, serial_ms / parallel_ms, parity);
}

}  // namespace

int main(int argc, char** argv) {
    uint32_t dim = 64, classes = 20, batch = 4096, reps = 3;
    if (argc > 1) dim = static_cast<uint32_t>(std::stoul(argv[1]));
    if (argc > 2) classes = static_cast<uint32_t>(std::stoul(argv[2]));
    if (argc > 3) batch = static_cast<uint32_t>(std::stoul(argv[3]));
    if (argc > 4) reps = static_cast<uint32_t>(std::stoul(argv[4]));

#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not enabled; both paths run serially\n");
#endif
    std::printf("dim=%u classes=%u batch=%u reps=%u\n\n", dim, classes, batch, reps);

    Rng rng(7);
    Model model = make_model(dim, {128, 128}, classes, rng);
    Model teacher = make_model(dim, {128, 128}, classes / 2, rng);

    std::vector<Sample> test(batch);
    for (Sample& s : test) {
        std::vector<double> x(dim);
        for (double& v : x) v = rng.normal();
        s.x = Tensor::vector(std::move(x));
        s.label = 1 + static_cast<uint32_t>(rng.index(classes));
    }

    // ---- batch evaluation (forward + argmax over the test set) ----
    {
        double serial_ms = 0.0, parallel_ms = 0.0, acc_s = 0.0, acc_p = 0.0;
        for (uint32_t r = 0; r < reps; ++r) {
            Timer ts;
            acc_s = reference_evaluate_head(model, test);
            serial_ms += ts.ms();
            Timer tp;
            acc_p = evaluate(model, test, ClassifierKind::head);
            parallel_ms += tp.ms();
        }
        report("evaluate", serial_ms / reps, parallel_ms / reps, std::abs(acc_s - acc_p));
    }

    // ---- duplet objective: loss + full gradients ----
    {
        std::vector<DupletPair> duplets;
        std::vector<Sample> replay;
        for (uint32_t i = 0; i < batch / 8; ++i) {
            std::vector<double> x(dim), a(dim);
            for (uint32_t j = 0; j < dim; ++j) {
                x[j] = rng.normal();
                a[j] = x[j] + 0.05 * rng.normal();
            }
            duplets.push_back({Tensor::vector(x), Tensor::vector(a),
                               classes / 2 + 1 + static_cast<uint32_t>(rng.index(classes / 2))});
        }
        for (uint32_t i = 0; i < batch / 8; ++i) {
            std::vector<double> x(dim);
            for (double& v : x) v = rng.normal();
            replay.push_back({Tensor::vector(x),
                              1 + static_cast<uint32_t>(rng.index(classes / 2))});
        }
        LossParams p;
        p.n_old = classes / 2;
        p.n_total = classes;

        double serial_ms = 0.0, parallel_ms = 0.0, parity = 0.0;
        for (uint32_t r = 0; r < reps; ++r) {
            Timer ts;
            BatchLossValue ref = reference_duplet_loss(model, &teacher, duplets, replay, p);
            serial_ms += ts.ms();
            Timer tp;
            BatchLossValue par = duplet_batch_loss(model, &teacher, duplets, replay, p);
            parallel_ms += tp.ms();
            parity = std::max({parity, std::abs(ref.loss - par.loss),
                               grad_max_diff(ref.grads, par.grads)});
        }
        report("duplet grad", serial_ms / reps, parallel_ms / reps, parity);
    }

    // ---- streaming PCA fit (scatter accumulation + eigensolve) ----
    {
        std::vector<Tensor> data;
        std::vector<std::vector<double>> rows;
        for (uint32_t i = 0; i < batch; ++i) {
            std::vector<double> x(dim);
            for (double& v : x) v = rng.normal();
            rows.push_back(x);
            data.push_back(Tensor::vector(std::move(x)));
        }
        Codec pca = make_pca_codec(dim, dim / 3);
        double serial_ms = 0.0, parallel_ms = 0.0, parity = 0.0;
        Codec fitted;
        for (uint32_t r = 0; r < reps; ++r) {
            Timer ts;
            auto [mean, cov] = reference_covariance(rows);
            serial_ms += ts.ms();
            Timer tp;
            fitted = fit_incremental(pca, data);
            parallel_ms += tp.ms();
            for (uint32_t i = 0; i < dim; ++i)
                parity = std::max(parity, std::abs(mean[i] - fitted.mean[i]));
        }
        report("pca fit", serial_ms / reps, parallel_ms / reps, parity);
    }
    return 0;
}
