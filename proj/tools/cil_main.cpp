// Experiment driver: runs single configs, ablation sweeps, gradient checks,
// synthetic dataset generation and feature projections.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "cil/errors.hpp"
#include "cil/eval.hpp"
#include "cil/losses.hpp"
#include "cil/reference.hpp"

namespace {

using namespace cil;

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct Overlay {
    std::string config_path, out_dir, mode, codec_kind, fidelity, classifier, dataset;
    std::string hidden, dims, seeds;
    uint64_t seed = 0, data_seed = 0, budget_units = 0, budget_samples = 0;
    double lambda = -1.0, lr = -1.0, momentum = -1.0, weight_decay = -1.0;
    double separation = -1.0;
    uint32_t epochs = 0, epochs_ca = 0, batch_pairs = 0, ds_factor = 0;
    uint32_t classes_per_session = 0, classes = 0, per_class_train = 0, per_class_test = 0;
    bool ca_vary = false;

    CLI::App* attach(CLI::App* cmd, bool with_dataset = true) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--mode", mode,
                        "aux_duplet_ca|aux_duplet|aux_plain|real_exemplar|no_exemplar");
        cmd->add_option("--seed", seed, "seed for data, stream and training");
        cmd->add_option("--data-seed", data_seed, "separate dataset seed");
        cmd->add_option("--lambda", lambda, "distillation balance scalar");
        cmd->add_option("--epochs", epochs, "duplet training epochs");
        cmd->add_option("--epochs-ca", epochs_ca, "classifier adaptation epochs");
        cmd->add_option("--batch-pairs", batch_pairs, "duplet pairs per step");
        cmd->add_option("--lr", lr, "initial learning rate");
        cmd->add_option("--momentum", momentum, "SGD momentum");
        cmd->add_option("--weight-decay", weight_decay, "SGD weight decay");
        cmd->add_flag("--ca-vary-extractor", ca_vary, "let CA update the extractor too");
        cmd->add_option("--codec", codec_kind, "identity|pca|downsample");
        cmd->add_option("--fidelity", fidelity, "requested cost ratio, e.g. 1/3");
        cmd->add_option("--ds-factor", ds_factor, "downsample factor per side");
        cmd->add_option("--budget-units", budget_units, "memory budget in scalar units");
        cmd->add_option("--budget-samples", budget_samples, "memory budget in full samples");
        cmd->add_option("--classes-per-session", classes_per_session, "new classes per session");
        cmd->add_option("--classifier", classifier, "head|ncm");
        cmd->add_option("--hidden", hidden, "hidden widths, e.g. 64,64");
        if (with_dataset) {
            cmd->add_option("--dataset", dataset, "dataset container prefix");
            cmd->add_option("--classes", classes, "synth class count");
            cmd->add_option("--dims", dims, "synth dims: d or h,w,c");
            cmd->add_option("--per-class-train", per_class_train, "synth train samples/class");
            cmd->add_option("--per-class-test", per_class_test, "synth test samples/class");
            cmd->add_option("--separation", separation, "synth class-mean radius");
        }
        return cmd;
    }

    RunConfig build() const {
        RunConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) fail(errc::config, "cannot open config " + config_path);
            std::stringstream ss;
            ss << in.rdbuf();
            cfg = RunConfig::from_json_text(ss.str());
        }
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!mode.empty()) cfg.train.mode = train_mode_from_name(mode);
        if (seed) {
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }
        if (data_seed) cfg.synth.seed = data_seed;
        if (lambda >= 0.0) cfg.train.lambda = lambda;
        if (epochs) cfg.train.epochs_duplet = epochs;
        if (epochs_ca) cfg.train.epochs_ca = epochs_ca;
        if (batch_pairs) cfg.train.batch_pairs = batch_pairs;
        if (lr > 0.0) cfg.train.sgd.learning_rate = lr;
        if (momentum >= 0.0) cfg.train.sgd.momentum = momentum;
        if (weight_decay >= 0.0) cfg.train.sgd.weight_decay = weight_decay;
        if (ca_vary) cfg.train.ca_vary_extractor = true;
        if (!codec_kind.empty()) cfg.codec.kind = codec_kind;
        if (!fidelity.empty()) cfg.codec.fidelity = parse_fidelity(fidelity);
        if (ds_factor) cfg.codec.downsample_factor = ds_factor;
        if (budget_units) {
            cfg.budget_units = budget_units;
        } else if (budget_samples) {
            cfg.budget_units = 0;
            cfg.budget_full_samples = budget_samples;
        }
        if (classes_per_session) cfg.classes_per_session = classes_per_session;
        if (!classifier.empty()) cfg.classifier = classifier_kind_from_name(classifier);
        if (!hidden.empty()) {
            cfg.hidden_widths.clear();
            for (const std::string& w : split_csv(hidden))
                cfg.hidden_widths.push_back(static_cast<uint32_t>(std::stoul(w)));
        }
        if (!dataset.empty()) cfg.dataset_path = dataset;
        if (classes) cfg.synth.class_count = classes;
        if (!dims.empty()) {
            cfg.synth.dims.clear();
            for (const std::string& d : split_csv(dims))
                cfg.synth.dims.push_back(static_cast<uint32_t>(std::stoul(d)));
        }
        if (per_class_train) cfg.synth.per_class_train = per_class_train;
        if (per_class_test) cfg.synth.per_class_test = per_class_test;
        if (separation > 0.0) cfg.synth.separation = separation;

        // CIL_SEED wins over everything
        if (const char* env = std::getenv("CIL_SEED")) {
            uint64_t v = std::strtoull(env, nullptr, 10);
            cfg.train.seed = v;
            cfg.synth.seed = v;
        }
        return cfg;
    }

    std::vector<uint64_t> seed_list(uint64_t fallback) const {
        std::vector<uint64_t> out;
        for (const std::string& s : split_csv(seeds)) out.push_back(std::stoull(s));
        if (out.empty()) out.push_back(fallback);
        return out;
    }
};

void print_metrics(const Metrics& m) {
    for (std::size_t i = 0; i < m.sessions.size(); ++i)
        std::cout << "session " << m.sessions[i] << ": accuracy "
                  << m.per_session_accuracy[i] << ", gap " << m.per_session_gap[i] << "\n";
    std::cout << "average incremental accuracy (t>=2): " << m.average_incremental << "\n";
}

void write_or_print(const std::string& out_dir, const std::string& name,
                    const std::string& text) {
    if (out_dir.empty()) {
        std::cout << text;
        return;
    }
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir + "/" + name, std::ios::binary | std::ios::trunc);
    out << text;
    std::cout << "wrote " << out_dir << "/" << name << "\n";
}

int cmd_run(const Overlay& overlay) {
    RunConfig cfg = overlay.build();
    Metrics m = run_experiment(cfg);
    print_metrics(m);
    if (!cfg.out_dir.empty()) std::cout << "wrote " << cfg.out_dir << "/metrics.csv\n";
    return 0;
}

int run_sweep(const Overlay& overlay, const std::string& values_csv, const std::string& which) {
    RunConfig base = overlay.build();
    std::vector<uint64_t> seeds = overlay.seed_list(base.train.seed);
    std::vector<Metrics> rows;
    for (const std::string& value : split_csv(values_csv)) {
        for (uint64_t s : seeds) {
            RunConfig cfg = base;
            cfg.out_dir.clear();
            cfg.train.seed = s;
            cfg.synth.seed = s;
            if (which == "lambda") {
                cfg.train.lambda = std::stod(value);
            } else if (which == "budget") {
                cfg.budget_units = 0;
                cfg.budget_full_samples = std::stoull(value);
            } else {  // fidelity
                if (cfg.codec.kind != "pca")
                    fail(errc::config, "sweep-fidelity expects the pca codec");
                cfg.codec.fidelity = parse_fidelity(value);
            }
            Metrics m = run_experiment(cfg);
            std::cout << which << "=" << value << " seed=" << s
                      << " average=" << m.average_incremental << " gap=" << m.mean_gap << "\n";
            rows.push_back(std::move(m));
        }
    }
    write_or_print(base.out_dir, "sweep_" + which + ".csv", sweep_csv(rows));
    return 0;
}

int cmd_gradcheck(double eps, uint32_t n_seeds) {
    // every layer depth x loss shape combination on small random instances
    struct Combo {
        const char* name;
        std::vector<uint32_t> hidden;
        bool with_teacher;
        bool ca;
    };
    const std::vector<Combo> combos = {
        {"linear+cls", {}, false, false},
        {"relu1+cls", {8}, false, false},
        {"relu2+cls", {8, 6}, false, false},
        {"linear+cls+dis", {}, true, false},
        {"relu2+cls+dis", {8, 6}, true, false},
        {"relu2+ca", {8, 6}, false, true},
    };
    bool ok = true;
    for (const Combo& combo : combos) {
        double worst = 0.0;
        for (uint32_t seed = 1; seed <= n_seeds; ++seed) {
            Rng rng(seed);
            Model model = make_model(6, combo.hidden, 4, rng);
            Model teacher = make_model(6, combo.hidden, 2, rng);
            LossParams p;
            p.n_old = combo.with_teacher ? 2 : 0;
            p.n_total = 4;
            std::vector<DupletPair> duplets;
            std::vector<Sample> replay, ca_samples;
            for (int i = 0; i < 6; ++i) {
                std::vector<double> x(6), a(6);
                for (int j = 0; j < 6; ++j) {
                    x[j] = rng.normal();
                    a[j] = x[j] + 0.1 * rng.normal();
                }
                uint32_t label = 3 + static_cast<uint32_t>(i % 2);
                duplets.push_back({Tensor::vector(x), Tensor::vector(a), label});
                ca_samples.push_back({Tensor::vector(x), 1 + static_cast<uint32_t>(i % 4)});
                if (combo.with_teacher)
                    replay.push_back({Tensor::vector(a), 1 + static_cast<uint32_t>(i % 2)});
            }
            BatchLossFn fn;
            if (combo.ca) {
                fn = [&](const Model& m) {
                    BatchLossValue v = ca_loss(m, ca_samples);
                    return std::make_pair(v.loss, std::move(v.grads));
                };
            } else {
                const Model* tp = combo.with_teacher ? &teacher : nullptr;
                fn = [&, tp](const Model& m) {
                    BatchLossValue v = duplet_batch_loss(m, tp, duplets, replay, p);
                    return std::make_pair(v.loss, std::move(v.grads));
                };
            }
            worst = std::max(worst, gradient_check(model, fn, eps, 512, seed, combo.ca));
        }
        bool pass = worst < 1e-4;
        ok = ok && pass;
        std::cout << (pass ? "PASS" : "FAIL") << " " << combo.name
                  << " max relative error " << worst << "\n";
    }
    return ok ? 0 : 1;
}

int cmd_synth(const Overlay& overlay, const std::string& out_prefix) {
    RunConfig cfg = overlay.build();
    Dataset ds = synth_generate(cfg.synth);
    save_dataset(ds, out_prefix);
    std::cout << "wrote " << out_prefix << ".train.cild (" << ds.train.size()
              << " samples) and " << out_prefix << ".test.cild (" << ds.test.size()
              << " samples)\n";
    return 0;
}

int cmd_project(const Overlay& overlay) {
    RunConfig cfg = overlay.build();
    std::string out_dir = cfg.out_dir;
    cfg.out_dir.clear();
    if (cfg.train.mode == TrainMode::no_exemplar)
        fail(errc::config, "projection needs an exemplar mode (duplets required)");
    SessionState state;
    std::vector<DupletPair> duplets;
    run_experiment(cfg, &state, &duplets);
    std::vector<TaggedFeature> feats;
    feats.reserve(2 * duplets.size());
    for (const DupletPair& d : duplets) {
        feats.push_back({extract_features(state.model, d.real.data), "real"});
        feats.push_back({extract_features(state.model, d.aux.data), "aux"});
    }
    write_or_print(out_dir, "projection.csv", projection_csv(export_projection(feats)));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-incremental learning with low-fidelity exemplars"};
    app.require_subcommand(1);

    Overlay overlay;
    std::string sweep_values, synth_out;
    double gc_eps = 1e-5;
    uint32_t gc_seeds = 5;

    overlay.attach(app.add_subcommand("run", "run one configured experiment"));
    auto* sl = app.add_subcommand("sweep-lambda", "one run per balance scalar value");
    overlay.attach(sl);
    sl->add_option("--values", sweep_values, "comma list, e.g. 0,0.5,1,2");
    sl->add_option("--seeds", overlay.seeds, "comma list of seeds");
    auto* sb = app.add_subcommand("sweep-budget", "one run per budget (full samples)");
    overlay.attach(sb);
    sb->add_option("--values", sweep_values, "comma list, e.g. 10,20,40");
    sb->add_option("--seeds", overlay.seeds, "comma list of seeds");
    auto* sf = app.add_subcommand("sweep-fidelity", "one run per pca cost ratio");
    overlay.attach(sf);
    sf->add_option("--values", sweep_values, "comma list, e.g. 1/3,1/6,1/12");
    sf->add_option("--seeds", overlay.seeds, "comma list of seeds");
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--eps", gc_eps, "central difference step");
    gc->add_option("--seeds", gc_seeds, "random instances per combination");
    auto* sy = app.add_subcommand("synth", "generate a synthetic dataset container");
    overlay.attach(sy);
    sy->add_option("--out-prefix", synth_out, "output path prefix")->required();
    overlay.attach(app.add_subcommand("project", "2-D feature projection of final duplets"));

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("run")) return cmd_run(overlay);
        if (app.got_subcommand("sweep-lambda"))
            return run_sweep(overlay, sweep_values.empty() ? "0,0.5,1,2" : sweep_values,
                             "lambda");
        if (app.got_subcommand("sweep-budget"))
            return run_sweep(overlay, sweep_values.empty() ? "10,20,40" : sweep_values,
                             "budget");
        if (app.got_subcommand("sweep-fidelity"))
            return run_sweep(overlay, sweep_values.empty() ? "1/3,1/6,1/12" : sweep_values,
                             "fidelity");
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck(gc_eps, gc_seeds);
        if (app.got_subcommand("synth")) return cmd_synth(overlay, synth_out);
        if (app.got_subcommand("project")) return cmd_project(overlay);
    } catch (const cil::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
