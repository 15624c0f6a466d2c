#include "cil/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cil/errors.hpp"

namespace cil {

namespace {

using nlohmann::json;

constexpr uint64_t kTagStream = 0x57;

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

uint32_t argmax_class(const std::vector<double>& scores) {
    uint32_t best = 0;
    for (uint32_t c = 1; c < scores.size(); ++c)
        if (scores[c] > scores[best]) best = c;
    return best + 1;
}

json synth_to_json(const SynthSpec& s) {
    return json{{"class_count", s.class_count},     {"dims", s.dims},
                {"per_class_train", s.per_class_train}, {"per_class_test", s.per_class_test},
                {"separation", s.separation},       {"seed", s.seed}};
}

SynthSpec synth_from_json(const json& j) {
    SynthSpec s;
    s.class_count = j.value("class_count", s.class_count);
    if (j.contains("dims")) s.dims = j.at("dims").get<std::vector<uint32_t>>();
    s.per_class_train = j.value("per_class_train", s.per_class_train);
    s.per_class_test = j.value("per_class_test", s.per_class_test);
    s.separation = j.value("separation", s.separation);
    s.seed = j.value("seed", s.seed);
    return s;
}

json train_to_json(const TrainConfig& t) {
    json schedule = json::array();
    for (const auto& [epoch, divisor] : t.sgd.schedule)
        schedule.push_back(json::array({epoch, divisor}));
    return json{{"mode", train_mode_name(t.mode)},
                {"epochs_duplet", t.epochs_duplet},
                {"epochs_ca", t.epochs_ca},
                {"batch_pairs", t.batch_pairs},
                {"learning_rate", t.sgd.learning_rate},
                {"momentum", t.sgd.momentum},
                {"weight_decay", t.sgd.weight_decay},
                {"lr_schedule", schedule},
                {"ca_lr_scale", t.ca_lr_scale},
                {"ca_vary_extractor", t.ca_vary_extractor},
                {"lambda", t.lambda},
                {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    if (j.contains("mode")) t.mode = train_mode_from_name(j.at("mode").get<std::string>());
    t.epochs_duplet = j.value("epochs_duplet", t.epochs_duplet);
    t.epochs_ca = j.value("epochs_ca", t.epochs_ca);
    t.batch_pairs = j.value("batch_pairs", t.batch_pairs);
    t.sgd.learning_rate = j.value("learning_rate", t.sgd.learning_rate);
    t.sgd.momentum = j.value("momentum", t.sgd.momentum);
    t.sgd.weight_decay = j.value("weight_decay", t.sgd.weight_decay);
    if (j.contains("lr_schedule"))
        for (const auto& pair : j.at("lr_schedule"))
            t.sgd.schedule.emplace_back(pair.at(0).get<uint32_t>(), pair.at(1).get<double>());
    t.ca_lr_scale = j.value("ca_lr_scale", t.ca_lr_scale);
    t.ca_vary_extractor = j.value("ca_vary_extractor", t.ca_vary_extractor);
    t.lambda = j.value("lambda", t.lambda);
    t.seed = j.value("seed", t.seed);
    return t;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::state, "cannot open " + path + " for writing");
    out << text;
    if (!out) fail(errc::state, "write failed for " + path);
}

}  // namespace

FidelityFactor parse_fidelity(const std::string& text) {
    auto slash = text.find('/');
    if (slash == std::string::npos) {
        uint64_t num = 0;
        auto res = std::from_chars(text.data(), text.data() + text.size(), num);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size())
            fail(errc::config, "bad fidelity '" + text + "', expected num/den");
        return FidelityFactor(num, 1);
    }
    uint64_t num = 0, den = 0;
    auto r1 = std::from_chars(text.data(), text.data() + slash, num);
    auto r2 = std::from_chars(text.data() + slash + 1, text.data() + text.size(), den);
    if (r1.ec != std::errc() || r2.ec != std::errc() || r1.ptr != text.data() + slash ||
        r2.ptr != text.data() + text.size())
        fail(errc::config, "bad fidelity '" + text + "', expected num/den");
    return FidelityFactor(num, den);
}

std::string fidelity_text(const FidelityFactor& f) {
    return std::to_string(f.num) + "/" + std::to_string(f.den);
}

const char* classifier_kind_name(ClassifierKind kind) {
    return kind == ClassifierKind::head ? "head" : "ncm";
}

ClassifierKind classifier_kind_from_name(const std::string& name) {
    if (name == "head") return ClassifierKind::head;
    if (name == "ncm") return ClassifierKind::ncm;
    fail(errc::config, "unknown classifier '" + name + "'");
}

double evaluate(const Model& model, const std::vector<Sample>& test_set, ClassifierKind kind,
                const MemoryBuffer* buffer, const CodecRegistry* codecs) {
    if (test_set.empty()) fail(errc::protocol, "evaluation needs a non-empty test set");
    for (const Sample& s : test_set) {
        if (s.label == 0 || s.label > model.n_classes)
            fail(errc::label, "test label outside the seen class range");
        if (s.x.numel() != model.input_dim)
            fail(errc::shape, "test sample dim does not match model input dim");
    }
    const std::size_t n = test_set.size();
    std::vector<uint8_t> correct(n, 0);
    if (kind == ClassifierKind::head) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
            uint32_t pred = argmax_class(forward_scores(model, test_set[i].x.data));
            correct[i] = (pred == test_set[i].label) ? 1 : 0;
        }
    } else {
        if (!buffer || !codecs)
            fail(errc::state, "ncm evaluation needs the memory buffer and codec registry");
        NcmPrototypes protos = compute_ncm_prototypes(model, *buffer, *codecs);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
            uint32_t pred = ncm_classify_with(protos, model, test_set[i].x);
            correct[i] = (pred == test_set[i].label) ? 1 : 0;
        }
    }
    std::size_t hits = 0;
    for (uint8_t c : correct) hits += c;
    return static_cast<double>(hits) / static_cast<double>(n);
}

double average_incremental_accuracy(
    const std::vector<std::pair<uint32_t, double>>& per_session) {
    if (per_session.size() < 2)
        fail(errc::protocol, "average incremental accuracy needs at least two sessions");
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& [t, a] : per_session)
        if (t >= 2) {
            acc += a;
            ++count;
        }
    if (count == 0) fail(errc::protocol, "no sessions beyond the first were recorded");
    return acc / static_cast<double>(count);
}

double measure_domain_gap(const Model& model, const std::vector<DupletPair>& duplets) {
    if (duplets.empty()) fail(errc::empty_input, "domain gap needs duplet pairs");
    const std::size_t n = duplets.size();
    std::vector<std::vector<double>> real_feat(n), aux_feat(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        real_feat[i] = extract_features(model, duplets[i].real.data);
        aux_feat[i] = extract_features(model, duplets[i].aux.data);
    }
    double num = 0.0;
    for (std::size_t i = 0; i < n; ++i) num += l2_distance(real_feat[i], aux_feat[i]);
    num /= static_cast<double>(n);

    if (n < 2) return 0.0;
    const std::size_t pairs = n * (n - 1) / 2;
    std::vector<double> dist(pairs);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        // flat index of pair (i, j), j > i: i*n - i*(i+1)/2 + (j - i - 1)
        std::ptrdiff_t base = i * static_cast<std::ptrdiff_t>(n) - i * (i + 1) / 2 - i - 1;
        for (std::size_t j = static_cast<std::size_t>(i) + 1; j < n; ++j)
            dist[static_cast<std::size_t>(base + static_cast<std::ptrdiff_t>(j))] =
                l2_distance(real_feat[i], real_feat[j]);
    }
    double denom = 0.0;
    for (double d : dist) denom += d;
    denom /= static_cast<double>(pairs);
    if (denom < 1e-15) return 0.0;
    return num / denom;
}

std::vector<ProjectedPoint> export_projection(const std::vector<TaggedFeature>& features) {
    if (features.size() < 3) fail(errc::protocol, "projection needs at least 3 points");
    const std::size_t n = features.size();
    const std::size_t d = features[0].values.size();
    for (const TaggedFeature& f : features)
        if (f.values.size() != d) fail(errc::shape, "projection features must share one dim");

    std::vector<double> mean(d, 0.0);
    for (const TaggedFeature& f : features)
        for (std::size_t i = 0; i < d; ++i) mean[i] += f.values[i];
    for (double& v : mean) v /= static_cast<double>(n);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                                static_cast<Eigen::Index>(d));
    for (const TaggedFeature& f : features)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +=
                    (f.values[i] - mean[i]) * (f.values[j] - mean[j]);
    cov /= static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success)
        fail(errc::numeric, "projection eigendecomposition did not converge");

    auto axis = [&](std::size_t rank_from_top) {
        Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(
            d - 1 - rank_from_top));
        Eigen::Index arg = 0;
        for (Eigen::Index i = 1; i < v.size(); ++i)
            if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
        if (v(arg) < 0.0) v = -v;
        return v;
    };
    Eigen::VectorXd a1 = axis(0);
    bool rank1 = d < 2 || solver.eigenvalues()(static_cast<Eigen::Index>(d - 2)) < 1e-12;
    Eigen::VectorXd a2 = rank1 ? Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)) : axis(1);

    std::vector<ProjectedPoint> out(n);
    for (std::size_t s = 0; s < n; ++s) {
        double p1 = 0.0, p2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double centered = features[s].values[i] - mean[i];
            p1 += centered * a1(static_cast<Eigen::Index>(i));
            p2 += centered * a2(static_cast<Eigen::Index>(i));
        }
        out[s] = {p1, p2, features[s].tag};
    }
    return out;
}

std::string projection_csv(const std::vector<ProjectedPoint>& points) {
    std::string out = "p1,p2,tag\n";
    for (const ProjectedPoint& p : points)
        out += fmt(p.p1) + "," + fmt(p.p2) + "," + p.tag + "\n";
    return out;
}

std::string RunConfig::to_json() const {
    json j;
    if (!dataset_path.empty())
        j["dataset"] = json{{"path", dataset_path}};
    else
        j["dataset"] = json{{"synth", synth_to_json(synth)}};
    j["classes_per_session"] = classes_per_session;
    j["hidden_widths"] = hidden_widths;
    j["codec"] = json{{"kind", codec.kind},
                      {"fidelity", fidelity_text(codec.fidelity)},
                      {"downsample_factor", codec.downsample_factor}};
    j["budget_units"] = budget_units;
    j["budget_full_samples"] = budget_full_samples;
    j["train"] = train_to_json(train);
    j["classifier"] = classifier_kind_name(classifier);
    j["out_dir"] = out_dir;
    return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) fail(errc::parse, "config is not valid JSON", 0);
    RunConfig cfg;
    if (j.contains("dataset")) {
        const json& ds = j.at("dataset");
        if (ds.contains("path")) cfg.dataset_path = ds.at("path").get<std::string>();
        if (ds.contains("synth")) cfg.synth = synth_from_json(ds.at("synth"));
    }
    cfg.classes_per_session = j.value("classes_per_session", cfg.classes_per_session);
    if (j.contains("hidden_widths"))
        cfg.hidden_widths = j.at("hidden_widths").get<std::vector<uint32_t>>();
    if (j.contains("codec")) {
        const json& c = j.at("codec");
        cfg.codec.kind = c.value("kind", cfg.codec.kind);
        if (c.contains("fidelity"))
            cfg.codec.fidelity = parse_fidelity(c.at("fidelity").get<std::string>());
        cfg.codec.downsample_factor = c.value("downsample_factor", cfg.codec.downsample_factor);
    }
    cfg.budget_units = j.value("budget_units", cfg.budget_units);
    cfg.budget_full_samples = j.value("budget_full_samples", cfg.budget_full_samples);
    if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
    if (j.contains("classifier"))
        cfg.classifier = classifier_kind_from_name(j.at("classifier").get<std::string>());
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    return cfg;
}

uint64_t config_hash(const RunConfig& cfg) {
    // FNV-1a over the canonical JSON dump (nlohmann sorts object keys)
    const std::string text = cfg.to_json();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

Metrics run_experiment(const RunConfig& cfg, SessionState* final_state,
                       std::vector<DupletPair>* final_duplets) {
    cfg.train.validate();
    Dataset ds = cfg.dataset_path.empty() ? synth_generate(cfg.synth)
                                          : load_dataset(cfg.dataset_path);
    ds.validate();
    const auto input_dim = static_cast<uint32_t>(ds.sample_dim());

    uint64_t budget = cfg.budget_units ? cfg.budget_units
                                       : cfg.budget_full_samples * ds.sample_dim();

    std::optional<Codec> codec;
    if (cfg.train.mode != TrainMode::no_exemplar) {
        if (cfg.train.mode == TrainMode::real_exemplar || cfg.codec.kind == "identity") {
            codec = make_identity_codec();
        } else if (cfg.codec.kind == "pca") {
            codec = make_pca_codec(input_dim, pca_components_for(input_dim, cfg.codec.fidelity));
        } else if (cfg.codec.kind == "downsample") {
            if (ds.dims.size() != 3)
                fail(errc::config, "downsample codec needs (h,w,c) shaped data");
            codec = make_downsample_codec(ds.dims[0], ds.dims[1], ds.dims[2],
                                          cfg.codec.downsample_factor);
        } else {
            fail(errc::config, "unknown codec kind '" + cfg.codec.kind + "'");
        }
    }

    SessionState state = make_initial_state(input_dim, cfg.hidden_widths, budget,
                                            std::move(codec), cfg.train.seed);
    ClassStream stream =
        make_stream(ds, cfg.classes_per_session, derive_seed(cfg.train.seed, kTagStream));

    Metrics metrics;
    metrics.mode = train_mode_name(cfg.train.mode);
    metrics.seed = cfg.train.seed;
    metrics.lambda = cfg.train.lambda;
    metrics.budget_units = budget;
    metrics.config_hash = config_hash(cfg);

    EpochSink sink = [&](const EpochRecord& r) { metrics.epochs.push_back(r); };

    std::vector<std::pair<uint32_t, double>> per_session;
    // per-session train slices with the codec version live at that session,
    // so the gap statistic covers every seen class the way memory stores it
    std::vector<std::pair<std::vector<Sample>, uint32_t>> seen;
    for (uint32_t t = 1; t <= stream.session_count; ++t) {
        SessionSlice slice = next_session(stream, ds, t);
        run_session(state, slice.train, cfg.train, &sink);

        double acc = evaluate(state.model, slice.test_cumulative, cfg.classifier,
                              &state.buffer, &state.codecs);
        double gap = 0.0;
        if (cfg.train.mode != TrainMode::no_exemplar) {
            seen.emplace_back(slice.train, state.active_codec_id);
            std::vector<DupletPair> duplets;
            for (const auto& [data, codec_id] : seen) {
                std::vector<DupletPair> part = build_duplets(data, state.codecs.get(codec_id));
                duplets.insert(duplets.end(), std::make_move_iterator(part.begin()),
                               std::make_move_iterator(part.end()));
            }
            gap = measure_domain_gap(state.model, duplets);
            if (final_duplets && t == stream.session_count) *final_duplets = std::move(duplets);
        }
        metrics.sessions.push_back(t);
        metrics.per_session_accuracy.push_back(acc);
        metrics.per_session_gap.push_back(gap);
        per_session.emplace_back(t, acc);
    }
    if (stream.session_count >= 2)
        metrics.average_incremental = average_incremental_accuracy(per_session);
    else
        metrics.average_incremental = per_session.empty() ? 0.0 : per_session[0].second;
    double gap_sum = 0.0;
    for (double g : metrics.per_session_gap) gap_sum += g;
    metrics.mean_gap = metrics.per_session_gap.empty()
                           ? 0.0
                           : gap_sum / static_cast<double>(metrics.per_session_gap.size());
    if (state.codecs.size() > 0 && cfg.train.mode != TrainMode::no_exemplar)
        metrics.realized_r = cost_ratio(state.codecs.get(state.active_codec_id)).value();

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        write_text_file(cfg.out_dir + "/metrics.csv", metrics_csv(metrics));
        write_text_file(cfg.out_dir + "/epochs.csv", epochs_csv(metrics));
        json echo = json::parse(cfg.to_json());
        echo["config_hash"] = metrics.config_hash;
        echo["average_incremental_accuracy"] = metrics.average_incremental;
        echo["realized_r"] = metrics.realized_r;
        write_text_file(cfg.out_dir + "/config.json", echo.dump(2) + "\n");
    }
    if (final_state) *final_state = std::move(state);
    return metrics;
}

static void append_metrics_rows(std::string& out, const Metrics& m) {
    for (std::size_t i = 0; i < m.sessions.size(); ++i) {
        out += std::to_string(m.sessions[i]) + "," + m.mode + "," + std::to_string(m.seed) +
               "," + fmt(m.per_session_accuracy[i]) + "," + fmt(m.per_session_gap[i]) + "," +
               fmt(m.lambda) + "," + fmt(m.realized_r) + "," + std::to_string(m.budget_units) +
               "\n";
    }
    // summary row: t=0 carries the average incremental accuracy and mean gap
    out += "0," + m.mode + "," + std::to_string(m.seed) + "," + fmt(m.average_incremental) +
           "," + fmt(m.mean_gap) + "," + fmt(m.lambda) + "," + fmt(m.realized_r) + "," +
           std::to_string(m.budget_units) + "\n";
}

std::string metrics_csv(const Metrics& m) {
    std::string out = "t,mode,seed,accuracy,gap,lambda,r,budget_units\n";
    append_metrics_rows(out, m);
    return out;
}

std::string metrics_csv_rows(const std::vector<Metrics>& runs) {
    std::string out = "t,mode,seed,accuracy,gap,lambda,r,budget_units\n";
    for (const Metrics& m : runs) append_metrics_rows(out, m);
    return out;
}

std::string sweep_csv(const std::vector<Metrics>& runs) {
    std::string out = "t,mode,seed,accuracy,gap,lambda,r,budget_units\n";
    for (const Metrics& m : runs)
        out += "0," + m.mode + "," + std::to_string(m.seed) + "," +
               fmt(m.average_incremental) + "," + fmt(m.mean_gap) + "," + fmt(m.lambda) +
               "," + fmt(m.realized_r) + "," + std::to_string(m.budget_units) + "\n";
    return out;
}

std::string epochs_csv(const Metrics& m) {
    std::string out = "session,phase,epoch,loss\n";
    for (const EpochRecord& r : m.epochs)
        out += std::to_string(r.session) + "," + r.phase + "," + std::to_string(r.epoch) +
               "," + fmt(r.loss) + "\n";
    return out;
}

}  // namespace cil
