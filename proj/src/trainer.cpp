#include "cil/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "cil/errors.hpp"
#include "cil/losses.hpp"

namespace cil {

namespace {

constexpr uint64_t kTagExpand = 0xe1;
constexpr uint64_t kTagDuplet = 0xd2;
constexpr uint64_t kTagCa = 0xca;

uint64_t session_seed(uint64_t seed, uint32_t session, uint64_t tag) {
    return derive_seed(derive_seed(seed, session), tag);
}

// Validates that new-class labels are exactly n_old+1..n_old+m with every
// class populated; returns the new total class count.
uint32_t check_new_labels(const std::vector<Sample>& new_data, uint32_t n_old) {
    uint32_t max_label = 0;
    for (const Sample& s : new_data) max_label = std::max(max_label, s.label);
    if (max_label <= n_old)
        fail(errc::label, "new-class labels must exceed the seen class count " +
                              std::to_string(n_old));
    std::vector<bool> seen(max_label - n_old, false);
    for (const Sample& s : new_data) {
        if (s.label <= n_old)
            fail(errc::label, "sample labeled " + std::to_string(s.label) +
                                  " is not a new class at this session");
        seen[s.label - n_old - 1] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i])
            fail(errc::label, "new class " + std::to_string(n_old + 1 + i) +
                                  " has no samples");
    return max_label;
}

std::vector<Sample> gather_batch(const std::vector<Sample>& pool,
                                 const std::vector<std::size_t>& order, std::size_t lo,
                                 std::size_t hi) {
    std::vector<Sample> out;
    out.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) out.push_back(pool[order[i]]);
    return out;
}

}  // namespace

const char* train_mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::aux_duplet_ca: return "aux_duplet_ca";
        case TrainMode::aux_duplet: return "aux_duplet";
        case TrainMode::aux_plain: return "aux_plain";
        case TrainMode::real_exemplar: return "real_exemplar";
        case TrainMode::no_exemplar: return "no_exemplar";
    }
    return "?";
}

TrainMode train_mode_from_name(const std::string& name) {
    for (TrainMode m : {TrainMode::aux_duplet_ca, TrainMode::aux_duplet, TrainMode::aux_plain,
                        TrainMode::real_exemplar, TrainMode::no_exemplar})
        if (name == train_mode_name(m)) return m;
    fail(errc::config, "unknown train mode '" + name + "'");
}

void TrainConfig::validate() const {
    if (epochs_duplet < 1) fail(errc::config, "epochs_duplet must be at least 1");
    if (epochs_ca < 1) fail(errc::config, "epochs_ca must be at least 1");
    if (batch_pairs < 1) fail(errc::config, "batch_pairs must be at least 1");
    if (lambda < 0.0) fail(errc::config, "lambda must be non-negative");
    if (!(ca_lr_scale > 0.0)) fail(errc::config, "ca_lr_scale must be positive");
    sgd.validate();
}

std::vector<std::pair<uint32_t, double>> default_schedule(uint32_t epochs) {
    uint32_t first = static_cast<uint32_t>(std::ceil(0.6 * epochs));
    uint32_t second = static_cast<uint32_t>(std::ceil(0.8 * epochs));
    if (first == 0 || first >= epochs) return {};
    if (second <= first || second >= epochs) return {{first, 5.0}};
    return {{first, 5.0}, {second, 5.0}};
}

SessionState make_initial_state(uint32_t input_dim, const std::vector<uint32_t>& hidden_widths,
                                uint64_t budget_units, std::optional<Codec> codec,
                                uint64_t seed) {
    SessionState state{.t = 0,
                       .n_classes = 0,
                       .model = Model{},
                       .teacher = std::nullopt,
                       .buffer = MemoryBuffer(budget_units),
                       .codecs = CodecRegistry{},
                       .active_codec_id = 0,
                       .op_log = {}};
    Rng rng(derive_seed(seed, 0x1417));
    state.model = make_model(input_dim, hidden_widths, 0, rng);
    if (codec) state.active_codec_id = state.codecs.add(std::move(*codec));
    return state;
}

std::vector<DupletPair> build_duplets(const std::vector<Sample>& new_data,
                                      const Codec& codec) {
    std::vector<DupletPair> out;
    out.reserve(new_data.size());
    for (const Sample& s : new_data) {
        Code code = encode(codec, s.x);
        out.push_back({s.x, decode(codec, code), s.label});
    }
    return out;
}

Model expand_head(const Model& m, uint32_t new_count, Rng& rng) {
    if (new_count == 0) fail(errc::config, "expand_head needs a positive class count");
    Model out = m;
    out.n_classes = m.n_classes + new_count;
    out.head.out_dim = out.n_classes;
    out.head.weights.resize(static_cast<std::size_t>(out.n_classes) * m.feature_dim);
    out.head.bias.resize(out.n_classes);
    for (std::size_t i = static_cast<std::size_t>(m.n_classes) * m.feature_dim;
         i < out.head.weights.size(); ++i)
        out.head.weights[i] = rng.uniform(-0.01, 0.01);
    for (std::size_t i = m.n_classes; i < out.n_classes; ++i)
        out.head.bias[i] = rng.uniform(-0.01, 0.01);
    return out;
}

void run_session(SessionState& state, const std::vector<Sample>& new_data,
                 const TrainConfig& cfg, const EpochSink* sink) {
    cfg.validate();
    if (new_data.empty()) fail(errc::empty_input, "session has no new-class data");
    for (const Sample& s : new_data)
        if (s.x.numel() != state.model.input_dim)
            fail(errc::shape, "new-class sample dim does not match model input dim");

    const uint32_t session = state.t + 1;
    const uint32_t n_old = state.n_classes;
    const uint32_t n_total = check_new_labels(new_data, n_old);

    const bool uses_exemplars = cfg.mode != TrainMode::no_exemplar;
    const bool paired = cfg.mode == TrainMode::aux_duplet_ca ||
                        cfg.mode == TrainMode::aux_duplet ||
                        cfg.mode == TrainMode::real_exemplar;
    const bool do_ca =
        cfg.mode == TrainMode::aux_duplet_ca || cfg.mode == TrainMode::real_exemplar;

    state.op_log.clear();

    // 1) refit the codec on the incoming batch (PCA is the only stateful kind)
    std::vector<DupletPair> duplets;
    if (uses_exemplars) {
        if (state.codecs.empty()) fail(errc::state, "exemplar mode needs a codec");
        const Codec& current = state.codecs.get(state.active_codec_id);
        if (cfg.mode == TrainMode::real_exemplar && current.kind != CodecKind::identity)
            fail(errc::config, "real_exemplar mode requires the identity codec");
        if (current.kind == CodecKind::pca) {
            std::vector<Tensor> tensors;
            tensors.reserve(new_data.size());
            for (const Sample& s : new_data) tensors.push_back(s.x);
            state.active_codec_id = state.codecs.add(fit_incremental(current, tensors));
        }
        state.op_log.push_back("fit_codec");

        // 2) duplet pairs for the new classes
        duplets = build_duplets(new_data, state.codecs.get(state.active_codec_id));
        state.op_log.push_back("build_duplets");
    }

    // 3) replay set R_{t-1} read before the memory update
    std::vector<Sample> replay;
    if (uses_exemplars) {
        replay = state.buffer.read_all(state.codecs);
        state.op_log.push_back("read_memory");
    }

    // 4) head expansion, old rows preserved
    Rng expand_rng(session_seed(cfg.seed, session, kTagExpand));
    state.model = expand_head(state.model, n_total - n_old, expand_rng);
    state.op_log.push_back("expand_head");

    // 5) duplet training
    LossParams params;
    params.lambda = cfg.lambda;
    params.n_old = n_old;
    params.n_total = n_total;
    const Model* teacher = state.teacher ? &*state.teacher : nullptr;

    SgdConfig duplet_sgd = cfg.sgd;
    if (duplet_sgd.schedule.empty()) duplet_sgd.schedule = default_schedule(cfg.epochs_duplet);
    SgdOptimizer opt(state.model, duplet_sgd);
    Rng train_rng(session_seed(cfg.seed, session, kTagDuplet));

    std::vector<std::size_t> order(new_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t steps =
        (new_data.size() + cfg.batch_pairs - 1) / cfg.batch_pairs;

    for (uint32_t epoch = 0; epoch < cfg.epochs_duplet; ++epoch) {
        double lr = opt.config().lr_at_epoch(epoch);
        train_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            std::size_t lo = step * cfg.batch_pairs;
            std::size_t hi = std::min(lo + cfg.batch_pairs, new_data.size());

            std::vector<Sample> replay_batch;
            if (!replay.empty()) {
                replay_batch.reserve(cfg.batch_pairs);
                for (uint32_t i = 0; i < cfg.batch_pairs; ++i)
                    replay_batch.push_back(replay[train_rng.index(replay.size())]);
            }

            double step_loss = 0.0;
            Gradients total = Gradients::zeros_like(state.model);
            if (paired) {
                std::vector<DupletPair> batch;
                batch.reserve(hi - lo);
                for (std::size_t i = lo; i < hi; ++i) batch.push_back(duplets[order[i]]);
                BatchLossValue v =
                    duplet_batch_loss(state.model, teacher, batch, replay_batch, params);
                step_loss += v.loss;
                total.add_scaled(v.grads, 1.0);
            } else {
                // plain new-class samples: auxiliary for aux_plain, real otherwise
                std::vector<Sample> batch;
                batch.reserve(hi - lo);
                for (std::size_t i = lo; i < hi; ++i) {
                    std::size_t idx = order[i];
                    if (cfg.mode == TrainMode::aux_plain)
                        batch.push_back({duplets[idx].aux, duplets[idx].label});
                    else
                        batch.push_back(new_data[idx]);
                }
                BatchLossValue v = duplet_batch_loss(state.model, teacher, {}, batch, params);
                step_loss += v.loss;
                total.add_scaled(v.grads, 1.0);
                if (!replay_batch.empty()) {
                    BatchLossValue r =
                        duplet_batch_loss(state.model, teacher, {}, replay_batch, params);
                    step_loss += r.loss;
                    total.add_scaled(r.grads, 1.0);
                }
            }
            validate_finite(state.model, step_loss, total);
            opt.step(state.model, total, lr);
            epoch_loss += step_loss;
        }
        if (sink)
            (*sink)({session, "duplet", epoch, epoch_loss / static_cast<double>(steps)});
    }
    state.op_log.push_back("duplet_train");

    // 6) memory update with the freshly trained extractor
    if (uses_exemplars) {
        const Codec& codec = state.codecs.get(state.active_codec_id);
        uint64_t cap = capacity(state.buffer.budget_units(), cost_ratio(codec),
                                state.model.input_dim);
        uint64_t quota = cap / n_total;
        if (quota == 0)
            fail(errc::budget_overflow,
                 "budget cannot hold one exemplar per class at session " +
                     std::to_string(session));
        for (uint32_t cls = n_old + 1; cls <= n_total; ++cls) {
            std::vector<const Sample*> members;
            for (const Sample& s : new_data)
                if (s.label == cls) members.push_back(&s);
            std::vector<Tensor> features(members.size());
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(members.size()); ++i)
                features[i] = extract_features(state.model, members[i]->x);
            HerdingRank rank = rank_by_herding(features, cls);
            std::size_t k = std::min<std::size_t>(quota, members.size());
            std::vector<Code> ranked;
            ranked.reserve(k);
            for (std::size_t i = 0; i < k; ++i) {
                Code code = encode(codec, members[rank.ordered_indices[i]]->x);
                code.label = cls;
                ranked.push_back(std::move(code));
            }
            state.buffer.write_new_class(ranked, k);
        }
        state.op_log.push_back("update_memory");
    }

    // 7) classifier adaptation on the exemplars that are now in memory
    if (do_ca) {
        std::vector<Sample> adapt_set = state.buffer.read_all(state.codecs);
        if (adapt_set.empty()) fail(errc::state, "classifier adaptation has no exemplars");
        SgdConfig ca_sgd = cfg.sgd;
        ca_sgd.learning_rate = cfg.sgd.learning_rate * cfg.ca_lr_scale;
        ca_sgd.schedule = default_schedule(cfg.epochs_ca);
        SgdOptimizer ca_opt(state.model, ca_sgd);
        Rng ca_rng(session_seed(cfg.seed, session, kTagCa));
        std::vector<std::size_t> ca_order(adapt_set.size());
        for (std::size_t i = 0; i < ca_order.size(); ++i) ca_order[i] = i;
        const std::size_t batch_size = 2 * static_cast<std::size_t>(cfg.batch_pairs);
        const std::size_t ca_steps = (adapt_set.size() + batch_size - 1) / batch_size;
        for (uint32_t epoch = 0; epoch < cfg.epochs_ca; ++epoch) {
            double lr = ca_opt.config().lr_at_epoch(epoch);
            ca_rng.shuffle(ca_order);
            double epoch_loss = 0.0;
            for (std::size_t step = 0; step < ca_steps; ++step) {
                std::size_t lo = step * batch_size;
                std::size_t hi = std::min(lo + batch_size, adapt_set.size());
                std::vector<Sample> batch = gather_batch(adapt_set, ca_order, lo, hi);
                BatchLossValue v = ca_loss(state.model, batch);
                validate_finite(state.model, v.loss, v.grads);
                if (cfg.ca_vary_extractor)
                    ca_opt.step(state.model, v.grads, lr);
                else
                    ca_opt.step_head_only(state.model, v.grads, lr);
                epoch_loss += v.loss;
            }
            if (sink)
                (*sink)({session, "ca", epoch, epoch_loss / static_cast<double>(ca_steps)});
        }
        state.op_log.push_back("ca_train");
    }

    // 8) freeze the teacher for the next session
    state.teacher = clone_snapshot(state.model);
    state.op_log.push_back("snapshot_teacher");
    state.t = session;
    state.n_classes = n_total;
}

NcmPrototypes compute_ncm_prototypes(const Model& model, const MemoryBuffer& buffer,
                                     const CodecRegistry& codecs) {
    NcmPrototypes protos;
    for (uint32_t cls = 1; cls <= model.n_classes; ++cls) {
        if (buffer.exemplar_count(cls) == 0)
            fail(errc::state, "class " + std::to_string(cls) + " has no exemplars for NCM");
        const std::vector<Code>& codes = buffer.codes_for(cls);
        std::vector<double> mean(model.feature_dim, 0.0);
        for (const Code& c : codes) {
            std::vector<double> feat = extract_features(model, codecs.decode_any(c).data);
            for (uint32_t i = 0; i < model.feature_dim; ++i) mean[i] += feat[i];
        }
        for (double& v : mean) v /= static_cast<double>(codes.size());
        protos.class_ids.push_back(cls);
        protos.means.push_back(std::move(mean));
    }
    return protos;
}

uint32_t ncm_classify_with(const NcmPrototypes& protos, const Model& model, const Tensor& x) {
    if (protos.class_ids.empty()) fail(errc::state, "NCM has no class prototypes");
    std::vector<double> feat = extract_features(model, x.data);
    uint32_t best = protos.class_ids[0];
    double best_dist = l2_distance(feat, protos.means[0]);
    for (std::size_t i = 1; i < protos.class_ids.size(); ++i) {
        double d = l2_distance(feat, protos.means[i]);
        if (d < best_dist) {  // ties keep the earlier (lower) class id
            best_dist = d;
            best = protos.class_ids[i];
        }
    }
    return best;
}

uint32_t ncm_classify(const Model& model, const MemoryBuffer& buffer,
                      const CodecRegistry& codecs, const Tensor& x) {
    return ncm_classify_with(compute_ncm_prototypes(model, buffer, codecs), model, x);
}

}  // namespace cil
