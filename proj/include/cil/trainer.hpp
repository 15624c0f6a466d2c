#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cil/codec.hpp"
#include "cil/memory.hpp"
#include "cil/nn.hpp"
#include "cil/sample.hpp"

namespace cil {

// Ablation modes. aux_* variants store auxiliary codes; real_exemplar runs
// the same pipeline with an identity codec (r = 1, fewer exemplars);
// no_exemplar keeps no memory and trains with distillation only.
enum class TrainMode {
    aux_duplet_ca,  // duplet training + classifier adaptation
    aux_duplet,     // duplet training, no adaptation
    aux_plain,      // auxiliary-only training samples, no duplet pairing
    real_exemplar,  // full pipeline over raw exemplars (identity codec)
    no_exemplar,    // distillation-only baseline
};

const char* train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
    uint32_t epochs_duplet = 30;
    uint32_t epochs_ca = 10;
    uint32_t batch_pairs = 16;  // duplet pairs per optimization step
    SgdConfig sgd;
    double ca_lr_scale = 0.1;       // adaptation runs at sgd.learning_rate * scale
    bool ca_vary_extractor = false; // default keeps the extractor frozen during CA
    double lambda = 1.0;
    uint64_t seed = 1;
    TrainMode mode = TrainMode::aux_duplet_ca;

    void validate() const;
};

// Divisor-5 drops at 60% and 80% of the epoch count.
std::vector<std::pair<uint32_t, double>> default_schedule(uint32_t epochs);

struct EpochRecord {
    uint32_t session = 0;
    std::string phase;  // "duplet" or "ca"
    uint32_t epoch = 0;
    double loss = 0.0;
};
using EpochSink = std::function<void(const EpochRecord&)>;

struct SessionState {
    uint32_t t = 0;          // completed sessions
    uint32_t n_classes = 0;  // n_t
    Model model;
    std::optional<Model> teacher;  // F_{t-1}, frozen
    MemoryBuffer buffer;
    CodecRegistry codecs;
    uint32_t active_codec_id = 0;
    std::vector<std::string> op_log;  // operation sequence of the last session
};

// Fresh state before session 1. The codec (when present) becomes version 1 in
// the registry; no_exemplar runs pass std::nullopt.
SessionState make_initial_state(uint32_t input_dim, const std::vector<uint32_t>& hidden_widths,
                                uint64_t budget_units, std::optional<Codec> codec,
                                uint64_t seed);

// One duplet pair (x, D(E(x)), y) per sample.
std::vector<DupletPair> build_duplets(const std::vector<Sample>& new_data, const Codec& codec);

// Grows the head by new_count rows initialized uniform(-0.01, 0.01); existing
// rows are untouched, so old-class scores are preserved exactly.
Model expand_head(const Model& m, uint32_t new_count, Rng& rng);

// Runs one full learning session over the new-class data A_t: codec refit,
// duplet construction, head expansion, duplet training against the frozen
// teacher, herding-based memory update, classifier adaptation, and teacher
// snapshot, in that order (mode permitting).
void run_session(SessionState& state, const std::vector<Sample>& new_data,
                 const TrainConfig& cfg, const EpochSink* sink = nullptr);

// Nearest-mean-of-exemplars classification in feature space.
struct NcmPrototypes {
    std::vector<uint32_t> class_ids;
    std::vector<std::vector<double>> means;
};
NcmPrototypes compute_ncm_prototypes(const Model& model, const MemoryBuffer& buffer,
                                     const CodecRegistry& codecs);
uint32_t ncm_classify_with(const NcmPrototypes& protos, const Model& model, const Tensor& x);
uint32_t ncm_classify(const Model& model, const MemoryBuffer& buffer,
                      const CodecRegistry& codecs, const Tensor& x);

}  // namespace cil
