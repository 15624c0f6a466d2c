#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cil/codec.hpp"
#include "cil/datastream.hpp"
#include "cil/memory.hpp"
#include "cil/nn.hpp"
#include "cil/sample.hpp"
#include "cil/trainer.hpp"

namespace cil {

enum class ClassifierKind { head, ncm };

const char* classifier_kind_name(ClassifierKind kind);
ClassifierKind classifier_kind_from_name(const std::string& name);

// Top-1 accuracy over the test set. head argmaxes the forward scores (ties
// to the lowest class id); ncm classifies by nearest exemplar mean and needs
// the buffer and codec registry.
double evaluate(const Model& model, const std::vector<Sample>& test_set, ClassifierKind kind,
                const MemoryBuffer* buffer = nullptr, const CodecRegistry* codecs = nullptr);

// Mean accuracy over sessions t >= 2; the first session is excluded by
// protocol. Requires at least two sessions.
double average_incremental_accuracy(const std::vector<std::pair<uint32_t, double>>& per_session);

// Scale-free feature-space gap between duplet members: mean ||B(x)-B(x_hat)||
// divided by the mean pairwise distance among the real features. Degenerate
// (all features identical) inputs report 0.
double measure_domain_gap(const Model& model, const std::vector<DupletPair>& duplets);

// 2-D PCA projection surrogate for feature-space visualization.
struct TaggedFeature {
    std::vector<double> values;
    std::string tag;  // "real" or "aux"
};
struct ProjectedPoint {
    double p1 = 0.0;
    double p2 = 0.0;
    std::string tag;
};
std::vector<ProjectedPoint> export_projection(const std::vector<TaggedFeature>& features);
std::string projection_csv(const std::vector<ProjectedPoint>& points);

struct CodecConfig {
    std::string kind = "pca";  // identity | pca | downsample
    FidelityFactor fidelity{1, 3};
    uint32_t downsample_factor = 2;
};

// "num/den" (or a bare integer) to an exact rational.
FidelityFactor parse_fidelity(const std::string& text);
std::string fidelity_text(const FidelityFactor& f);

struct RunConfig {
    std::string dataset_path;  // container prefix; empty selects synth below
    SynthSpec synth;
    uint32_t classes_per_session = 2;
    std::vector<uint32_t> hidden_widths = {64, 64};
    CodecConfig codec;
    uint64_t budget_units = 0;         // 0 derives from budget_full_samples
    uint64_t budget_full_samples = 20; // budget in full-sample units
    TrainConfig train;
    ClassifierKind classifier = ClassifierKind::head;
    std::string out_dir;  // empty runs in memory only

    std::string to_json() const;
    static RunConfig from_json_text(const std::string& text);
};

struct Metrics {
    std::vector<uint32_t> sessions;
    std::vector<double> per_session_accuracy;
    std::vector<double> per_session_gap;
    double average_incremental = 0.0;
    double mean_gap = 0.0;
    double realized_r = 1.0;
    std::string mode;
    uint64_t seed = 0;
    double lambda = 1.0;
    uint64_t budget_units = 0;
    uint64_t config_hash = 0;
    std::vector<EpochRecord> epochs;
};

// Runs every session of the configured stream, evaluating after each one.
// The per-session gap column is measure_domain_gap over the duplets of every
// class seen so far (each session's data under its own codec version). With
// a non-empty out_dir also writes metrics.csv, epochs.csv and config.json
// there. final_state/final_duplets, when non-null, receive the post-run
// trainer state and the cumulative duplet set.
Metrics run_experiment(const RunConfig& cfg, SessionState* final_state = nullptr,
                       std::vector<DupletPair>* final_duplets = nullptr);

// Fixed schema: t,mode,seed,accuracy,gap,lambda,r,budget_units. One row per
// session plus a t=0 summary row carrying the average incremental accuracy
// and mean gap.
std::string metrics_csv(const Metrics& m);
std::string metrics_csv_rows(const std::vector<Metrics>& runs);  // shared header
// Summary rows only (t=0), one per run: the sweep-table shape.
std::string sweep_csv(const std::vector<Metrics>& runs);
std::string epochs_csv(const Metrics& m);

uint64_t config_hash(const RunConfig& cfg);

}  // namespace cil
