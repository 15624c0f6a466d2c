#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cil/sample.hpp"

namespace cil {

// Labeled dataset with a train/test partition. Labels are dense 1-based
// class ids; dims is either {d} or {h, w, c}.
struct Dataset {
    std::vector<uint32_t> dims;
    uint32_t class_count = 0;
    std::vector<Sample> train;
    std::vector<Sample> test;

    std::size_t sample_dim() const;
    void validate() const;
};

// Fixed random class order partitioned into sessions of m classes each.
struct ClassStream {
    std::vector<uint32_t> order;  // permutation of 1..class_count
    uint32_t classes_per_session = 0;
    uint32_t session_count = 0;
};

// Session-t view: new-class train data with labels remapped to the global
// incremental ids n_{t-1}+1..n_t, plus the cumulative test set of everything
// seen so far (remapped the same way).
struct SessionSlice {
    std::vector<Sample> train;
    std::vector<Sample> test_cumulative;
    uint32_t n_new = 0;
    uint32_t n_seen = 0;  // n_t
};

ClassStream make_stream(const Dataset& ds, uint32_t classes_per_session, uint64_t seed);
SessionSlice next_session(const ClassStream& stream, const Dataset& ds, uint32_t t);

struct SynthSpec {
    uint32_t class_count = 10;
    std::vector<uint32_t> dims = {16};
    uint32_t per_class_train = 50;
    uint32_t per_class_test = 20;
    double separation = 8.0;
    uint64_t seed = 1;
};

// Gaussian blobs: class means on a sphere of radius `separation`, unit
// covariance. Values are rounded to f32 so container round trips are exact.
Dataset synth_generate(const SynthSpec& spec);

// "CILD" containers, one file per split: <prefix>.train.cild and
// <prefix>.test.cild.
void save_dataset(const Dataset& ds, const std::string& prefix);
Dataset load_dataset(const std::string& prefix);

}  // namespace cil
