#pragma once

#include <cstdint>

#include "cil/tensor.hpp"

namespace cil {

// A labeled sample. Labels are 1-based class ids throughout the library.
struct Sample {
    Tensor x;
    uint32_t label = 0;
};

// (real, auxiliary, label) triple: an original sample paired with its
// low-fidelity reconstruction.
struct DupletPair {
    Tensor real;
    Tensor aux;
    uint32_t label = 0;
};

}  // namespace cil
