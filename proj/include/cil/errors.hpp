#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cil {

// Error categories used across the library. Tests match on the kind.
enum class errc {
    shape,            // dimension mismatch between tensors/layers
    config,           // invalid configuration value
    state,            // operation on an object in the wrong state (e.g. unfitted codec)
    integrity,        // mismatched codec id, corrupted pairing
    budget_overflow,  // memory buffer cannot satisfy the request
    parse,            // malformed file; byte_offset points at the failure
    label,            // label outside the valid class range
    protocol,         // evaluation protocol violation (empty test set, single session)
    numeric,          // non-finite loss or gradient
    empty_input,      // empty batch/class where non-empty is required
};

class error : public std::runtime_error {
public:
    static constexpr std::size_t no_offset = static_cast<std::size_t>(-1);

    error(errc kind, const std::string& what, std::size_t byte_offset = no_offset)
        : std::runtime_error(what), kind_(kind), byte_offset_(byte_offset) {}

    errc kind() const { return kind_; }
    std::size_t byte_offset() const { return byte_offset_; }

private:
    errc kind_;
    std::size_t byte_offset_;
};

[[noreturn]] inline void fail(errc kind, const std::string& what,
                              std::size_t byte_offset = error::no_offset) {
    throw error(kind, what, byte_offset);
}

}  // namespace cil
