#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cil/codec.hpp"
#include "cil/sample.hpp"
#include "cil/tensor.hpp"

namespace cil {

// Per-class herding order: sample indices sorted ascending by distance to the
// class feature mean, ties broken by ascending original index.
struct HerdingRank {
    uint32_t class_id = 0;
    std::vector<std::size_t> ordered_indices;
    std::vector<double> distances;  // aligned with ordered_indices, non-decreasing
};

HerdingRank rank_by_herding(const std::vector<Tensor>& features, uint32_t class_id);

// floor(budget_units / (r * unit_sample_size)): how many codes of cost ratio
// r fit a budget expressed in stored scalar units.
uint64_t capacity(uint64_t budget_units, const FidelityFactor& r, uint64_t unit_sample_size);

// Fixed-budget store of per-class auxiliary codes. Budget is denominated in
// stored scalar units; used_units always equals the sum of payload lengths
// and never exceeds the budget. Per-class lists keep herding order, so
// eviction always removes the bottom-ranked exemplar of the fullest class.
class MemoryBuffer {
public:
    MemoryBuffer() = default;
    explicit MemoryBuffer(uint64_t budget_units) : budget_units_(budget_units) {}

    uint64_t budget_units() const { return budget_units_; }
    uint64_t used_units() const { return used_units_; }
    uint64_t free_units() const { return budget_units_ - used_units_; }
    uint32_t latest_codec_id() const { return latest_codec_id_; }

    std::vector<uint32_t> classes() const;
    std::size_t exemplar_count(uint32_t class_id) const;
    std::size_t total_codes() const;
    const std::vector<Code>& codes_for(uint32_t class_id) const;

    uint64_t written_total() const { return written_total_; }
    uint64_t evicted_total() const { return evicted_total_; }

    // Stores the first k ranked codes for a class not yet present, evicting
    // bottom-ranked exemplars of existing classes first when the budget
    // demands it. Throws budget_overflow if the space cannot be freed.
    void write_new_class(const std::vector<Code>& ranked_codes, std::size_t k);

    // Frees space until free_units() >= needed_units by repeatedly dropping
    // the bottom exemplar of the class with the most exemplars (ties: lowest
    // class id). Never evicts a class's last exemplar.
    void evict_to_fit(uint64_t needed_units);

    // Decodes every stored code; classes in ascending order, herding order
    // within a class. The single-codec overload requires every code to have
    // been produced by that codec version.
    std::vector<Sample> read_all(const Codec& codec) const;
    std::vector<Sample> read_all(const CodecRegistry& registry) const;

    std::vector<uint8_t> serialize() const;
    static MemoryBuffer deserialize(const std::vector<uint8_t>& bytes);

private:
    uint64_t budget_units_ = 0;
    uint64_t used_units_ = 0;
    uint64_t written_total_ = 0;
    uint64_t evicted_total_ = 0;
    uint32_t latest_codec_id_ = 0;
    std::map<uint32_t, std::vector<Code>> per_class_;
};

}  // namespace cil
