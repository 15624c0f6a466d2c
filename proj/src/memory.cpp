#include "cil/memory.hpp"

#include <algorithm>
#include <cmath>

#include "cil/binio.hpp"
#include "cil/errors.hpp"

namespace cil {

HerdingRank rank_by_herding(const std::vector<Tensor>& features, uint32_t class_id) {
    if (features.empty())
        fail(errc::empty_input, "herding rank of class " + std::to_string(class_id) +
                                    ": no samples");
    const std::size_t n = features.size();
    const std::size_t d = features[0].numel();
    for (const Tensor& f : features)
        if (f.numel() != d) fail(errc::shape, "herding rank: feature dims differ");

    std::vector<double> mean(d, 0.0);
    for (const Tensor& f : features)
        for (std::size_t i = 0; i < d; ++i) mean[i] += f.data[i];
    for (double& v : mean) v /= static_cast<double>(n);

    std::vector<double> dist(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(n); ++s)
        dist[s] = l2_distance(features[s].data, mean);

    HerdingRank rank;
    rank.class_id = class_id;
    rank.ordered_indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) rank.ordered_indices[i] = i;
    std::sort(rank.ordered_indices.begin(), rank.ordered_indices.end(),
              [&](std::size_t a, std::size_t b) {
                  if (dist[a] != dist[b]) return dist[a] < dist[b];
                  return a < b;
              });
    rank.distances.resize(n);
    for (std::size_t i = 0; i < n; ++i) rank.distances[i] = dist[rank.ordered_indices[i]];
    return rank;
}

uint64_t capacity(uint64_t budget_units, const FidelityFactor& r, uint64_t unit_sample_size) {
    if (unit_sample_size == 0) fail(errc::config, "unit sample size must be positive");
    return budget_units * r.den / (r.num * unit_sample_size);
}

std::vector<uint32_t> MemoryBuffer::classes() const {
    std::vector<uint32_t> out;
    out.reserve(per_class_.size());
    for (const auto& [cls, codes] : per_class_) out.push_back(cls);
    return out;
}

std::size_t MemoryBuffer::exemplar_count(uint32_t class_id) const {
    auto it = per_class_.find(class_id);
    return it == per_class_.end() ? 0 : it->second.size();
}

std::size_t MemoryBuffer::total_codes() const {
    std::size_t n = 0;
    for (const auto& [cls, codes] : per_class_) n += codes.size();
    return n;
}

const std::vector<Code>& MemoryBuffer::codes_for(uint32_t class_id) const {
    auto it = per_class_.find(class_id);
    if (it == per_class_.end())
        fail(errc::state, "class " + std::to_string(class_id) + " not in buffer");
    return it->second;
}

void MemoryBuffer::write_new_class(const std::vector<Code>& ranked_codes, std::size_t k) {
    if (k == 0) return;
    if (k > ranked_codes.size())
        fail(errc::config, "write_new_class: k exceeds ranked code count");
    const uint32_t class_id = ranked_codes.front().label;
    for (const Code& c : ranked_codes)
        if (c.label != class_id)
            fail(errc::integrity, "write_new_class: mixed class labels in ranked codes");
    if (per_class_.count(class_id))
        fail(errc::state, "class " + std::to_string(class_id) + " already in buffer");

    uint64_t needed = 0;
    for (std::size_t i = 0; i < k; ++i) needed += ranked_codes[i].payload.size();
    if (needed > free_units()) evict_to_fit(needed);

    std::vector<Code>& dst = per_class_[class_id];
    dst.assign(ranked_codes.begin(), ranked_codes.begin() + static_cast<std::ptrdiff_t>(k));
    used_units_ += needed;
    written_total_ += k;
    latest_codec_id_ = ranked_codes.front().codec_id;
}

void MemoryBuffer::evict_to_fit(uint64_t needed_units) {
    if (needed_units > budget_units_)
        fail(errc::budget_overflow, "requested " + std::to_string(needed_units) +
                                        " units exceed total budget " +
                                        std::to_string(budget_units_));
    while (free_units() < needed_units) {
        // class with the most exemplars, ties to the lowest class id; classes
        // already down to one exemplar are not evictable
        uint32_t victim = 0;
        std::size_t victim_count = 1;
        for (const auto& [cls, codes] : per_class_)
            if (codes.size() > victim_count) {
                victim = cls;
                victim_count = codes.size();
            }
        if (victim == 0)
            fail(errc::budget_overflow,
                 "cannot free " + std::to_string(needed_units) +
                     " units: every class is at one exemplar (free " +
                     std::to_string(free_units()) + ")");
        std::vector<Code>& codes = per_class_[victim];
        used_units_ -= codes.back().payload.size();
        codes.pop_back();
        evicted_total_ += 1;
    }
}

std::vector<Sample> MemoryBuffer::read_all(const Codec& codec) const {
    std::vector<Sample> out;
    out.reserve(total_codes());
    for (const auto& [cls, codes] : per_class_)
        for (const Code& c : codes) {
            if (c.codec_id != codec.id)
                fail(errc::integrity, "buffer holds codes from codec version " +
                                          std::to_string(c.codec_id) + ", got " +
                                          std::to_string(codec.id));
            out.push_back({decode(codec, c), cls});
        }
    return out;
}

std::vector<Sample> MemoryBuffer::read_all(const CodecRegistry& registry) const {
    std::vector<Sample> out;
    out.reserve(total_codes());
    for (const auto& [cls, codes] : per_class_)
        for (const Code& c : codes) out.push_back({registry.decode_any(c), cls});
    return out;
}

std::vector<uint8_t> MemoryBuffer::serialize() const {
    ByteWriter w;
    w.magic("CILM");
    w.u32(1);  // version
    w.u64(budget_units_);
    w.u64(written_total_);
    w.u64(evicted_total_);
    w.u32(latest_codec_id_);
    w.u32(static_cast<uint32_t>(per_class_.size()));
    for (const auto& [cls, codes] : per_class_) {
        w.u32(cls);
        w.u32(static_cast<uint32_t>(codes.size()));
        for (const Code& c : codes) {
            w.u32(c.codec_id);
            w.u32(static_cast<uint32_t>(c.payload.size()));
            for (double v : c.payload) w.f32(static_cast<float>(v));
        }
    }
    return w.bytes();
}

MemoryBuffer MemoryBuffer::deserialize(const std::vector<uint8_t>& bytes) {
    ByteReader r(bytes);
    r.expect_magic("CILM", "memory buffer blob");
    uint32_t version = r.u32();
    if (version != 1) fail(errc::parse, "unsupported buffer blob version", r.offset() - 4);
    MemoryBuffer buf(r.u64());
    buf.written_total_ = r.u64();
    buf.evicted_total_ = r.u64();
    buf.latest_codec_id_ = r.u32();
    uint32_t n_classes = r.u32();
    for (uint32_t i = 0; i < n_classes; ++i) {
        uint32_t cls = r.u32();
        uint32_t count = r.u32();
        std::vector<Code>& codes = buf.per_class_[cls];
        codes.resize(count);
        for (uint32_t j = 0; j < count; ++j) {
            codes[j].label = cls;
            codes[j].codec_id = r.u32();
            uint32_t len = r.u32();
            codes[j].payload.resize(len);
            for (uint32_t v = 0; v < len; ++v) codes[j].payload[v] = r.f32();
            buf.used_units_ += len;
        }
    }
    if (buf.used_units_ > buf.budget_units_)
        fail(errc::parse, "buffer blob exceeds its own budget", r.offset());
    return buf;
}

}  // namespace cil
