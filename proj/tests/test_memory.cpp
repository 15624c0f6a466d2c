#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "cil/errors.hpp"
#include "cil/memory.hpp"
#include "cil/rng.hpp"

using namespace cil;

namespace {

Code make_code(uint32_t cls, std::size_t len, double fill, uint32_t codec_id = 1) {
    Code c;
    c.label = cls;
    c.codec_id = codec_id;
    c.payload.assign(len, fill);
    return c;
}

std::vector<Code> codes_of(uint32_t cls, std::size_t count, std::size_t len) {
    std::vector<Code> out;
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(make_code(cls, len, static_cast<double>(i)));
    return out;
}

}  // namespace

TEST_CASE("herding rank on the 1-D example {0,1,2,9}") {
    std::vector<Tensor> feats = {Tensor::vector({0.0}), Tensor::vector({1.0}),
                                 Tensor::vector({2.0}), Tensor::vector({9.0})};
    HerdingRank rank = rank_by_herding(feats, 7);
    CHECK(rank.class_id == 7);
    CHECK(rank.ordered_indices == std::vector<std::size_t>{2, 1, 0, 3});
    for (std::size_t i = 1; i < rank.distances.size(); ++i)
        CHECK(rank.distances[i] >= rank.distances[i - 1]);
}

TEST_CASE("herding ties break by ascending index") {
    std::vector<Tensor> same(4, Tensor::vector({1.0, 2.0}));
    HerdingRank rank = rank_by_herding(same, 1);
    CHECK(rank.ordered_indices == std::vector<std::size_t>{0, 1, 2, 3});

    // two points symmetric about the mean
    std::vector<Tensor> sym = {Tensor::vector({-1.0}), Tensor::vector({1.0})};
    HerdingRank r2 = rank_by_herding(sym, 1);
    CHECK(r2.ordered_indices == std::vector<std::size_t>{0, 1});
}

TEST_CASE("herding matches a brute-force oracle on random instances") {
    Rng rng(11);
    for (int instance = 0; instance < 100; ++instance) {
        std::size_t n = 2 + rng.index(20);
        std::size_t d = 1 + rng.index(5);
        std::vector<Tensor> feats;
        for (std::size_t s = 0; s < n; ++s) {
            std::vector<double> x(d);
            for (double& v : x) v = rng.uniform(-3.0, 3.0);
            feats.push_back(Tensor::vector(std::move(x)));
        }
        // oracle: explicit mean, explicit distances, index sort
        std::vector<double> mean(d, 0.0);
        for (const Tensor& f : feats)
            for (std::size_t i = 0; i < d; ++i) mean[i] += f.data[i] / double(n);
        std::vector<std::pair<double, std::size_t>> keyed;
        for (std::size_t s = 0; s < n; ++s) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                acc += (feats[s].data[i] - mean[i]) * (feats[s].data[i] - mean[i]);
            keyed.emplace_back(std::sqrt(acc), s);
        }
        std::sort(keyed.begin(), keyed.end());
        HerdingRank rank = rank_by_herding(feats, 1);
        for (std::size_t s = 0; s < n; ++s) CHECK(rank.ordered_indices[s] == keyed[s].second);
    }
}

TEST_CASE("herding rejects an empty class") {
    try {
        rank_by_herding({}, 3);
        FAIL("expected empty-class error");
    } catch (const error& e) {
        CHECK(e.kind() == errc::empty_input);
    }
}

TEST_CASE("write stores the top-k ranked codes and k=0 is a no-op") {
    MemoryBuffer buf(100);
    std::vector<Code> ranked = {make_code(1, 4, 2.0), make_code(1, 4, 1.0),
                                make_code(1, 4, 0.0), make_code(1, 4, 9.0)};
    buf.write_new_class(ranked, 2);
    CHECK(buf.exemplar_count(1) == 2);
    CHECK(buf.used_units() == 8);
    CHECK(buf.codes_for(1)[0].payload[0] == 2.0);
    CHECK(buf.codes_for(1)[1].payload[0] == 1.0);

    MemoryBuffer empty(100);
    empty.write_new_class(ranked, 0);
    CHECK(empty.total_codes() == 0);
    CHECK(empty.used_units() == 0);
}

TEST_CASE("writing at capacity with nothing evictable overflows") {
    MemoryBuffer buf(8);
    buf.write_new_class(codes_of(1, 1, 4), 1);
    buf.write_new_class(codes_of(2, 1, 4), 1);
    CHECK(buf.free_units() == 0);
    try {
        buf.write_new_class(codes_of(3, 1, 4), 1);
        FAIL("expected budget overflow");
    } catch (const error& e) {
        CHECK(e.kind() == errc::budget_overflow);
    }
}

TEST_CASE("eviction removes the bottom of the fullest class") {
    MemoryBuffer buf(20);
    buf.write_new_class(codes_of(1, 3, 2), 3);  // class A: 3 codes of 2 units
    buf.write_new_class(codes_of(2, 2, 2), 2);  // class B: 2 codes
    CHECK(buf.used_units() == 10);

    buf.evict_to_fit(12);  // need one more code's units free
    CHECK(buf.exemplar_count(1) == 2);
    CHECK(buf.exemplar_count(2) == 2);
    // bottom-ranked code was the one dropped
    CHECK(buf.codes_for(1).back().payload[0] == 1.0);

    buf.evict_to_fit(0);
    CHECK(buf.exemplar_count(1) == 2);
    CHECK(buf.exemplar_count(2) == 2);
}

TEST_CASE("eviction ties go to the lowest class id") {
    MemoryBuffer buf(8);
    buf.write_new_class(codes_of(1, 2, 2), 2);
    buf.write_new_class(codes_of(2, 2, 2), 2);
    buf.evict_to_fit(4);  // two codes must go: one from 1, then one from 2
    CHECK(buf.exemplar_count(1) == 1);
    CHECK(buf.exemplar_count(2) == 1);
}

TEST_CASE("eviction never empties a class below one exemplar") {
    MemoryBuffer buf(6);
    buf.write_new_class(codes_of(1, 1, 2), 1);
    buf.write_new_class(codes_of(2, 1, 2), 1);
    buf.write_new_class(codes_of(3, 1, 2), 1);
    try {
        buf.evict_to_fit(2);
        FAIL("expected budget overflow");
    } catch (const error& e) {
        CHECK(e.kind() == errc::budget_overflow);
    }
    CHECK(buf.exemplar_count(1) == 1);
    CHECK(buf.exemplar_count(2) == 1);
    CHECK(buf.exemplar_count(3) == 1);
}

TEST_CASE("read_all decodes everything in class order with labels attached") {
    MemoryBuffer buf(64);
    CodecRegistry registry;
    const Codec& id = registry.get(registry.add(make_identity_codec()));
    std::vector<Code> c1, c2;
    for (int i = 0; i < 3; ++i) {
        Code c = encode(id, Tensor::vector({1.0 + i, 2.0 + i}));
        c.label = 1;
        c1.push_back(c);
    }
    for (int i = 0; i < 2; ++i) {
        Code c = encode(id, Tensor::vector({-1.0 - i, -2.0 - i}));
        c.label = 2;
        c2.push_back(c);
    }
    buf.write_new_class(c1, 3);
    buf.write_new_class(c2, 2);

    std::vector<Sample> all = buf.read_all(id);
    REQUIRE(all.size() == 5);
    CHECK(all[0].label == 1);
    CHECK(all[0].x.data == std::vector<double>{1.0, 2.0});
    CHECK(all[3].label == 2);
    CHECK(all[3].x.data == std::vector<double>{-1.0, -2.0});

    MemoryBuffer empty(10);
    CHECK(empty.read_all(id).empty());

    Codec other = make_identity_codec();
    other.id = 99;
    try {
        buf.read_all(other);
        FAIL("expected integrity error");
    } catch (const error& e) {
        CHECK(e.kind() == errc::integrity);
    }
}

TEST_CASE("capacity arithmetic is exact") {
    // 2000 full samples of dim d at r = 1/6 hold 12000 codes
    CHECK(capacity(2000 * 32, FidelityFactor(1, 6), 32) == 12000);
    CHECK(capacity(2000 * 32, FidelityFactor(1, 1), 32) == 2000);
    // halving the fidelity doubles the capacity (up to flooring)
    for (uint64_t budget : {320ull, 1000ull, 12345ull}) {
        FidelityFactor r(5, 16);
        uint64_t base = capacity(budget, r, 16);
        uint64_t doubled = capacity(budget, r.halved(), 16);
        CHECK(doubled / 2 == base);
    }
    // inter-sample ratio times compression ratio: 80/500 * 1/4 = 4%
    CHECK(80.0 / 500.0 * FidelityFactor(1, 4).value() == doctest::Approx(0.04));
}

TEST_CASE("random operation sequences never break the budget or conservation") {
    Rng rng(21);
    for (int sequence = 0; sequence < 1000; ++sequence) {
        uint64_t budget = 16 + rng.index(64);
        MemoryBuffer buf(budget);
        uint32_t next_class = 1;
        std::size_t len = 1 + rng.index(4);
        for (int op = 0; op < 12; ++op) {
            double coin = rng.uniform();
            try {
                if (coin < 0.6) {
                    std::size_t count = 1 + rng.index(6);
                    std::size_t k = rng.index(count + 1);
                    buf.write_new_class(codes_of(next_class, count, len), k);
                    ++next_class;
                } else {
                    buf.evict_to_fit(rng.index(budget + 1));
                }
            } catch (const error& e) {
                CHECK(e.kind() == errc::budget_overflow);
            }
            CHECK(buf.used_units() <= buf.budget_units());
            CHECK(buf.written_total() == buf.total_codes() + buf.evicted_total());
            uint64_t payload_sum = 0;
            for (uint32_t cls : buf.classes())
                for (const Code& c : buf.codes_for(cls)) payload_sum += c.payload.size();
            CHECK(payload_sum == buf.used_units());
        }
    }
}

TEST_CASE("buffer blobs round trip") {
    MemoryBuffer buf(50);
    buf.write_new_class(codes_of(1, 3, 4), 3);
    buf.write_new_class(codes_of(5, 2, 4), 2);
    buf.evict_to_fit(14);
    std::vector<uint8_t> blob = buf.serialize();
    MemoryBuffer back = MemoryBuffer::deserialize(blob);
    CHECK(back.budget_units() == 50);
    CHECK(back.used_units() == buf.used_units());
    CHECK(back.exemplar_count(1) == buf.exemplar_count(1));
    CHECK(back.exemplar_count(5) == buf.exemplar_count(5));
    CHECK(back.written_total() == buf.written_total());
    CHECK(back.evicted_total() == buf.evicted_total());
    CHECK(back.serialize() == blob);

    std::vector<uint8_t> bad = blob;
    bad[1] = 'x';
    CHECK_THROWS_AS(MemoryBuffer::deserialize(bad), error);
}
