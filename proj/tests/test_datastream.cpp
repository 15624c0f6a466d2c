#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cil/binio.hpp"
#include "cil/datastream.hpp"
#include "cil/errors.hpp"

using namespace cil;

namespace {

SynthSpec toy_spec(uint64_t seed = 1) {
    SynthSpec s;
    s.class_count = 10;
    s.dims = {16};
    s.per_class_train = 50;
    s.per_class_test = 20;
    s.separation = 10.0;
    s.seed = seed;
    return s;
}

// nearest-train-class-mean classifier, independent of the trainer
double mean_classifier_accuracy(const Dataset& ds) {
    std::map<uint32_t, std::vector<double>> mean;
    std::map<uint32_t, std::size_t> count;
    const std::size_t d = ds.sample_dim();
    for (const Sample& s : ds.train) {
        auto& m = mean[s.label];
        m.resize(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) m[i] += s.x.data[i];
        count[s.label] += 1;
    }
    for (auto& [cls, m] : mean)
        for (double& v : m) v /= static_cast<double>(count[cls]);
    std::size_t hits = 0;
    for (const Sample& s : ds.test) {
        uint32_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& [cls, m] : mean) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                acc += (s.x.data[i] - m[i]) * (s.x.data[i] - m[i]);
            if (acc < best_d) {
                best_d = acc;
                best = cls;
            }
        }
        if (best == s.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.test.size());
}

std::string temp_prefix(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("stream partitions classes into ceil(C/m) sessions") {
    SynthSpec spec = toy_spec();
    spec.class_count = 100;
    spec.per_class_train = 1;
    spec.per_class_test = 1;
    Dataset ds = synth_generate(spec);
    ClassStream stream = make_stream(ds, 10, 5);
    CHECK(stream.session_count == 10);
    CHECK(stream.order.size() == 100);
    std::set<uint32_t> unique(stream.order.begin(), stream.order.end());
    CHECK(unique.size() == 100);

    ClassStream degenerate = make_stream(ds, 100, 5);
    CHECK(degenerate.session_count == 1);

    ClassStream uneven = make_stream(ds, 30, 5);
    CHECK(uneven.session_count == 4);

    CHECK(make_stream(ds, 10, 9).order == make_stream(ds, 10, 9).order);
    CHECK(make_stream(ds, 10, 9).order != make_stream(ds, 10, 10).order);

    CHECK_THROWS_AS(make_stream(ds, 101, 1), error);
    CHECK_THROWS_AS(make_stream(ds, 0, 1), error);
}

TEST_CASE("session slices remap labels and grow the test set") {
    Dataset ds = synth_generate(toy_spec());
    ClassStream stream = make_stream(ds, 2, 3);

    SessionSlice first = next_session(stream, ds, 1);
    CHECK(first.n_new == 2);
    CHECK(first.n_seen == 2);
    for (const Sample& s : first.test_cumulative) CHECK(s.label <= 2);
    CHECK(first.test_cumulative.size() == 2 * 20);

    std::size_t train_total = 0;
    std::size_t prev_test = 0;
    std::set<uint32_t> all_labels;
    for (uint32_t t = 1; t <= stream.session_count; ++t) {
        SessionSlice slice = next_session(stream, ds, t);
        train_total += slice.train.size();
        for (const Sample& s : slice.train) {
            CHECK(s.label > (t - 1) * 2);
            CHECK(s.label <= t * 2);
            all_labels.insert(s.label);
        }
        CHECK(slice.test_cumulative.size() > prev_test);
        prev_test = slice.test_cumulative.size();
    }
    CHECK(train_total == ds.train.size());
    CHECK(all_labels.size() == 10);  // bijection onto 1..10
    CHECK(*all_labels.rbegin() == 10);

    CHECK_THROWS_AS(next_session(stream, ds, 0), error);
    CHECK_THROWS_AS(next_session(stream, ds, 6), error);
}

TEST_CASE("every train sample appears in exactly one session") {
    Dataset ds = synth_generate(toy_spec(4));
    ClassStream stream = make_stream(ds, 3, 4);
    std::size_t total = 0;
    for (uint32_t t = 1; t <= stream.session_count; ++t)
        total += next_session(stream, ds, t).train.size();
    CHECK(total == ds.train.size());
}

TEST_CASE("well-separated blobs are linearly classifiable, tight ones are not") {
    SynthSpec spec = toy_spec(2);
    spec.separation = 10.0;
    CHECK(mean_classifier_accuracy(synth_generate(spec)) > 0.99);
    spec.separation = 0.1;
    double acc = mean_classifier_accuracy(synth_generate(spec));
    CHECK(acc < 0.3);  // chance is 0.1
}

TEST_CASE("synth sample counts and determinism") {
    SynthSpec spec = toy_spec(3);
    Dataset a = synth_generate(spec);
    CHECK(a.train.size() == 500);
    CHECK(a.test.size() == 200);
    CHECK(a.class_count == 10);
    Dataset b = synth_generate(spec);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].label == b.train[i].label);
        CHECK(a.train[i].x.data == b.train[i].x.data);
    }
    spec.seed = 99;
    Dataset c = synth_generate(spec);
    CHECK(a.train[0].x.data != c.train[0].x.data);

    spec.separation = 0.0;
    CHECK_THROWS_AS(synth_generate(spec), error);
}

TEST_CASE("image-shaped synth keeps rank-3 dims") {
    SynthSpec spec;
    spec.class_count = 4;
    spec.dims = {8, 8, 1};
    spec.per_class_train = 5;
    spec.per_class_test = 2;
    spec.separation = 6.0;
    spec.seed = 5;
    Dataset ds = synth_generate(spec);
    CHECK(ds.sample_dim() == 64);
    CHECK(ds.train[0].x.shape == std::vector<uint32_t>{8, 8, 1});
}

TEST_CASE("containers round trip bit-exactly") {
    SynthSpec spec = toy_spec(6);
    spec.class_count = 4;
    spec.per_class_train = 7;
    spec.per_class_test = 3;
    Dataset ds = synth_generate(spec);
    std::string prefix = temp_prefix("cil_roundtrip");
    save_dataset(ds, prefix);
    Dataset back = load_dataset(prefix);
    CHECK(back.class_count == ds.class_count);
    CHECK(back.dims == ds.dims);
    REQUIRE(back.train.size() == ds.train.size());
    REQUIRE(back.test.size() == ds.test.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].label == ds.train[i].label);
        CHECK(back.train[i].x.data == ds.train[i].x.data);
    }
    std::remove((prefix + ".train.cild").c_str());
    std::remove((prefix + ".test.cild").c_str());
}

TEST_CASE("truncated containers fail with a parse error and offset") {
    SynthSpec spec = toy_spec(7);
    spec.class_count = 2;
    spec.per_class_train = 3;
    spec.per_class_test = 2;
    Dataset ds = synth_generate(spec);
    std::string prefix = temp_prefix("cil_truncated");
    save_dataset(ds, prefix);

    std::string train_path = prefix + ".train.cild";
    std::ifstream in(train_path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(train_path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();

    try {
        load_dataset(prefix);
        FAIL("expected parse error");
    } catch (const error& e) {
        CHECK(e.kind() == errc::parse);
        CHECK(e.byte_offset() != error::no_offset);
        CHECK(e.byte_offset() <= bytes.size());
    }
    std::remove((prefix + ".train.cild").c_str());
    std::remove((prefix + ".test.cild").c_str());
}

TEST_CASE("labels outside the class range are rejected at parse time") {
    // handcraft a container with label 0
    ByteWriter w;
    w.magic("CILD");
    w.u32(1);   // version
    w.u32(2);   // class_count
    w.u32(1);   // sample_count
    w.u8(1);    // rank
    w.u32(3);   // dim
    w.u32(0);   // label 0: invalid
    w.f32(1.0f);
    w.f32(2.0f);
    w.f32(3.0f);
    std::string prefix = temp_prefix("cil_badlabel");
    w.to_file(prefix + ".train.cild");
    w.to_file(prefix + ".test.cild");
    try {
        load_dataset(prefix);
        FAIL("expected parse error");
    } catch (const error& e) {
        CHECK(e.kind() == errc::parse);
    }

    // label above class_count
    ByteWriter w2;
    w2.magic("CILD");
    w2.u32(1);
    w2.u32(2);
    w2.u32(1);
    w2.u8(1);
    w2.u32(3);
    w2.u32(3);  // label 3 > class_count 2
    w2.f32(1.0f);
    w2.f32(2.0f);
    w2.f32(3.0f);
    w2.to_file(prefix + ".train.cild");
    CHECK_THROWS_AS(load_dataset(prefix), error);

    // bad magic
    ByteWriter w3;
    w3.magic("NOPE");
    w3.to_file(prefix + ".train.cild");
    CHECK_THROWS_AS(load_dataset(prefix), error);

    std::remove((prefix + ".train.cild").c_str());
    std::remove((prefix + ".test.cild").c_str());
}
