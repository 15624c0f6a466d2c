#include "cil/datastream.hpp"

#include <algorithm>
#include <cmath>

#include "cil/binio.hpp"
#include "cil/errors.hpp"
#include "cil/rng.hpp"

namespace cil {

namespace {

// keep every stored value exactly representable in f32
double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void save_split(const std::vector<Sample>& samples, const std::vector<uint32_t>& dims,
                uint32_t class_count, const std::string& path) {
    ByteWriter w;
    w.magic("CILD");
    w.u32(1);  // version
    w.u32(class_count);
    w.u32(static_cast<uint32_t>(samples.size()));
    w.u8(static_cast<uint8_t>(dims.size()));
    for (uint32_t d : dims) w.u32(d);
    for (const Sample& s : samples) {
        w.u32(s.label);
        for (double v : s.x.data) w.f32(static_cast<float>(v));
    }
    w.to_file(path);
}

void load_split(const std::string& path, std::vector<Sample>& samples,
                std::vector<uint32_t>& dims, uint32_t& class_count) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("CILD", path);
    uint32_t version = r.u32();
    if (version != 1)
        fail(errc::parse, path + ": unsupported container version " + std::to_string(version),
             r.offset() - 4);
    class_count = r.u32();
    if (class_count == 0) fail(errc::parse, path + ": zero class count", r.offset() - 4);
    uint32_t sample_count = r.u32();
    uint8_t rank = r.u8();
    if (rank == 0 || rank > 3)
        fail(errc::parse, path + ": rank must be 1..3", r.offset() - 1);
    dims.clear();
    for (uint8_t i = 0; i < rank; ++i) {
        uint32_t d = r.u32();
        if (d == 0) fail(errc::parse, path + ": zero dimension", r.offset() - 4);
        dims.push_back(d);
    }
    std::size_t numel = shape_numel(dims);
    samples.clear();
    samples.reserve(sample_count);
    for (uint32_t s = 0; s < sample_count; ++s) {
        std::size_t label_at = r.offset();
        uint32_t label = r.u32();
        if (label == 0 || label > class_count)
            fail(errc::parse,
                 path + ": label " + std::to_string(label) + " outside 1.." +
                     std::to_string(class_count),
                 label_at);
        Sample sample;
        sample.label = label;
        sample.x.shape = dims;
        sample.x.data.resize(numel);
        for (std::size_t i = 0; i < numel; ++i) sample.x.data[i] = r.f32();
        samples.push_back(std::move(sample));
    }
    if (!r.at_end()) fail(errc::parse, path + ": trailing bytes", r.offset());
}

}  // namespace

std::size_t Dataset::sample_dim() const { return shape_numel(dims); }

void Dataset::validate() const {
    if (class_count == 0) fail(errc::config, "dataset has no classes");
    if (dims.empty()) fail(errc::config, "dataset has no dims");
    std::size_t numel = shape_numel(dims);
    for (const auto* split : {&train, &test})
        for (const Sample& s : *split) {
            if (s.label == 0 || s.label > class_count)
                fail(errc::label, "dataset label outside 1.." + std::to_string(class_count));
            if (s.x.numel() != numel) fail(errc::shape, "dataset sample dim mismatch");
        }
}

ClassStream make_stream(const Dataset& ds, uint32_t classes_per_session, uint64_t seed) {
    if (classes_per_session == 0 || classes_per_session > ds.class_count)
        fail(errc::config, "classes_per_session must lie in 1.." +
                               std::to_string(ds.class_count));
    ClassStream stream;
    stream.classes_per_session = classes_per_session;
    stream.order.resize(ds.class_count);
    for (uint32_t i = 0; i < ds.class_count; ++i) stream.order[i] = i + 1;
    Rng rng(seed);
    rng.shuffle(stream.order);
    stream.session_count =
        (ds.class_count + classes_per_session - 1) / classes_per_session;
    return stream;
}

SessionSlice next_session(const ClassStream& stream, const Dataset& ds, uint32_t t) {
    if (t < 1 || t > stream.session_count)
        fail(errc::config, "session index " + std::to_string(t) + " outside 1.." +
                               std::to_string(stream.session_count));
    // position of each original class in the incremental order (0-based)
    std::vector<uint32_t> pos_of(ds.class_count + 1, 0);
    for (uint32_t p = 0; p < stream.order.size(); ++p) pos_of[stream.order[p]] = p;

    uint32_t lo = (t - 1) * stream.classes_per_session;
    uint32_t hi = std::min<uint32_t>(t * stream.classes_per_session, ds.class_count);

    SessionSlice slice;
    slice.n_new = hi - lo;
    slice.n_seen = hi;
    for (const Sample& s : ds.train) {
        uint32_t p = pos_of[s.label];
        if (p >= lo && p < hi) {
            Sample remapped = s;
            remapped.label = p + 1;
            slice.train.push_back(std::move(remapped));
        }
    }
    for (const Sample& s : ds.test) {
        uint32_t p = pos_of[s.label];
        if (p < hi) {
            Sample remapped = s;
            remapped.label = p + 1;
            slice.test_cumulative.push_back(std::move(remapped));
        }
    }
    return slice;
}

Dataset synth_generate(const SynthSpec& spec) {
    if (!(spec.separation > 0.0)) fail(errc::config, "separation must be positive");
    if (spec.class_count == 0) fail(errc::config, "class_count must be positive");
    if (spec.dims.empty()) fail(errc::config, "dims must be non-empty");
    Dataset ds;
    ds.dims = spec.dims;
    ds.class_count = spec.class_count;
    const std::size_t d = shape_numel(spec.dims);

    Rng rng(derive_seed(spec.seed, 0xda7a));
    std::vector<std::vector<double>> means(spec.class_count);
    for (auto& mu : means) {
        mu.resize(d);
        double norm = 0.0;
        for (double& v : mu) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm < 1e-12) norm = 1.0;
        for (double& v : mu) v = v / norm * spec.separation;
    }
    auto draw = [&](std::vector<Sample>& out, uint32_t per_class) {
        for (uint32_t c = 0; c < spec.class_count; ++c)
            for (uint32_t s = 0; s < per_class; ++s) {
                Sample sample;
                sample.label = c + 1;
                sample.x.shape = spec.dims;
                sample.x.data.resize(d);
                for (std::size_t i = 0; i < d; ++i)
                    sample.x.data[i] = quantize_f32(means[c][i] + rng.normal());
                out.push_back(std::move(sample));
            }
    };
    draw(ds.train, spec.per_class_train);
    draw(ds.test, spec.per_class_test);
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& prefix) {
    save_split(ds.train, ds.dims, ds.class_count, prefix + ".train.cild");
    save_split(ds.test, ds.dims, ds.class_count, prefix + ".test.cild");
}

Dataset load_dataset(const std::string& prefix) {
    Dataset ds;
    uint32_t train_classes = 0, test_classes = 0;
    std::vector<uint32_t> test_dims;
    load_split(prefix + ".train.cild", ds.train, ds.dims, train_classes);
    std::vector<Sample> test;
    load_split(prefix + ".test.cild", test, test_dims, test_classes);
    if (test_dims != ds.dims)
        fail(errc::parse, prefix + ": train/test dims disagree", 0);
    if (test_classes != train_classes)
        fail(errc::parse, prefix + ": train/test class counts disagree", 0);
    ds.test = std::move(test);
    ds.class_count = train_classes;
    ds.validate();
    return ds;
}

}  // namespace cil
