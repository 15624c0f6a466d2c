#include "cil/codec.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "cil/binio.hpp"
#include "cil/errors.hpp"

namespace cil {

namespace {

void check_fitted(const Codec& codec) {
    if (!codec.fitted()) fail(errc::state, "pca codec has not been fitted");
}

// Top-k eigenvectors of the covariance implied by (mean, moment, n), as
// orthonormal rows in descending eigenvalue order with a canonical sign.
std::vector<double> principal_rows(const std::vector<double>& mean,
                                   const std::vector<double>& moment, uint64_t n,
                                   uint32_t d, uint32_t k) {
    Eigen::MatrixXd cov(d, d);
    double inv_n = 1.0 / static_cast<double>(n);
    for (uint32_t i = 0; i < d; ++i)
        for (uint32_t j = 0; j < d; ++j)
            cov(i, j) = moment[static_cast<std::size_t>(i) * d + j] * inv_n - mean[i] * mean[j];
    // enforce exact symmetry before the solve
    for (uint32_t i = 0; i < d; ++i)
        for (uint32_t j = i + 1; j < d; ++j) {
            double s = 0.5 * (cov(i, j) + cov(j, i));
            cov(i, j) = s;
            cov(j, i) = s;
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success)
        fail(errc::numeric, "pca eigendecomposition did not converge");

    std::vector<double> rows(static_cast<std::size_t>(k) * d);
    // eigenvalues come out ascending; take the top k from the back
    for (uint32_t r = 0; r < k; ++r) {
        Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - r);
        // canonical sign: largest-magnitude entry positive
        uint32_t arg = 0;
        for (uint32_t i = 1; i < d; ++i)
            if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
        if (v(arg) < 0.0) v = -v;
        for (uint32_t i = 0; i < d; ++i) rows[static_cast<std::size_t>(r) * d + i] = v(i);
    }
    return rows;
}

}  // namespace

FidelityFactor::FidelityFactor(uint64_t n, uint64_t d) {
    if (n == 0 || d == 0) fail(errc::config, "fidelity factor must be a positive rational");
    uint64_t g = std::gcd(n, d);
    num = n / g;
    den = d / g;
    if (num > den) fail(errc::config, "fidelity factor must lie in (0,1]");
}

std::size_t Codec::input_numel() const {
    switch (kind) {
        case CodecKind::identity: return 0;  // unconstrained
        case CodecKind::pca: return pca_dim;
        case CodecKind::downsample:
            return static_cast<std::size_t>(ds_h) * ds_w * ds_c;
    }
    return 0;
}

std::size_t Codec::code_numel() const {
    switch (kind) {
        case CodecKind::identity: return 0;  // same as input
        case CodecKind::pca: return pca_k;
        case CodecKind::downsample:
            return static_cast<std::size_t>(ds_h / ds_factor) * (ds_w / ds_factor) * ds_c;
    }
    return 0;
}

Codec make_identity_codec() {
    Codec c;
    c.kind = CodecKind::identity;
    return c;
}

Codec make_pca_codec(uint32_t dim, uint32_t k) {
    if (dim == 0) fail(errc::config, "pca dim must be positive");
    if (k == 0 || k > dim)
        fail(errc::config, "pca component count must lie in 1..dim (got k=" +
                               std::to_string(k) + ", dim=" + std::to_string(dim) + ")");
    Codec c;
    c.kind = CodecKind::pca;
    c.pca_dim = dim;
    c.pca_k = k;
    c.mean.assign(dim, 0.0);
    c.moment.assign(static_cast<std::size_t>(dim) * dim, 0.0);
    return c;
}

Codec make_downsample_codec(uint32_t h, uint32_t w, uint32_t c, uint32_t factor) {
    if (h == 0 || w == 0 || c == 0 || factor == 0)
        fail(errc::config, "downsample dims and factor must be positive");
    if (h % factor != 0 || w % factor != 0)
        fail(errc::config, "downsample factor must divide both spatial sides");
    Codec codec;
    codec.kind = CodecKind::downsample;
    codec.ds_h = h;
    codec.ds_w = w;
    codec.ds_c = c;
    codec.ds_factor = factor;
    return codec;
}

uint32_t pca_components_for(uint32_t dim, const FidelityFactor& requested) {
    double exact = static_cast<double>(dim) * requested.value();
    auto k = static_cast<uint32_t>(std::lround(exact));
    if (k < 1) k = 1;
    if (k > dim) k = dim;
    return k;
}

Codec fit_incremental(const Codec& codec, const std::vector<Tensor>& batch) {
    if (codec.kind != CodecKind::pca) return codec;
    if (batch.empty()) fail(errc::empty_input, "pca fit needs a non-empty batch");
    const uint32_t d = codec.pca_dim;
    for (const Tensor& t : batch)
        if (t.numel() != d)
            fail(errc::shape, "pca fit: sample dim " + std::to_string(t.numel()) +
                                  " does not match codec dim " + std::to_string(d));

    Codec out = codec;
    const uint64_t n_old = out.seen_count;
    const uint64_t n_new = n_old + batch.size();

    // batch sums; parallel over coordinates, sample order fixed inside
    std::vector<double> sum(d, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(d); ++i) {
        double acc = 0.0;
        for (const Tensor& t : batch) acc += t.data[i];
        sum[i] = acc;
    }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(d); ++i) {
        double* row = out.moment.data() + static_cast<std::size_t>(i) * d;
        // sample-major so the inner scan over j stays contiguous; for a fixed
        // (i, j) the sample order is still ascending
        for (const Tensor& t : batch) {
            const double xi = t.data[i];
            const double* x = t.data.data();
            for (uint32_t j = 0; j < d; ++j) row[j] += xi * x[j];
        }
    }
    for (uint32_t i = 0; i < d; ++i)
        out.mean[i] = (out.mean[i] * static_cast<double>(n_old) + sum[i]) /
                      static_cast<double>(n_new);
    out.seen_count = n_new;
    out.components = principal_rows(out.mean, out.moment, n_new, d, out.pca_k);
    return out;
}

Code encode(const Codec& codec, const Tensor& x) {
    check_fitted(codec);
    Code code;
    code.codec_id = codec.id;
    switch (codec.kind) {
        case CodecKind::identity:
            code.payload = x.data;
            break;
        case CodecKind::pca: {
            if (x.numel() != codec.pca_dim)
                fail(errc::shape, "encode: sample dim does not match pca codec dim");
            const uint32_t d = codec.pca_dim;
            code.payload.assign(codec.pca_k, 0.0);
            for (uint32_t r = 0; r < codec.pca_k; ++r) {
                const double* row = codec.components.data() + static_cast<std::size_t>(r) * d;
                double acc = 0.0;
                for (uint32_t i = 0; i < d; ++i) acc += row[i] * (x.data[i] - codec.mean[i]);
                code.payload[r] = acc;
            }
            break;
        }
        case CodecKind::downsample: {
            if (x.numel() != codec.input_numel())
                fail(errc::shape, "encode: sample size does not match downsample dims");
            const uint32_t f = codec.ds_factor;
            const uint32_t oh = codec.ds_h / f, ow = codec.ds_w / f;
            code.payload.assign(static_cast<std::size_t>(oh) * ow * codec.ds_c, 0.0);
            const double inv = 1.0 / static_cast<double>(f * f);
            for (uint32_t by = 0; by < oh; ++by)
                for (uint32_t bx = 0; bx < ow; ++bx)
                    for (uint32_t ch = 0; ch < codec.ds_c; ++ch) {
                        double acc = 0.0;
                        for (uint32_t dy = 0; dy < f; ++dy)
                            for (uint32_t dx = 0; dx < f; ++dx) {
                                std::size_t idx =
                                    (static_cast<std::size_t>(by * f + dy) * codec.ds_w +
                                     (bx * f + dx)) *
                                        codec.ds_c +
                                    ch;
                                acc += x.data[idx];
                            }
                        code.payload[(static_cast<std::size_t>(by) * ow + bx) * codec.ds_c + ch] =
                            acc * inv;
                    }
            break;
        }
    }
    return code;
}

Tensor decode(const Codec& codec, const Code& c) {
    check_fitted(codec);
    if (c.codec_id != codec.id)
        fail(errc::integrity, "code was produced by codec version " +
                                  std::to_string(c.codec_id) + ", not " +
                                  std::to_string(codec.id));
    switch (codec.kind) {
        case CodecKind::identity:
            return Tensor::vector(c.payload);
        case CodecKind::pca: {
            if (c.payload.size() != codec.pca_k)
                fail(errc::shape, "decode: payload length does not match component count");
            const uint32_t d = codec.pca_dim;
            std::vector<double> x(codec.mean);
            for (uint32_t r = 0; r < codec.pca_k; ++r) {
                const double* row = codec.components.data() + static_cast<std::size_t>(r) * d;
                for (uint32_t i = 0; i < d; ++i) x[i] += c.payload[r] * row[i];
            }
            return Tensor::vector(std::move(x));
        }
        case CodecKind::downsample: {
            if (c.payload.size() != codec.code_numel())
                fail(errc::shape, "decode: payload length does not match downsample dims");
            const uint32_t f = codec.ds_factor;
            const uint32_t ow = codec.ds_w / f;
            std::vector<double> x(codec.input_numel(), 0.0);
            for (uint32_t y = 0; y < codec.ds_h; ++y)
                for (uint32_t xx = 0; xx < codec.ds_w; ++xx)
                    for (uint32_t ch = 0; ch < codec.ds_c; ++ch) {
                        std::size_t src =
                            (static_cast<std::size_t>(y / f) * ow + (xx / f)) * codec.ds_c + ch;
                        x[(static_cast<std::size_t>(y) * codec.ds_w + xx) * codec.ds_c + ch] =
                            c.payload[src];
                    }
            Tensor t;
            t.shape = {codec.ds_h, codec.ds_w, codec.ds_c};
            t.data = std::move(x);
            return t;
        }
    }
    fail(errc::state, "unknown codec kind");
}

FidelityFactor cost_ratio(const Codec& codec) {
    switch (codec.kind) {
        case CodecKind::identity: return FidelityFactor(1, 1);
        case CodecKind::pca:
            // k is fixed at construction; fitting is not required for the ratio
            return FidelityFactor(codec.pca_k, codec.pca_dim);
        case CodecKind::downsample:
            return FidelityFactor(1, static_cast<uint64_t>(codec.ds_factor) * codec.ds_factor);
    }
    return FidelityFactor(1, 1);
}

uint32_t CodecRegistry::add(Codec codec) {
    codec.id = static_cast<uint32_t>(versions_.size()) + 1;
    versions_.push_back(std::move(codec));
    return versions_.back().id;
}

const Codec& CodecRegistry::get(uint32_t id) const {
    if (id == 0 || id > versions_.size())
        fail(errc::integrity, "unknown codec version " + std::to_string(id));
    return versions_[id - 1];
}

const Codec& CodecRegistry::latest() const {
    if (versions_.empty()) fail(errc::state, "codec registry is empty");
    return versions_.back();
}

Tensor CodecRegistry::decode_any(const Code& c) const { return decode(get(c.codec_id), c); }

std::vector<uint8_t> serialize_codec(const Codec& codec) {
    ByteWriter w;
    w.magic("CILC");
    w.u32(1);  // version
    w.u8(static_cast<uint8_t>(codec.kind));
    w.u32(codec.id);
    switch (codec.kind) {
        case CodecKind::identity:
            break;
        case CodecKind::pca:
            w.u32(codec.pca_dim);
            w.u32(codec.pca_k);
            w.u64(codec.seen_count);
            for (double v : codec.mean) w.f32(static_cast<float>(v));
            for (double v : codec.components) w.f32(static_cast<float>(v));
            for (double v : codec.moment) w.f32(static_cast<float>(v));
            break;
        case CodecKind::downsample:
            w.u32(codec.ds_h);
            w.u32(codec.ds_w);
            w.u32(codec.ds_c);
            w.u32(codec.ds_factor);
            break;
    }
    return w.bytes();
}

Codec deserialize_codec(const std::vector<uint8_t>& bytes) {
    ByteReader r(bytes);
    r.expect_magic("CILC", "codec blob");
    uint32_t version = r.u32();
    if (version != 1) fail(errc::parse, "unsupported codec blob version", r.offset() - 4);
    uint8_t kind = r.u8();
    uint32_t id = r.u32();
    Codec codec;
    switch (kind) {
        case 0:
            codec = make_identity_codec();
            break;
        case 1: {
            uint32_t d = r.u32();
            uint32_t k = r.u32();
            codec = make_pca_codec(d, k);
            codec.seen_count = r.u64();
            codec.components.assign(static_cast<std::size_t>(k) * d, 0.0);
            for (uint32_t i = 0; i < d; ++i) codec.mean[i] = r.f32();
            for (std::size_t i = 0; i < codec.components.size(); ++i)
                codec.components[i] = r.f32();
            for (std::size_t i = 0; i < codec.moment.size(); ++i) codec.moment[i] = r.f32();
            break;
        }
        case 2: {
            uint32_t h = r.u32(), w2 = r.u32(), c = r.u32(), f = r.u32();
            codec = make_downsample_codec(h, w2, c, f);
            break;
        }
        default:
            fail(errc::parse, "unknown codec kind tag", r.offset() - 5);
    }
    codec.id = id;
    return codec;
}

void save_codec(const Codec& codec, const std::string& path) {
    auto bytes = serialize_codec(codec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::state, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(errc::state, "write failed for " + path);
}

Codec load_codec(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::parse, "cannot open " + path, 0);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return deserialize_codec(bytes);
}

}  // namespace cil
