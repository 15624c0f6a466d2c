#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cil/tensor.hpp"

namespace cil {

enum class CodecKind : uint8_t { identity = 0, pca = 1, downsample = 2 };

// Exact storage cost ratio r = size(E(x)) / size(x), measured in stored
// scalar counts, kept as a reduced rational.
struct FidelityFactor {
    uint64_t num = 1;
    uint64_t den = 1;

    FidelityFactor() = default;
    FidelityFactor(uint64_t n, uint64_t d);
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    FidelityFactor halved() const { return FidelityFactor(num, den * 2); }
};

// Stored auxiliary-sample code E(x) plus the id of the codec version that
// produced it, so codes written under earlier codec versions stay decodable.
struct Code {
    std::vector<double> payload;
    uint32_t codec_id = 0;
    uint32_t label = 0;
};

// Encoder-decoder pair. Identity and downsample are stateless; the PCA codec
// carries a streaming mean/second-moment estimate and is refitted
// incrementally, producing a new immutable version each time.
struct Codec {
    CodecKind kind = CodecKind::identity;
    uint32_t id = 0;

    // pca state
    uint32_t pca_dim = 0;
    uint32_t pca_k = 0;
    uint64_t seen_count = 0;
    std::vector<double> mean;        // d
    std::vector<double> components;  // k x d row-major, orthonormal rows
    std::vector<double> moment;      // d x d running sum of x x^T

    // downsample state
    uint32_t ds_h = 0, ds_w = 0, ds_c = 0, ds_factor = 1;

    bool fitted() const { return kind != CodecKind::pca || seen_count > 0; }
    std::size_t input_numel() const;
    std::size_t code_numel() const;
};

Codec make_identity_codec();
Codec make_pca_codec(uint32_t dim, uint32_t k);
Codec make_downsample_codec(uint32_t h, uint32_t w, uint32_t c, uint32_t factor);

// Number of components giving the closest realized ratio k/d to the
// requested one, clamped to [1, d].
uint32_t pca_components_for(uint32_t dim, const FidelityFactor& requested);

// Streaming PCA update over one mini-batch: running mean and second moment
// absorb the batch, then the top-k eigenvectors of the implied covariance
// become the (orthonormal) components. Identity and downsample codecs are
// returned unchanged.
Codec fit_incremental(const Codec& codec, const std::vector<Tensor>& batch);

Code encode(const Codec& codec, const Tensor& x);
Tensor decode(const Codec& codec, const Code& c);
FidelityFactor cost_ratio(const Codec& codec);

// Versioned store of fitted codecs; decode_any picks the version recorded in
// the code itself.
class CodecRegistry {
public:
    // Assigns the next id (starting at 1), stores the version, returns the id.
    uint32_t add(Codec codec);
    // References stay valid only until the next add.
    const Codec& get(uint32_t id) const;
    const Codec& latest() const;
    bool empty() const { return versions_.empty(); }
    std::size_t size() const { return versions_.size(); }

    Tensor decode_any(const Code& c) const;

private:
    std::vector<Codec> versions_;
};

// "CILC" container.
std::vector<uint8_t> serialize_codec(const Codec& codec);
Codec deserialize_codec(const std::vector<uint8_t>& bytes);
void save_codec(const Codec& codec, const std::string& path);
Codec load_codec(const std::string& path);

}  // namespace cil
