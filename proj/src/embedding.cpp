#include "stdmae/embedding.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include "stdmae/errors.hpp"

namespace stdmae {

void PatchConfig::validate() const {
    if (patch_len == 0 || width == 0 || long_len == 0 || channels == 0)
        throw ConfigError("patch config: all sizes must be positive");
    if (long_len % patch_len != 0)
        throw ConfigError("patch config: long window " + std::to_string(long_len) +
                          " is not divisible by patch length " + std::to_string(patch_len));
    if (width % 4 != 0)
        throw ConfigError("patch config: embedding width " + std::to_string(width) +
                          " must be divisible by 4");
}

Tensor patchify(const Tensor& x, std::size_t patch_len) {
    if (x.rank() != 3) throw ShapeError("patchify expects [T, N, C], got " + shape_str(x.shape()));
    const std::size_t T = x.dim(0), N = x.dim(1), C = x.dim(2);
    if (patch_len == 0 || T % patch_len != 0)
        throw ShapeError("patchify: window length " + std::to_string(T) +
                         " is not divisible by patch length " + std::to_string(patch_len));
    const std::size_t P = T / patch_len;
    auto r = reshape(x, {P, patch_len, N, C});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {P, N, patch_len * C});
}

Tensor unpatchify(const Tensor& patches, std::size_t patch_len, std::size_t channels) {
    if (patches.rank() != 3 || patches.dim(2) != patch_len * channels)
        throw ShapeError("unpatchify: expected [P, N, " + std::to_string(patch_len * channels) + "], got " +
                         shape_str(patches.shape()));
    const std::size_t P = patches.dim(0), N = patches.dim(1);
    auto r = reshape(patches, {P, N, patch_len, channels});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {P * patch_len, N, channels});
}

namespace {

std::vector<Real> build_encoding(std::size_t P, std::size_t N, std::size_t D) {
    const std::size_t quarter = D / 4, half = D / 2;
    std::vector<Real> freq(quarter);
    for (std::size_t i = 0; i < quarter; ++i)
        freq[i] = std::pow(10000.0, -4.0 * static_cast<Real>(i) / static_cast<Real>(D));
    std::vector<Real> out(P * N * D);
    for (std::size_t t = 0; t < P; ++t)
        for (std::size_t n = 0; n < N; ++n) {
            Real* row = out.data() + (t * N + n) * D;
            for (std::size_t i = 0; i < quarter; ++i) {
                const Real at = static_cast<Real>(t) * freq[i];
                const Real an = static_cast<Real>(n) * freq[i];
                row[2 * i] = std::sin(at);
                row[2 * i + 1] = std::cos(at);
                row[half + 2 * i] = std::sin(an);
                row[half + 2 * i + 1] = std::cos(an);
            }
        }
    return out;
}

} // namespace

Tensor positional_encoding(std::size_t patches, std::size_t nodes, std::size_t width) {
    if (width == 0 || width % 4 != 0)
        throw ConfigError("positional encoding width " + std::to_string(width) + " must be a positive multiple of 4");
    if (patches == 0 || nodes == 0) throw ShapeError("positional encoding needs nonzero extents");
    using Key = std::tuple<std::size_t, std::size_t, std::size_t>;
    static std::mutex mu;
    static std::map<Key, std::shared_ptr<const std::vector<Real>>> cache;
    std::shared_ptr<const std::vector<Real>> table;
    {
        std::lock_guard lock(mu);
        auto& slot = cache[Key{patches, nodes, width}];
        if (!slot) slot = std::make_shared<const std::vector<Real>>(build_encoding(patches, nodes, width));
        table = slot;
    }
    return Tensor({patches, nodes, width}, *table);
}

PatchEmbedding::PatchEmbedding(const PatchConfig& cfg, Rng& rng)
    : proj(cfg.patch_len * cfg.channels, cfg.width, rng) {}

Tensor PatchEmbedding::operator()(const Tensor& patches) const {
    if (patches.rank() != 3 || patches.dim(2) != proj.in_features())
        throw ShapeError("patch embedding expects last extent " + std::to_string(proj.in_features()) + ", got " +
                         shape_str(patches.shape()));
    return proj(patches);
}

Tensor input_embedding(const Tensor& x, const PatchConfig& cfg, const PatchEmbedding& embed, bool with_position) {
    cfg.validate();
    if (x.rank() != 3 || x.dim(0) != cfg.long_len || x.dim(2) != cfg.channels)
        throw ShapeError("input embedding expects [" + std::to_string(cfg.long_len) + ", N, " +
                         std::to_string(cfg.channels) + "], got " + shape_str(x.shape()));
    auto e = embed(patchify(x, cfg.patch_len));
    if (!with_position) return e;
    return add(e, positional_encoding(e.dim(0), e.dim(1), e.dim(2)));
}

} // namespace stdmae
