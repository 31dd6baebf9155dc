#pragma once

#include <cstddef>

#include "stdmae/nn.hpp"
#include "stdmae/tensor.hpp"

namespace stdmae {

struct PatchConfig {
    std::size_t patch_len = 12;   // L
    std::size_t width = 96;       // D
    std::size_t long_len = 864;   // T_long
    std::size_t channels = 1;     // C

    std::size_t num_patches() const { return long_len / patch_len; }
    /// Throws ConfigError unless long_len % patch_len == 0 and width % 4 == 0.
    void validate() const;
};

/// [T_long, N, C] -> [T_long / L, N, L * C]; element (p, n, l * C + c) is
/// x(p * L + l, n, c). Differentiable.
Tensor patchify(const Tensor& x, std::size_t patch_len);
/// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t patch_len, std::size_t channels);

/// Two-dimensional sinusoidal encoding [T_p, N, D]. The first D/2 channels
/// encode the patch index t (sin / cos pairs at frequencies
/// 10000^(-4i/D), i < D/4), the last D/2 encode the node index n the same
/// way. Memoized per (T_p, N, D); safe to call concurrently.
Tensor positional_encoding(std::size_t patches, std::size_t nodes, std::size_t width);

/// Linear patch projection L * C -> D shared by every (patch, node).
struct PatchEmbedding {
    Linear proj;

    PatchEmbedding() = default;
    PatchEmbedding(const PatchConfig& cfg, Rng& rng);
    /// [T_p, N, L * C] -> [T_p, N, D]
    Tensor operator()(const Tensor& patches) const;
    void collect(const std::string& prefix, NamedParams& out) const { proj.collect(prefix, out); }
};

/// E = patch_embed(patchify(x)) + E_pos for a [T_long, N, C] window.
/// `with_position = false` drops E_pos (diagnostics only).
Tensor input_embedding(const Tensor& x, const PatchConfig& cfg, const PatchEmbedding& embed,
                       bool with_position = true);

} // namespace stdmae
