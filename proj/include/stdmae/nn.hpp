#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stdmae/tensor.hpp"

namespace stdmae {

using Rng = std::mt19937_64;
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

std::vector<Tensor> tensors_of(const NamedParams& named);

/// Affine map over the last axis: y = x W + b with W[in, out].
struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    /// Xavier-uniform weights multiplied by `gain`, zero bias.
    Linear(std::size_t in, std::size_t out, Rng& rng, Real gain = 1.0);

    Tensor operator()(const Tensor& x) const;
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;
    Real eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Per-(group, key) keep flags for attention over [groups, seq, width] input.
struct KeyMask {
    std::vector<unsigned char> keep;  // groups * seq
};

/// Shapes of every attention score buffer built on this thread while alive.
class AttentionProbe {
public:
    AttentionProbe();
    ~AttentionProbe();
    AttentionProbe(const AttentionProbe&) = delete;
    AttentionProbe& operator=(const AttentionProbe&) = delete;

    /// One entry per attention call: [groups, heads, queries, keys].
    const std::vector<Shape>& score_shapes() const noexcept { return shapes_; }

private:
    friend void note_attention_scores(const Shape&);
    AttentionProbe* outer_;
    std::vector<Shape> shapes_;
};

void note_attention_scores(const Shape& shape);

/// Multi-head self-attention over the middle axis of [groups, seq, width].
/// Each group is an independent sequence: scores are seq x seq per head.
struct MultiHeadAttention {
    Linear query, key, value, output;
    std::size_t heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);
    Tensor operator()(const Tensor& x, const KeyMask* mask = nullptr) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Pre-norm transformer layer: x + Attn(LN(x)), then + FFN(LN(.)), FFN width
/// `ffn_mult * width` with GELU.
struct TransformerLayer {
    LayerNorm attn_norm;
    MultiHeadAttention attn;
    LayerNorm ffn_norm;
    Linear ffn_in, ffn_out;

    TransformerLayer() = default;
    TransformerLayer(std::size_t width, std::size_t heads, std::size_t ffn_mult, Rng& rng);
    Tensor operator()(const Tensor& x, const KeyMask* mask = nullptr) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Two-layer perceptron with a GELU in between.
struct Mlp {
    Linear hidden, out;

    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden_width, std::size_t out_width, Rng& rng,
        Real out_gain = 1.0);
    Tensor operator()(const Tensor& x) const { return out(gelu(hidden(x))); }
    void collect(const std::string& prefix, NamedParams& out_params) const;
};

} // namespace stdmae
