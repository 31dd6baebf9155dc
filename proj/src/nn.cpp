#include "stdmae/nn.hpp"

#include <cmath>

namespace stdmae {

namespace {
thread_local AttentionProbe* t_attention_probe = nullptr;
}

std::vector<Tensor> tensors_of(const NamedParams& named) {
    std::vector<Tensor> out;
    out.reserve(named.size());
    for (const auto& [_, t] : named) out.push_back(t);
    return out;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, Real gain) {
    const Real limit = gain * std::sqrt(6.0 / static_cast<Real>(in + out));
    std::uniform_real_distribution<Real> dist(-limit, limit);
    std::vector<Real> w(in * out);
    for (auto& v : w) v = dist(rng);
    weight = Tensor({in, out}, std::move(w), true);
    bias = Tensor({out}, 0.0, true);
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t width)
    : gain(Shape{width}, 1.0, true), bias(Shape{width}, 0.0, true) {}

void LayerNorm::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

AttentionProbe::AttentionProbe() : outer_(t_attention_probe) { t_attention_probe = this; }
AttentionProbe::~AttentionProbe() { t_attention_probe = outer_; }

void note_attention_scores(const Shape& shape) {
    for (auto* p = t_attention_probe; p != nullptr; p = p->outer_) p->shapes_.push_back(shape);
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads_, Rng& rng)
    : query(width, width, rng),
      key(width, width, rng),
      value(width, width, rng),
      output(width, width, rng),
      heads(heads_) {
    if (heads == 0 || width % heads != 0)
        throw ShapeError("attention width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
}

Tensor MultiHeadAttention::operator()(const Tensor& x, const KeyMask* mask) const {
    if (x.rank() != 3) throw ShapeError("attention expects [groups, seq, width], got " + shape_str(x.shape()));
    const std::size_t groups = x.dim(0), seq = x.dim(1), width = x.dim(2);
    if (width != query.in_features())
        throw ShapeError("attention width " + std::to_string(query.in_features()) +
                         " does not match input " + shape_str(x.shape()));
    const std::size_t head_dim = width / heads;
    auto split_heads = [&](const Tensor& t) {
        return permute(reshape(t, {groups, seq, heads, head_dim}), {0, 2, 1, 3});
    };
    const Tensor q = split_heads(query(x));
    const Tensor k = split_heads(key(x));
    const Tensor v = split_heads(value(x));
    Tensor scores = scale(matmul(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<Real>(head_dim)));
    note_attention_scores(scores.shape());
    const Tensor probs = mask ? masked_softmax_last(scores, mask->keep, heads * seq) : softmax_last(scores);
    const Tensor ctx = reshape(permute(matmul(probs, v), {0, 2, 1, 3}), {groups, seq, width});
    return output(ctx);
}

void MultiHeadAttention::collect(const std::string& prefix, NamedParams& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
}

TransformerLayer::TransformerLayer(std::size_t width, std::size_t heads, std::size_t ffn_mult, Rng& rng)
    : attn_norm(width),
      attn(width, heads, rng),
      ffn_norm(width),
      ffn_in(width, width * ffn_mult, rng),
      ffn_out(width * ffn_mult, width, rng) {}

Tensor TransformerLayer::operator()(const Tensor& x, const KeyMask* mask) const {
    const Tensor h = add(x, attn(attn_norm(x), mask));
    return add(h, ffn_out(gelu(ffn_in(ffn_norm(h)))));
}

void TransformerLayer::collect(const std::string& prefix, NamedParams& out) const {
    attn_norm.collect(prefix + ".attn_norm", out);
    attn.collect(prefix + ".attn", out);
    ffn_norm.collect(prefix + ".ffn_norm", out);
    ffn_in.collect(prefix + ".ffn_in", out);
    ffn_out.collect(prefix + ".ffn_out", out);
}

Mlp::Mlp(std::size_t in, std::size_t hidden_width, std::size_t out_width, Rng& rng, Real out_gain)
    : hidden(in, hidden_width, rng), out(hidden_width, out_width, rng, out_gain) {}

void Mlp::collect(const std::string& prefix, NamedParams& out_params) const {
    hidden.collect(prefix + ".hidden", out_params);
    out.collect(prefix + ".out", out_params);
}

} // namespace stdmae
