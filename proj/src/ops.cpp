#include <algorithm>
#include <cmath>
#include <numeric>

#include "stdmae/tensor.hpp"

namespace stdmae {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

// Builds an op result. The backward closure is only kept when gradients are
// being recorded and at least one input needs them.
Tensor make_result(Shape shape, std::vector<Real> value, std::vector<const Tensor*> inputs,
                   std::function<void(Node&)> backward, const char* op) {
    Tensor out(std::move(shape), std::move(value));
    if (!grad_enabled()) return out;
    bool needs = false;
    for (const auto* t : inputs) needs = needs || t->requires_grad();
    if (!needs) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = op;
    for (const auto* t : inputs) node.parents.push_back(t->node());
    node.backward = std::move(backward);
    return out;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// ----------------------------------------------------------------------------
// Row-major GEMM kernels; all accumulate into C.

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const Real* __restrict a, const Real* __restrict b, Real* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
    // Four rows of C share each row of B; per-element summation order is
    // still p = 0..k-1, so results match the plain loop bit for bit.
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        Real* c0 = c + i * n;
        Real* c1 = c0 + n;
        Real* c2 = c1 + n;
        Real* c3 = c2 + n;
        const Real* a0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
            const Real* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const Real bj = bp[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        Real* ci = c + i * n;
        const Real* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = ai[p];
            const Real* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const Real* __restrict a, const Real* __restrict b, Real* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        Real* c0 = c + i * n;
        Real* c1 = c0 + n;
        Real* c2 = c1 + n;
        Real* c3 = c2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const Real* ap = a + p * m + i;
            const Real v0 = ap[0], v1 = ap[1], v2 = ap[2], v3 = ap[3];
            const Real* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const Real bj = bp[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        Real* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = a[p * m + i];
            const Real* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T, via an explicit transpose of B.
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n,
             std::vector<Real>& scratch) {
    scratch.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
    gemm_nn(a, scratch.data(), c, m, k, n);
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
    const bool a_big = is_suffix(b.shape(), a.shape());
    if (!a_big && !is_suffix(a.shape(), b.shape()))
        throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcast-compatible");
    const Shape out_shape = a_big ? a.shape() : b.shape();
    const std::size_t total = numel_of(out_shape);
    const std::size_t na = a.numel(), nb = b.numel();
    auto av = a.values();
    auto bv = b.values();
    std::vector<Real> out(total);
    // One operand is a suffix of the other, so the small one repeats in
    // contiguous blocks of its own size.
    const std::size_t block = std::min(na, nb);
    const Real* ap = av.data();
    const Real* bp = bv.data();
    for (std::size_t base = 0; base < total; base += block) {
        const Real* x = na == total ? ap + base : ap;
        const Real* y = nb == total ? bp + base : bp;
        Real* o = out.data() + base;
        switch (kind) {
            case BinaryKind::add: for (std::size_t j = 0; j < block; ++j) o[j] = x[j] + y[j]; break;
            case BinaryKind::sub: for (std::size_t j = 0; j < block; ++j) o[j] = x[j] - y[j]; break;
            case BinaryKind::mul: for (std::size_t j = 0; j < block; ++j) o[j] = x[j] * y[j]; break;
        }
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result(
        out_shape, std::move(out), {&a, &b},
        [an, bn, kind, na, nb, block](Node& o) {
            const Real* g = o.grad.data();
            const std::size_t total = o.grad.size();
            if (an->requires_grad) {
                Real* ga = an->grad_buffer();
                for (std::size_t base = 0; base < total; base += block) {
                    Real* d = na == total ? ga + base : ga;
                    const Real* gs = g + base;
                    if (kind == BinaryKind::mul) {
                        const Real* f = nb == total ? bn->value.data() + base : bn->value.data();
                        for (std::size_t j = 0; j < block; ++j) d[j] += gs[j] * f[j];
                    } else {
                        for (std::size_t j = 0; j < block; ++j) d[j] += gs[j];
                    }
                }
            }
            if (bn->requires_grad) {
                Real* gb = bn->grad_buffer();
                for (std::size_t base = 0; base < total; base += block) {
                    Real* d = nb == total ? gb + base : gb;
                    const Real* gs = g + base;
                    if (kind == BinaryKind::mul) {
                        const Real* f = na == total ? an->value.data() + base : an->value.data();
                        for (std::size_t j = 0; j < block; ++j) d[j] += gs[j] * f[j];
                    } else if (kind == BinaryKind::sub) {
                        for (std::size_t j = 0; j < block; ++j) d[j] -= gs[j];
                    } else {
                        for (std::size_t j = 0; j < block; ++j) d[j] += gs[j];
                    }
                }
            }
        },
        name);
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx, const char* name) {
    auto av = a.values();
    std::vector<Real> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    NodePtr an = a.node();
    return make_result(
        a.shape(), std::move(out), {&a},
        [an, dfdx](Node& o) {
            Real* ga = an->grad_buffer();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                ga[i] += o.grad[i] * dfdx(an->value[i], o.value[i]);
        },
        name);
}

} // namespace

// ----------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& a, Real factor) {
    return unary(
        a, [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; }, "scale");
}

Tensor add_scalar(const Tensor& a, Real offset) {
    return unary(
        a, [offset](Real x) { return x + offset; }, [](Real, Real) { return 1.0; }, "add_scalar");
}

Tensor abs(const Tensor& a) {
    return unary(
        a, [](Real x) { return std::abs(x); },
        [](Real x, Real) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }, "abs");
}

Tensor relu(const Tensor& a) {
    return unary(
        a, [](Real x) { return x > 0 ? x : 0.0; }, [](Real x, Real) { return x > 0 ? 1.0 : 0.0; },
        "relu");
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1.0 - y * y; }, "tanh");
}

Tensor gelu(const Tensor& a) {
    constexpr Real c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr Real k = 0.044715;
    return unary(
        a,
        [](Real x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
        [](Real x, Real) {
            const Real t = std::tanh(c * (x + k * x * x * x));
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
        },
        "gelu");
}

Tensor sum(const Tensor& a) {
    auto av = a.values();
    Real s = 0;
    for (Real x : av) s += x;
    NodePtr an = a.node();
    return make_result(
        Shape{1}, {s}, {&a},
        [an](Node& o) {
            Real* ga = an->grad_buffer();
            for (std::size_t i = 0; i < an->value.size(); ++i) ga[i] += o.grad[0];
        },
        "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<Real>(a.numel())); }

// ----------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(-2), k = a.dim(-1);
    const std::size_t kb = transpose_b ? b.dim(-1) : b.dim(-2);
    const std::size_t n = transpose_b ? b.dim(-2) : b.dim(-1);
    if (k != kb)
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + (transpose_b ? "^T" : "") + " (" +
                         std::to_string(k) + " vs " + std::to_string(kb) + ")");

    // Broadcast leading batch axes (right-aligned, 1 or missing broadcasts).
    const Shape ab(a.shape().begin(), a.shape().end() - 2);
    const Shape bb(b.shape().begin(), b.shape().end() - 2);
    const std::size_t rb = std::max(ab.size(), bb.size());
    Shape batch(rb);
    for (std::size_t i = 0; i < rb; ++i) {
        const std::size_t da = i + ab.size() >= rb ? ab[i + ab.size() - rb] : 1;
        const std::size_t db = i + bb.size() >= rb ? bb[i + bb.size() - rb] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError("matmul batch extents do not broadcast: " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
        batch[i] = std::max(da, db);
    }
    const std::size_t nbatch = numel_of(batch);
    std::vector<std::size_t> a_off(nbatch), b_off(nbatch);
    {
        std::vector<std::size_t> idx(rb, 0);
        for (std::size_t flat = 0; flat < nbatch; ++flat) {
            std::size_t oa = 0, ob = 0, sa = m * k, sb = k * n;
            for (std::size_t d = rb; d-- > 0;) {
                const std::size_t da = d + ab.size() >= rb ? ab[d + ab.size() - rb] : 1;
                const std::size_t db = d + bb.size() >= rb ? bb[d + bb.size() - rb] : 1;
                if (da != 1) oa += idx[d] * sa;
                if (db != 1) ob += idx[d] * sb;
                sa *= da;
                sb *= db;
            }
            a_off[flat] = oa;
            b_off[flat] = ob;
            for (std::size_t d = rb; d-- > 0;) {
                if (++idx[d] < batch[d]) break;
                idx[d] = 0;
            }
        }
    }

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<Real> out(nbatch * m * n, 0.0);
    const Real* ap = a.values().data();
    const Real* bp = b.values().data();
    // A plain weight matrix on the right lets the whole batch run as one GEMM.
    const bool flat_a = b.rank() == 2;
    std::vector<Real> scratch;
    if (flat_a) {
        const std::size_t rows = a.numel() / k;
        if (transpose_b)
            gemm_nt(ap, bp, out.data(), rows, k, n, scratch);
        else
            gemm_nn(ap, bp, out.data(), rows, k, n);
    } else {
        for (std::size_t s = 0; s < nbatch; ++s) {
            Real* c = out.data() + s * m * n;
            if (transpose_b)
                gemm_nt(ap + a_off[s], bp + b_off[s], c, m, k, n, scratch);
            else
                gemm_nn(ap + a_off[s], bp + b_off[s], c, m, k, n);
        }
    }

    NodePtr an = a.node(), bn = b.node();
    return make_result(
        std::move(out_shape), std::move(out), {&a, &b},
        [an, bn, m, k, n, transpose_b, flat_a, nbatch, a_off = std::move(a_off),
         b_off = std::move(b_off)](Node& o) {
            std::vector<Real> scratch;
            const Real* g = o.grad.data();
            const std::size_t runs = flat_a ? 1 : nbatch;
            const std::size_t rows = flat_a ? an->value.size() / k : m;
            for (std::size_t s = 0; s < runs; ++s) {
                const Real* gs = g + s * rows * n;
                const std::size_t ao = flat_a ? 0 : a_off[s];
                const std::size_t bo = flat_a ? 0 : b_off[s];
                if (an->requires_grad) {
                    Real* ga = an->grad_buffer() + ao;
                    if (transpose_b)
                        gemm_nn(gs, bn->value.data() + bo, ga, rows, n, k);
                    else
                        gemm_nt(gs, bn->value.data() + bo, ga, rows, n, k, scratch);
                }
                if (bn->requires_grad) {
                    Real* gb = bn->grad_buffer() + bo;
                    if (transpose_b)
                        gemm_tn(gs, an->value.data() + ao, gb, n, rows, k);
                    else
                        gemm_tn(an->value.data() + ao, gs, gb, k, rows, n);
                }
            }
        },
        "matmul");
}

// ----------------------------------------------------------------------------

namespace {

Tensor softmax_impl(const Tensor& a, std::span<const unsigned char> keep,
                    std::size_t rows_per_group, const char* name) {
    const std::size_t width = a.dim(-1);
    const std::size_t rows = a.numel() / width;
    const bool masked = !keep.empty();
    auto av = a.values();
    std::vector<Real> out(av.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = av.data() + r * width;
        Real* y = out.data() + r * width;
        const unsigned char* kp = masked ? keep.data() + (r / rows_per_group) * width : nullptr;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < width; ++j) {
            if (!std::isfinite(x[j]))
                throw std::domain_error(std::string(name) + ": non-finite input");
            if (!kp || kp[j]) mx = std::max(mx, x[j]);
        }
        if (!std::isfinite(mx)) continue;  // every key masked
        Real total = 0;
        for (std::size_t j = 0; j < width; ++j) {
            if (kp && !kp[j]) continue;
            y[j] = std::exp(x[j] - mx);
            total += y[j];
        }
        for (std::size_t j = 0; j < width; ++j) y[j] /= total;
    }
    NodePtr an = a.node();
    return make_result(
        a.shape(), std::move(out), {&a},
        [an, width, rows](Node& o) {
            Real* ga = an->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* g = o.grad.data() + r * width;
                const Real* y = o.value.data() + r * width;
                Real dot = 0;
                for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += y[j] * (g[j] - dot);
            }
        },
        name);
}

} // namespace

Tensor softmax_last(const Tensor& a) { return softmax_impl(a, {}, 1, "softmax_last"); }

Tensor masked_softmax_last(const Tensor& a, std::span<const unsigned char> keep,
                           std::size_t rows_per_group) {
    const std::size_t width = a.dim(-1);
    const std::size_t rows = a.numel() / width;
    if (rows_per_group == 0 || rows % rows_per_group != 0 ||
        keep.size() != rows / rows_per_group * width)
        throw ShapeError("masked_softmax_last: mask of " + std::to_string(keep.size()) +
                         " flags does not cover " + shape_str(a.shape()) + " in groups of " +
                         std::to_string(rows_per_group) + " rows");
    return softmax_impl(a, keep, rows_per_group, "masked_softmax_last");
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, Real eps) {
    if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::size_t width = a.dim(-1);
    if (gain.shape() != Shape{width} || bias.shape() != Shape{width})
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " must both be [" + std::to_string(width) + "]");
    const std::size_t rows = a.numel() / width;
    auto av = a.values();
    auto gv = gain.values();
    auto bv = bias.values();
    std::vector<Real> out(av.size()), xhat(av.size()), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* x = av.data() + r * width;
        Real mu = 0;
        for (std::size_t j = 0; j < width; ++j) mu += x[j];
        mu /= static_cast<Real>(width);
        Real var = 0;
        for (std::size_t j = 0; j < width; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<Real>(width);
        const Real is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < width; ++j) {
            const Real h = (x[j] - mu) * is;
            xhat[r * width + j] = h;
            out[r * width + j] = h * gv[j] + bv[j];
        }
    }
    NodePtr an = a.node(), gn = gain.node(), bn = bias.node();
    return make_result(
        a.shape(), std::move(out), {&a, &gain, &bias},
        [an, gn, bn, width, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& o) {
            const Real inv_w = 1.0 / static_cast<Real>(width);
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* g = o.grad.data() + r * width;
                const Real* h = xhat.data() + r * width;
                if (gn->requires_grad) {
                    Real* gg = gn->grad_buffer();
                    for (std::size_t j = 0; j < width; ++j) gg[j] += g[j] * h[j];
                }
                if (bn->requires_grad) {
                    Real* gb = bn->grad_buffer();
                    for (std::size_t j = 0; j < width; ++j) gb[j] += g[j];
                }
                if (an->requires_grad) {
                    Real mean_d = 0, mean_dh = 0;
                    for (std::size_t j = 0; j < width; ++j) {
                        const Real d = g[j] * gn->value[j];
                        mean_d += d;
                        mean_dh += d * h[j];
                    }
                    mean_d *= inv_w;
                    mean_dh *= inv_w;
                    Real* ga = an->grad_buffer() + r * width;
                    for (std::size_t j = 0; j < width; ++j) {
                        const Real d = g[j] * gn->value[j];
                        ga[j] += inv_std[r] * (d - mean_d - h[j] * mean_dh);
                    }
                }
            }
        },
        "layer_norm");
}

// ----------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
    NodePtr an = a.node();
    auto av = a.values();
    return make_result(
        std::move(shape), std::vector<Real>(av.begin(), av.end()), {&a},
        [an](Node& o) {
            Real* ga = an->grad_buffer();
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
        },
        "reshape");
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
    const std::size_t r = a.rank();
    std::vector<bool> used(r, false);
    if (axes.size() != r) throw ShapeError("permute: axis list length differs from rank");
    for (auto ax : axes) {
        if (ax >= r || used[ax]) throw ShapeError("permute: axes must be a permutation");
        used[ax] = true;
    }
    const Shape& in = a.shape();
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t d = r - 1; d-- > 0;) in_stride[d] = in_stride[d + 1] * in[d + 1];
    Shape out_shape(r);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in[axes[i]];
        step[i] = in_stride[axes[i]];
    }
    const std::size_t total = a.numel();
    std::vector<std::size_t> source(total);
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t src = 0;
        for (std::size_t flat = 0; flat < total; ++flat) {
            source[flat] = src;
            for (std::size_t d = r; d-- > 0;) {
                src += step[d];
                if (++idx[d] < out_shape[d]) break;
                src -= step[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    }
    auto av = a.values();
    std::vector<Real> out(total);
    for (std::size_t i = 0; i < total; ++i) out[i] = av[source[i]];
    NodePtr an = a.node();
    return make_result(
        std::move(out_shape), std::move(out), {&a},
        [an, source = std::move(source)](Node& o) {
            Real* ga = an->grad_buffer();
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[source[i]] += o.grad[i];
        },
        "permute");
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= a.rank() || begin >= end || end > a.shape()[axis])
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " invalid for " +
                         shape_str(a.shape()));
    const Shape& in = a.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
    for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
    const std::size_t extent = in[axis], len = end - begin;
    Shape out_shape = in;
    out_shape[axis] = len;
    auto av = a.values();
    std::vector<Real> out(outer * len * inner);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(av.data() + (o * extent + begin) * inner, len * inner,
                    out.data() + o * len * inner);
    NodePtr an = a.node();
    return make_result(
        std::move(out_shape), std::move(out), {&a},
        [an, outer, inner, extent, begin, len](Node& o) {
            Real* ga = an->grad_buffer();
            for (std::size_t b = 0; b < outer; ++b) {
                const Real* g = o.grad.data() + b * len * inner;
                Real* dst = ga + (b * extent + begin) * inner;
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        },
        "slice");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range");
    std::size_t total_axis = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
        s[axis] = first[axis];
        if (s != first)
            throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " +
                             shape_str(first) + " along axis " + std::to_string(axis));
        total_axis += p.shape()[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
    Shape out_shape = first;
    out_shape[axis] = total_axis;
    std::vector<Real> out(outer * total_axis * inner);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t len = p.shape()[axis];
        auto pv = p.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.data() + o * len * inner, len * inner,
                        out.data() + (o * total_axis + off) * inner);
        off += len;
    }
    std::vector<NodePtr> nodes;
    std::vector<const Tensor*> inputs;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        inputs.push_back(&p);
    }
    return make_result(
        std::move(out_shape), std::move(out), inputs,
        [nodes, offsets, outer, inner, total_axis, axis](Node& o) {
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (!nodes[i]->requires_grad) continue;
                const std::size_t len = nodes[i]->shape[axis];
                Real* gp = nodes[i]->grad_buffer();
                for (std::size_t b = 0; b < outer; ++b) {
                    const Real* g = o.grad.data() + (b * total_axis + offsets[i]) * inner;
                    Real* dst = gp + b * len * inner;
                    for (std::size_t j = 0; j < len * inner; ++j) dst[j] += g[j];
                }
            }
        },
        "concat");
}

Tensor index_select(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices) {
    if (axis >= a.rank()) throw ShapeError("index_select: axis out of range");
    if (indices.empty()) throw ShapeError("index_select: empty index list");
    const Shape& in = a.shape();
    for (auto i : indices)
        if (i >= in[axis])
            throw ShapeError("index_select: index " + std::to_string(i) + " out of range for axis " +
                             std::to_string(axis) + " of " + shape_str(in));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
    for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
    const std::size_t extent = in[axis], len = indices.size();
    Shape out_shape = in;
    out_shape[axis] = len;
    auto av = a.values();
    std::vector<Real> out(outer * len * inner);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j)
            std::copy_n(av.data() + (o * extent + indices[j]) * inner, inner,
                        out.data() + (o * len + j) * inner);
    NodePtr an = a.node();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_result(
        std::move(out_shape), std::move(out), {&a},
        [an, idx = std::move(idx), outer, inner, extent](Node& o) {
            Real* ga = an->grad_buffer();
            const std::size_t len = idx.size();
            for (std::size_t b = 0; b < outer; ++b)
                for (std::size_t j = 0; j < len; ++j) {
                    const Real* g = o.grad.data() + (b * len + j) * inner;
                    Real* dst = ga + (b * extent + idx[j]) * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
        },
        "index_select");
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
    if (!is_suffix(a.shape(), shape))
        throw ShapeError("broadcast_to: " + shape_str(a.shape()) + " is not a suffix of " +
                         shape_str(shape));
    const std::size_t n = a.numel(), total = numel_of(shape);
    auto av = a.values();
    std::vector<Real> out(total);
    for (std::size_t i = 0; i < total; i += n) std::copy_n(av.data(), n, out.data() + i);
    NodePtr an = a.node();
    return make_result(
        shape, std::move(out), {&a},
        [an, n](Node& o) {
            Real* ga = an->grad_buffer();
            for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i % n] += o.grad[i];
        },
        "broadcast_to");
}

} // namespace stdmae
