// Acceptance suite: one PASS/FAIL line per criterion.
// usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "stdmae/errors.hpp"
#include "stdmae/forecaster.hpp"
#include "stdmae/harness.hpp"
#include "stdmae/mae.hpp"
#include "stdmae/synth.hpp"

#ifndef STDMAE_CLI_PATH
#define STDMAE_CLI_PATH "stdmae"
#endif

using namespace stdmae;
using stdmae::testing::gradient_relative_error;
using stdmae::testing::random_tensor;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream o;
    o.precision(prec);
    o << v;
    return o.str();
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "stdmae_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<Real> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

MaeConfig small_mae(Axis axis, std::size_t L, std::size_t D, std::size_t long_len, std::size_t layers = 1) {
    MaeConfig c;
    c.patch = PatchConfig{L, D, long_len, 1};
    c.axis = axis;
    c.heads = 2;
    c.encoder_layers = layers;
    c.decoder_layers = 1;
    c.ffn_mult = 2;
    return c;
}

// ---------------------------------------------------------------------------
// 1. gradients against central differences

Outcome gradient_fidelity() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    double worst = 0;
    std::string worst_name;
    auto check = [&](const std::string& name, std::function<Tensor()> f, std::vector<Tensor> params) {
        const auto w = random_tensor(f().shape(), rng, false);
        const auto err = gradient_relative_error([&] { return sum(mul(f(), w)); }, params, 1e-4);
        if (!(err <= worst)) {
            worst = err;
            worst_name = name;
        }
    };
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 3, 4}, rng);
    auto bias = random_tensor({4}, rng);
    auto m = random_tensor({4, 5}, rng);
    auto mt = random_tensor({5, 4}, rng);
    auto bb = random_tensor({2, 4, 3}, rng);
    auto gain = random_tensor({4}, rng, true, 0.5, 1.5);
    const std::vector<unsigned char> keep{1, 0, 1, 1, 1, 1, 0, 1};
    const std::vector<std::size_t> idx{2, 0, 2};
    std::size_t primitives = 0;
    const std::vector<std::pair<std::string, std::pair<std::function<Tensor()>, std::vector<Tensor>>>> prims = {
        {"add", {[&] { return add(a, b); }, {a, b}}},
        {"add broadcast", {[&] { return add(a, bias); }, {a, bias}}},
        {"sub", {[&] { return sub(bias, a); }, {a, bias}}},
        {"mul", {[&] { return mul(a, b); }, {a, b}}},
        {"mul broadcast", {[&] { return mul(bias, a); }, {a, bias}}},
        {"scale", {[&] { return scale(a, 1.7); }, {a}}},
        {"add_scalar", {[&] { return add_scalar(a, -0.3); }, {a}}},
        {"abs", {[&] { return abs(a); }, {a}}},
        {"relu", {[&] { return relu(a); }, {a}}},
        {"gelu", {[&] { return gelu(a); }, {a}}},
        {"tanh", {[&] { return tanh(a); }, {a}}},
        {"sum", {[&] { return sum(a); }, {a}}},
        {"mean", {[&] { return mean(a); }, {a}}},
        {"matmul", {[&] { return matmul(a, m); }, {a, m}}},
        {"matmul transposed", {[&] { return matmul(a, mt, true); }, {a, mt}}},
        {"matmul batched", {[&] { return matmul(a, bb); }, {a, bb}}},
        {"softmax_last", {[&] { return softmax_last(a); }, {a}}},
        {"masked_softmax_last", {[&] { return masked_softmax_last(a, keep, 3); }, {a}}},
        {"layer_norm", {[&] { return layer_norm(a, gain, bias); }, {a, gain, bias}}},
        {"reshape", {[&] { return reshape(a, {6, 4}); }, {a}}},
        {"permute", {[&] { return permute(a, {1, 2, 0}); }, {a}}},
        {"slice", {[&] { return slice(a, 2, 1, 3); }, {a}}},
        {"concat", {[&] { return concat({a, b}, 0); }, {a, b}}},
        {"index_select", {[&] { return index_select(a, 1, idx); }, {a}}},
        {"broadcast_to", {[&] { return broadcast_to(bias, {2, 3, 4}); }, {bias}}},
    };
    for (const auto& [name, fp] : prims) {
        check(name, fp.first, fp.second);
        ++primitives;
    }

    // one encoder block per axis inside the full autoencoder: N=3, T_p=2, D=8
    for (Axis axis : {Axis::spatial, Axis::temporal}) {
        MaeModel model(small_mae(axis, 4, 8, 8), 5);
        for (auto* t : {&model.regression.weight, &model.regression.bias})
            for (auto& v : t->values_mut()) v = std::uniform_real_distribution<Real>(-0.5, 0.5)(rng);
        const auto window = random_tensor({8, 3, 1}, rng, false);
        const auto spec = axis == Axis::spatial ? make_mask(MaskAxis::spatial, 3, {1})
                                                : make_mask(MaskAxis::temporal, 2, {0});
        auto params = tensors_of(model.parameters());
        check("encoder block (" + to_string(axis) + ")",
              [&] {
                  const auto e = model.embed_window(window);
                  return model.decode_grid(model.encode(apply_mask(e, spec)), spec, 2, 3);
              },
              params);
    }

    ForecasterConfig fc;
    fc.hidden = 6;
    fc.horizon = 3;
    fc.input_len = 4;
    fc.dilations = {1, 2};
    fc.truncate = 2;
    fc.rep_width = 3;
    fc.use_spatial = true;
    fc.use_temporal = true;
    fc.aug_init_gain = 1.0;
    ForecasterModel fm(fc, 3);
    for (auto& [name, t] : fm.parameters())
        for (auto& v : t.values_mut()) v += std::uniform_real_distribution<Real>(-0.1, 0.1)(rng);
    auto hidden = random_tensor({2, 3, 6}, rng);
    auto head_params = tensors_of(fm.parameters());
    head_params.push_back(hidden);
    check("forecast head", [&] { return fm.forecast_head(hidden); }, head_params);
    const auto x = random_tensor({2, 4, 3, 1}, rng, false);
    const auto s = random_tensor({2, 3, 6}, rng, false);
    const auto t = random_tensor({2, 3, 6}, rng, false);
    check("forecaster", [&] { return fm.forward(x, &s, &t); }, tensors_of(fm.parameters()));

    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst < 1e-4 && secs < 60;
    o.detail = std::to_string(primitives) + " primitives + 2 encoder blocks + head + forecaster, worst rel err " +
               fmt(worst, 3) + " (" + worst_name + "), " + fmt(secs, 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 2. the loss only reaches masked decoder outputs

Outcome masked_loss_locality() {
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<std::size_t> pick(2, 5);
    std::size_t bad = 0, checked = 0, masked_nonzero = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t L = pick(rng), P = pick(rng), N = pick(rng);
        const auto mask_axis = static_cast<MaskAxis>(trial % 3);
        const Axis axis = mask_axis == MaskAxis::spatial ? Axis::spatial
                          : mask_axis == MaskAxis::temporal ? Axis::temporal
                                                            : (trial % 2 ? Axis::spatial : Axis::temporal);
        MaeModel model(small_mae(axis, L, 8, L * P), rng());
        for (auto* t : {&model.regression.weight, &model.regression.bias})
            for (auto& v : t->values_mut()) v = std::uniform_real_distribution<Real>(-0.5, 0.5)(rng);
        const std::size_t extent = mask_extent(mask_axis, P, N);
        const double r = std::uniform_real_distribution<double>(0.25, 0.75)(rng);
        const auto spec = sample_mask(mask_axis, extent, std::max(r, 1.0 / extent + 1e-9), rng());
        const auto window = random_tensor({L * P, N, 1}, rng, false);
        const auto e = model.embed_window(window);
        const auto enc = mask_axis == MaskAxis::mixed ? model.encode(e, &spec) : model.encode(apply_mask(e, spec));
        // decoder output as a leaf, so its gradient is kept
        auto grid = model.decode_grid(enc, spec, P, N).detach();
        grid.set_requires_grad(true);
        const auto loss = masked_loss(gather_masked(grid, spec), masked_targets(window, spec, L));
        loss.backward();
        const auto g = grid.grad();
        std::set<std::size_t> hidden;
        for (auto i : spec.masked)
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t n = 0; n < N; ++n)
                    if ((mask_axis == MaskAxis::spatial && n == i) || (mask_axis == MaskAxis::temporal && p == i) ||
                        (mask_axis == MaskAxis::mixed && p * N + n == i))
                        hidden.insert(p * N + n);
        for (std::size_t cell = 0; cell < P * N; ++cell)
            for (std::size_t f = 0; f < L; ++f) {
                const double v = g.empty() ? 0.0 : g[cell * L + f];
                if (hidden.count(cell)) masked_nonzero += v != 0.0;
                else {
                    ++checked;
                    bad += v != 0.0;
                }
            }
    }
    Outcome o;
    o.pass = bad == 0 && masked_nonzero > 0;
    o.detail = "100 configurations, " + std::to_string(checked) + " visible gradient entries, " +
               std::to_string(bad) + " non-zero; " + std::to_string(masked_nonzero) + " masked entries carry gradient";
    return o;
}

// ---------------------------------------------------------------------------
// 3. positional encoding

Outcome positional_invariants() {
    const std::size_t P = 72, N = 50, D = 96;
    const auto e = positional_encoding(P, N, D);
    const auto v = e.values();
    auto at = [&](std::size_t t, std::size_t n, std::size_t k) { return v[(t * N + n) * D + k]; };
    std::size_t violations = 0;
    double lo = 0, hi = 0;
    for (std::size_t t = 0; t < P; ++t)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < D; ++k) {
                const double x = at(t, n, k);
                lo = std::min(lo, x);
                hi = std::max(hi, x);
                if (k < D / 2 && x != at(t, 0, k)) ++violations;   // temporal half ignores n
                if (k >= D / 2 && x != at(0, n, k)) ++violations;  // spatial half ignores t
            }
    const double spot = at(1, 0, 0);
    Outcome o;
    o.pass = violations == 0 && lo >= -1.0 && hi <= 1.0 && std::abs(spot - 0.841471) < 1e-6;
    o.detail = "72x50x96: " + std::to_string(violations) + " axis violations, range [" + fmt(lo) + ", " + fmt(hi) +
               "], value at (t=1, channel 0) = " + fmt(spot, 8);
    return o;
}

// ---------------------------------------------------------------------------
// 4. attention score buffers per axis

Outcome attention_buffers() {
    NoGradGuard no_grad;
    const std::size_t N = 50, P = 72, L = 12;
    std::mt19937_64 rng(404);
    const auto window = random_tensor({P * L, N, 1}, rng, false);
    Outcome o;
    std::string detail;
    for (Axis axis : {Axis::spatial, Axis::temporal}) {
        MaeConfig c = small_mae(axis, L, 16, P * L, 2);
        c.heads = 4;
        MaeModel m(c, 1);
        AllocationProbe alloc;
        AttentionProbe probe;
        m.represent(window);
        const auto spec = sample_mask(axis == Axis::spatial ? MaskAxis::spatial : MaskAxis::temporal,
                                      axis == Axis::spatial ? N : P, 0.25, 9);
        reconstruct(m, window, spec);
        const std::size_t side = axis == Axis::spatial ? N : P;
        std::size_t ok = 0, total = 0;
        for (const auto& s : probe.score_shapes()) {
            ++total;
            // masked encoders see fewer keys along the masked axis
            const bool square = s.size() == 4 && s[1] == 4 && s[2] == s[3] && s[2] <= side;
            ok += square;
        }
        const bool full_sized = std::any_of(probe.score_shapes().begin(), probe.score_shapes().end(),
                                            [&](const Shape& s) { return s[2] == side && s[3] == side; });
        const bool no_joint = alloc.max_elements() < (N * P) * (N * P);
        o.pass = o.pass && total > 0 && ok == total && full_sized && no_joint;
        detail += (detail.empty() ? "" : "; ") + to_string(axis) + ": " + std::to_string(total) +
                  " score buffers, all [groups, heads, " + std::to_string(side) + "-or-fewer, same]" +
                  (ok == total ? "" : " VIOLATED") + ", largest allocation " + std::to_string(alloc.max_elements()) +
                  " < (N*T_p)^2 = " + std::to_string((N * P) * (N * P));
    }
    o.detail = detail;
    return o;
}

// ---------------------------------------------------------------------------
// 5. each encoder commutes with permutations of the other axis

Outcome axis_isolation() {
    NoGradGuard no_grad;
    std::size_t equal = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(500 + seed);
        const std::size_t P = 7, N = 6, D = 16;
        const auto x = random_tensor({P, N, D}, rng, false);
        std::vector<std::size_t> pp(P), pn(N);
        std::iota(pp.begin(), pp.end(), 0);
        std::iota(pn.begin(), pn.end(), 0);
        std::shuffle(pp.begin(), pp.end(), rng);
        std::shuffle(pn.begin(), pn.end(), rng);
        MaeModel sm(small_mae(Axis::spatial, 4, D, 4 * P, 2), seed);
        MaeModel tm(small_mae(Axis::temporal, 4, D, 4 * P, 2), seed);
        equal += to_vec(sm.encode(index_select(x, 0, pp))) == to_vec(index_select(sm.encode(x), 0, pp));
        equal += to_vec(tm.encode(index_select(x, 1, pn))) == to_vec(index_select(tm.encode(x), 1, pn));
    }
    Outcome o;
    o.pass = equal == 10;
    o.detail = std::to_string(equal) + "/10 exact equalities (5 seeds x 2 encoders)";
    return o;
}

// ---------------------------------------------------------------------------
// reconstruction of masked slots over windows ending in `range`

struct MaskedElement {
    std::size_t step, node;
    Real predicted, truth;
    std::vector<std::size_t> visible_nodes;
};

std::vector<MaskedElement> masked_elements(const MaeModel& model, const SeriesDataset& ds, IndexRange range,
                                           MaskAxis axis, double ratio, std::size_t stride, std::uint64_t seed) {
    NoGradGuard no_grad;
    const auto& pc = model.config.patch;
    const std::size_t L = pc.patch_len, P = pc.num_patches(), N = ds.nodes();
    std::vector<MaskedElement> out;
    std::mt19937_64 rng(seed);
    for (std::size_t start : long_window_starts(pc.long_len, range, stride)) {
        const auto spec = sample_mask(axis, mask_extent(axis, P, N), ratio, rng());
        const auto rec = reconstruct(model, ds.window(start, pc.long_len), spec);
        const auto pv = rec->predicted.values();
        const auto tv = rec->truth.values();
        for (std::size_t e = 0; e < pv.size(); ++e) {
            const std::size_t l = e % L, slot = e / L;
            std::size_t p, n;
            if (axis == MaskAxis::spatial) {
                p = slot / spec.masked.size();
                n = spec.masked[slot % spec.masked.size()];
            } else {
                p = spec.masked[slot / N];
                n = slot % N;
            }
            const std::size_t step = start + p * L + l;
            if (!range.contains(step)) continue;
            out.push_back({step, n, pv[e], tv[e], axis == MaskAxis::spatial ? spec.visible : std::vector<std::size_t>{}});
        }
    }
    return out;
}

PretrainConfig reconstruction_config(Axis axis, std::size_t long_len, std::size_t epochs) {
    PretrainConfig c;
    c.model.patch = PatchConfig{12, 32, long_len, 1};
    c.model.axis = axis;
    c.model.heads = 4;
    c.model.encoder_layers = 2;
    c.model.decoder_layers = 1;
    c.model.ffn_mult = 2;
    c.mask_axis = axis == Axis::spatial ? MaskAxis::spatial : MaskAxis::temporal;
    c.mask_ratio = 0.25;
    c.epochs = epochs;
    c.batch_size = 4;
    c.lr = 2e-3;
    c.grad_clip = 1.0;
    c.seed = 7;
    c.window_stride = 12;
    c.val_window_stride = 96;
    return c;
}

// ---------------------------------------------------------------------------
// 6. temporal autoencoder against per-node time-of-day climatology

Outcome temporal_reconstruction() {
    const auto t0 = Clock::now();
    const std::size_t period = 288;
    auto spec = sinusoid_spec(20, 2880, 0.1, 61);
    const auto raw = synth_generate(spec).dataset;
    auto clean_spec = spec;
    clean_spec.noise_std = 0;
    const auto clean = synth_generate(clean_spec).dataset;
    const auto ds = fit_and_apply_zscore(raw);
    const auto& norm = *ds.norm();
    const auto splits = ds.splits();

    const auto cfg = reconstruction_config(Axis::temporal, 864, 50);
    const auto res = pretrain(ds, cfg);
    const auto elements = masked_elements(res.checkpoint.model, ds, splits.val, MaskAxis::temporal, 0.25, 24, 66);

    // climatology: per node and time of day, mean over the training split
    const std::size_t N = ds.nodes();
    std::vector<double> clim(N * period, 0.0), count(N * period, 0.0);
    for (std::size_t t = splits.train.begin; t < splits.train.end; ++t)
        for (std::size_t n = 0; n < N; ++n) {
            clim[n * period + t % period] += raw.at(t, n);
            count[n * period + t % period] += 1;
        }
    for (std::size_t i = 0; i < clim.size(); ++i) clim[i] /= count[i];

    double model_err = 0, clim_err = 0, floor_err = 0;
    for (const auto& e : elements) {
        const double truth = e.truth * norm.std[0] + norm.mean[0];
        model_err += std::abs(e.predicted * norm.std[0] + norm.mean[0] - truth);
        clim_err += std::abs(clim[e.node * period + e.step % period] - truth);
        floor_err += std::abs(clean.at(e.step, e.node) - truth);  // noise-free signal as the prediction
    }
    const double n = static_cast<double>(elements.size());
    const double mae = model_err / n, climatology = clim_err / n, noise_floor = floor_err / n;
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = !elements.empty() && mae < 0.5 * climatology && res.epochs.size() <= 50 && secs < 600;
    o.detail = "masked MAE " + fmt(mae) + " vs 0.5 x climatology " + fmt(0.5 * climatology) + " (climatology " +
               fmt(climatology) + ", ratio " + fmt(mae / climatology) + "); noise-free signal scores " +
               fmt(noise_floor) + " = " + fmt(noise_floor / climatology) + " x climatology; " +
               std::to_string(res.epochs.size()) + " epochs, " + std::to_string(elements.size()) + " elements, " +
               fmt(secs, 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 7. spatial autoencoder against the cross-sectional mean

Outcome spatial_reconstruction() {
    const auto t0 = Clock::now();
    const auto raw = synth_generate(latent_mixture_spec(20, 2880, 3, 0.1, 71)).dataset;
    const auto ds = fit_and_apply_zscore(raw);
    const auto splits = ds.splits();
    const auto cfg = reconstruction_config(Axis::spatial, 96, 100);
    const auto res = pretrain(ds, cfg);
    const auto elements = masked_elements(res.checkpoint.model, ds, splits.val, MaskAxis::spatial, 0.25, 48, 77);

    double model_err = 0, mean_err = 0;
    for (const auto& e : elements) {
        double m = 0;
        for (auto v : e.visible_nodes) m += ds.at(e.step, v);
        m /= static_cast<double>(e.visible_nodes.size());
        model_err += std::abs(e.predicted - e.truth);
        mean_err += std::abs(m - e.truth);
    }
    const double n = static_cast<double>(elements.size());
    const double mae = model_err / n, oracle = mean_err / n;
    Outcome o;
    o.pass = !elements.empty() && mae < 0.5 * oracle;
    o.detail = "masked-sensor MAE " + fmt(mae) + " vs 0.5 x cross-sectional mean " + fmt(0.5 * oracle) +
               " (ratio " + fmt(mae / oracle) + ", normalized units); " + std::to_string(elements.size()) +
               " elements, " + fmt(seconds_since(t0), 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// harness configurations

ExperimentConfig tiny_experiment(const fs::path& dir) {
    ExperimentConfig c;
    c.synth_nodes = 5;
    c.synth_steps = 700;
    c.synth_period = 48;
    c.synth_mirage_fraction = 0.3;
    c.synth_seed = 3;
    c.long_len = 48;
    c.width = 8;
    c.hidden = 8;
    c.mae_heads = 2;
    c.mae_encoder_layers = 1;
    c.mae_ffn_mult = 2;
    c.mae_epochs = 3;
    c.mae_window_stride = 12;
    c.forecast_epochs = 3;
    c.output_dir = dir.string();
    return c;
}

ExperimentConfig mirage_experiment(const fs::path& dir) {
    ExperimentConfig c;
    c.synth_nodes = 20;
    c.synth_steps = 2880;
    c.synth_period = 288;
    c.synth_noise = 0.1;
    c.synth_mirage_fraction = 0.3;
    c.synth_seed = 1;
    c.width = 32;
    c.hidden = 32;
    c.truncate = 2;
    c.mae_heads = 4;
    c.mae_encoder_layers = 2;
    c.mae_ffn_mult = 2;
    c.mae_epochs = 6;
    c.mae_window_stride = 24;
    c.mae_val_window_stride = 96;
    c.mae_seed = 1;
    c.forecast_epochs = 30;
    c.forecast_patience = 0;
    c.forecast_seed = 1;
    c.output_dir = dir.string();
    return c;
}

// ---------------------------------------------------------------------------
// 8. augmentation on planted mirage windows

Outcome mirage_direction() {
    const auto t0 = Clock::now();
    const auto cfg = mirage_experiment(scratch("mirage"));
    cmd_pretrain(cfg);
    const auto rep = cmd_train(cfg);
    const double aug = rep["comparison"]["val"]["augmented_mae"], base = rep["comparison"]["val"]["baseline_mae"];
    const double improvement = rep["mirage"]["improvement"];
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = aug < base && improvement >= 0.2 && secs < 900;
    o.detail = "val MAE augmented " + fmt(aug) + " vs baseline " + fmt(base) + "; mirage-window MAE " +
               fmt(rep["mirage"]["augmented_mae"].get<double>()) + " vs " +
               fmt(rep["mirage"]["baseline_mae"].get<double>()) + " (" + fmt(100 * improvement, 3) +
               "% better, " + std::to_string(rep["mirage"]["held_out_windows"].get<int>()) + " held-out windows); " +
               fmt(secs, 3) + " s";
    return o;
}

// ---------------------------------------------------------------------------
// 9. mode none against a standalone baseline

Outcome degenerate_reduction() {
    auto cfg = tiny_experiment(scratch("none"));
    cfg.ablation = "none";
    cmd_pretrain(cfg);
    cmd_train(cfg);
    const auto harness = load_forecaster(RunLayout{cfg.output_dir}.forecaster());

    const auto ds = fit_and_apply_zscore(synth_generate(cfg.synth_spec()).dataset.with_ratios(cfg.ratios()));
    const auto data = make_forecast_data(ds, cfg.window());
    auto fc = cfg.forecaster_config(false);
    fc.channels = ds.channels();
    const auto standalone = train_forecaster(data, fc, cfg.forecast_train_config());

    const auto a = predict(harness.model, data, data.test.samples);
    const auto b = predict(standalone.model, data, data.test.samples);
    Outcome o;
    o.pass = !a.empty() && a == b;
    std::size_t diff = 0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) diff += a[i] != b[i];
    o.detail = std::to_string(a.size()) + " test predictions, " + std::to_string(diff) + " differ bitwise";
    return o;
}

// ---------------------------------------------------------------------------
// 10. metrics against scalar loops

Outcome metrics_oracle() {
    std::mt19937_64 rng(1010);
    std::uniform_real_distribution<Real> u(-5, 5);
    double worst = 0;
    std::size_t horizon_mismatch = 0;
    const Real threshold = 0.5;
    for (int inst = 0; inst < 1000; ++inst) {
        const std::size_t S = 1 + inst % 4, H = 12, N = 1 + inst % 5, C = 1 + inst % 2;
        const std::size_t total = S * H * N * C;
        std::vector<Real> p(total), y(total);
        for (auto& v : p) v = u(rng);
        for (auto& v : y) v = u(rng);
        if (inst % 7 == 0) y[inst % total] = 0;
        const auto r = evaluate(p, y, Shape{S, H, N, C}, threshold);
        double ae = 0, se = 0, pe = 0;
        std::size_t pc = 0;
        for (std::size_t i = 0; i < total; ++i) {
            const double d = p[i] - y[i];
            ae += std::abs(d);
            se += d * d;
            if (std::abs(y[i]) >= threshold) {
                pe += std::abs(d / y[i]);
                ++pc;
            }
        }
        worst = std::max(worst, std::abs(r.overall.mae - ae / total));
        worst = std::max(worst, std::abs(r.overall.rmse - std::sqrt(se / total)));
        if (pc) worst = std::max(worst, std::abs(*r.overall.mape - 100.0 * pe / pc) / 100.0);
        for (const auto& [k, m] : r.horizons) {
            double hae = 0, hse = 0;
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t j = 0; j < N * C; ++j) {
                    const double d = p[(s * H + k - 1) * N * C + j] - y[(s * H + k - 1) * N * C + j];
                    hae += std::abs(d);
                    hse += d * d;
                }
            const double cnt = static_cast<double>(S * N * C);
            worst = std::max(worst, std::abs(m.mae - hae / cnt));
            worst = std::max(worst, std::abs(m.rmse - std::sqrt(hse / cnt)));
        }
        std::vector<std::size_t> ks;
        for (const auto& h : r.horizons) ks.push_back(h.first);
        horizon_mismatch += ks != std::vector<std::size_t>{3, 6, 12};
    }
    Outcome o;
    o.pass = worst < 1e-12 && horizon_mismatch == 0;
    o.detail = "1000 instances, worst deviation " + fmt(worst, 3) + " (MAPE as a fraction), horizons {3,6,12} at step k: " +
               std::to_string(1000 - horizon_mismatch) + "/1000";
    return o;
}

// ---------------------------------------------------------------------------
// 11. two identical pipeline runs

struct RunCapture {
    nlohmann::json pretrain, train, eval;
    std::map<std::string, std::string> files;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

RunCapture capture_run(const ExperimentConfig& cfg) {
    fs::remove_all(cfg.output_dir);
    const auto r = cmd_run(cfg);
    RunCapture c{strip_timings(r["pretrain"]), strip_timings(r["train"]), r["eval"], {}};
    for (const auto& e : fs::recursive_directory_iterator(cfg.output_dir))
        if (e.is_regular_file()) c.files[fs::relative(e.path(), cfg.output_dir).string()] = slurp(e.path());
    return c;
}

std::vector<double> head5(const nlohmann::json& losses) {
    std::vector<double> v;
    for (std::size_t i = 0; i < std::min<std::size_t>(5, losses.size()); ++i) v.push_back(losses[i]);
    return v;
}

Outcome determinism() {
    const auto cfg = tiny_experiment(scratch("determinism") / "run");
    const auto a = capture_run(cfg);
    const auto b = capture_run(cfg);
    std::size_t phases = 0, phase_equal = 0;
    for (std::size_t i = 0; i < a.pretrain["encoders"].size(); ++i) {
        ++phases;
        const auto la = head5(a.pretrain["encoders"][i]["step_losses"]);
        phase_equal += la.size() == 5 && la == head5(b.pretrain["encoders"][i]["step_losses"]);
    }
    for (const auto& [role, run] : a.train["runs"].items()) {
        ++phases;
        const auto la = head5(run["step_losses"]);
        phase_equal += la.size() == 5 && la == head5(b.train["runs"][role]["step_losses"]);
    }
    const bool reports = a.pretrain == b.pretrain && a.train == b.train && a.eval == b.eval;
    std::size_t same_files = 0;
    std::vector<std::string> differing;
    for (const auto& [name, content] : a.files) {
        const auto it = b.files.find(name);
        if (it != b.files.end() && it->second == content) ++same_files;
        else if (name.find("report.json") == std::string::npos && name.find("summary.json") == std::string::npos)
            differing.push_back(name);  // reports carry timings, compared above
    }
    Outcome o;
    o.pass = phases == 4 && phase_equal == phases && reports && differing.empty();
    o.detail = std::to_string(phase_equal) + "/" + std::to_string(phases) +
               " phases with identical first 5 losses; reports without timings " + (reports ? "identical" : "DIFFER") +
               "; " + std::to_string(same_files) + "/" + std::to_string(a.files.size()) + " files byte-identical";
    for (const auto& d : differing) o.detail += "; differs: " + d;
    return o;
}

// ---------------------------------------------------------------------------
// 12. masking-ratio sweep through the command line

Outcome ratio_sweep() {
    const auto dir = scratch("sweep");
    auto cfg = tiny_experiment(dir / "run");
    {
        std::ofstream out(dir / "sweep.cfg");
        out << dump_config(cfg);
    }
    const std::string cmd = std::string("\"") + STDMAE_CLI_PATH + "\" sweep -c \"" + (dir / "sweep.cfg").string() +
                            "\" --ratios 0.25,0.5,0.75 > \"" + (dir / "stdout.txt").string() + "\" 2> \"" +
                            (dir / "stderr.txt").string() + "\"";
    const int rc = std::system(cmd.c_str());
    Outcome o;
    if (rc != 0) {
        o.pass = false;
        o.detail = "sweep command exited with " + std::to_string(rc) + ": " + slurp(dir / "stderr.txt");
        return o;
    }
    const auto table = slurp(dir / "run" / "sweep.md");
    const auto rows = nlohmann::json::parse(slurp(dir / "run" / "sweep.json"));
    std::vector<double> ratios;
    bool metrics = true;
    for (const auto& r : rows) {
        ratios.push_back(r["mask_ratio"]);
        metrics = metrics && r.contains("val_mae") && r.contains("test_mae");
    }
    const bool listed = table.find("0.25") != std::string::npos && table.find("0.5") != std::string::npos &&
                        table.find("0.75") != std::string::npos;
    o.pass = ratios == std::vector<double>{0.25, 0.5, 0.75} && metrics && listed && fs::exists(dir / "run" / "sweep.csv");
    o.detail = "one command, " + std::to_string(rows.size()) + " rows;";
    for (const auto& r : rows)
        o.detail += " r=" + fmt(r["mask_ratio"].get<double>()) + " val MAE " + fmt(r["val_mae"].get<double>());
    return o;
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient fidelity", gradient_fidelity},
        {"masked-loss locality", masked_loss_locality},
        {"positional-encoding invariants", positional_invariants},
        {"per-axis attention buffers", attention_buffers},
        {"axis isolation", axis_isolation},
        {"temporal reconstruction vs climatology", temporal_reconstruction},
        {"spatial reconstruction vs cross-sectional mean", spatial_reconstruction},
        {"augmentation on mirage windows", mirage_direction},
        {"mode none equals the baseline", degenerate_reduction},
        {"metrics oracle", metrics_oracle},
        {"determinism", determinism},
        {"masking-ratio sweep", ratio_sweep},
    };
    std::set<std::size_t> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected.empty() && !selected.count(i + 1)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failed ? 1 : 0;
}
