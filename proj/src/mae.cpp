#include "stdmae/mae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "stdmae/container.hpp"
#include "stdmae/errors.hpp"
#include "stdmae/optim.hpp"

namespace stdmae {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
    auto splitmix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    std::uint64_t h = splitmix(a);
    h = splitmix(h ^ b);
    h = splitmix(h ^ c);
    return splitmix(h ^ d);
}

std::string to_string(Axis a) { return a == Axis::spatial ? "spatial" : "temporal"; }

std::string to_string(MaskAxis a) {
    switch (a) {
        case MaskAxis::spatial: return "spatial";
        case MaskAxis::temporal: return "temporal";
        case MaskAxis::mixed: return "mixed";
    }
    return "?";
}

std::string to_string(MaskSampling s) { return s == MaskSampling::fixed_count ? "fixed_count" : "bernoulli"; }

Axis parse_axis(const std::string& s) {
    if (s == "spatial") return Axis::spatial;
    if (s == "temporal") return Axis::temporal;
    throw ConfigError("unknown axis '" + s + "' (spatial|temporal)");
}

MaskAxis parse_mask_axis(const std::string& s) {
    if (s == "spatial") return MaskAxis::spatial;
    if (s == "temporal") return MaskAxis::temporal;
    if (s == "mixed") return MaskAxis::mixed;
    throw ConfigError("unknown mask axis '" + s + "' (spatial|temporal|mixed)");
}

MaskSampling parse_mask_sampling(const std::string& s) {
    if (s == "fixed_count") return MaskSampling::fixed_count;
    if (s == "bernoulli") return MaskSampling::bernoulli;
    throw ConfigError("unknown mask sampling '" + s + "' (fixed_count|bernoulli)");
}

// ---------------------------------------------------------------- masking

namespace {

void fill_visible(MaskSpec& spec) {
    std::vector<unsigned char> hit(spec.extent, 0);
    for (auto i : spec.masked) {
        if (i >= spec.extent)
            throw ShapeError("mask index " + std::to_string(i) + " outside extent " + std::to_string(spec.extent));
        if (hit[i]) throw ShapeError("duplicate mask index " + std::to_string(i));
        hit[i] = 1;
    }
    spec.visible.clear();
    for (std::size_t i = 0; i < spec.extent; ++i)
        if (!hit[i]) spec.visible.push_back(i);
}

std::size_t masked_axis_dim(MaskAxis a) { return a == MaskAxis::temporal ? 0 : 1; }

} // namespace

std::size_t mask_extent(MaskAxis axis, std::size_t patches, std::size_t nodes) {
    switch (axis) {
        case MaskAxis::spatial: return nodes;
        case MaskAxis::temporal: return patches;
        case MaskAxis::mixed: return patches * nodes;
    }
    return 0;
}

MaskSpec sample_mask(MaskAxis axis, std::size_t extent, double r, std::uint64_t seed, MaskSampling sampling) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("masking ratio must lie in (0, 1), got " + std::to_string(r));
    if (extent < 2) throw ConfigError("mask extent " + std::to_string(extent) + " is too small to mask");
    MaskSpec spec;
    spec.axis = axis;
    spec.ratio = r;
    spec.extent = extent;
    spec.seed = seed;
    Rng rng(seed);
    if (sampling == MaskSampling::fixed_count) {
        const auto count = static_cast<std::size_t>(std::floor(static_cast<double>(extent) * r + 1e-9));
        if (count < 1)
            throw ConfigError("masking ratio " + std::to_string(r) + " masks no index of extent " +
                              std::to_string(extent));
        std::vector<std::size_t> idx(extent);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, extent - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        spec.masked.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
    } else {
        std::bernoulli_distribution hide(r);
        do {
            spec.masked.clear();
            for (std::size_t i = 0; i < extent; ++i)
                if (hide(rng)) spec.masked.push_back(i);
        } while (spec.masked.empty() || spec.masked.size() == extent);
    }
    std::sort(spec.masked.begin(), spec.masked.end());
    fill_visible(spec);
    return spec;
}

MaskSpec make_mask(MaskAxis axis, std::size_t extent, std::vector<std::size_t> masked) {
    MaskSpec spec;
    spec.axis = axis;
    spec.extent = extent;
    spec.masked = std::move(masked);
    spec.ratio = extent ? static_cast<double>(spec.masked.size()) / static_cast<double>(extent) : 0.0;
    fill_visible(spec);
    return spec;
}

Tensor apply_mask(const Tensor& embedding, const MaskSpec& spec) {
    if (embedding.rank() != 3) throw ShapeError("apply_mask expects [T_p, N, D], got " + shape_str(embedding.shape()));
    if (spec.axis == MaskAxis::mixed) throw ShapeError("apply_mask: mixed masks keep the full grid");
    const std::size_t dim = masked_axis_dim(spec.axis);
    if (embedding.dim(dim) != spec.extent)
        throw ShapeError("mask extent " + std::to_string(spec.extent) + " does not match " + to_string(spec.axis) +
                         " extent " + std::to_string(embedding.dim(dim)));
    if (spec.visible.empty()) throw ShapeError("mask hides every slice");
    return index_select(embedding, dim, spec.visible);
}

// ---------------------------------------------------------------- config

void MaeConfig::validate() const {
    patch.validate();
    if (heads == 0 || patch.width % heads != 0)
        throw ConfigError("embedding width " + std::to_string(patch.width) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    if (encoder_layers == 0 || decoder_layers == 0) throw ConfigError("encoder and decoder need at least one layer");
    if (ffn_mult == 0) throw ConfigError("ffn_mult must be positive");
}

void to_json(nlohmann::json& j, const MaeConfig& c) {
    j = {{"patch_len", c.patch.patch_len}, {"width", c.patch.width},   {"long_len", c.patch.long_len},
         {"channels", c.patch.channels},   {"axis", to_string(c.axis)}, {"heads", c.heads},
         {"encoder_layers", c.encoder_layers}, {"decoder_layers", c.decoder_layers}, {"ffn_mult", c.ffn_mult}};
}

void from_json(const nlohmann::json& j, MaeConfig& c) {
    MaeConfig d;
    c.patch.patch_len = j.value("patch_len", d.patch.patch_len);
    c.patch.width = j.value("width", d.patch.width);
    c.patch.long_len = j.value("long_len", d.patch.long_len);
    c.patch.channels = j.value("channels", d.patch.channels);
    c.axis = parse_axis(j.value("axis", to_string(d.axis)));
    c.heads = j.value("heads", d.heads);
    c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
    c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
}

// ---------------------------------------------------------------- model

MaeModel::MaeModel(const MaeConfig& cfg, std::uint64_t seed) : config(cfg) {
    config.validate();
    Rng rng(seed);
    const std::size_t D = cfg.patch.width;
    embed = PatchEmbedding(cfg.patch, rng);
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) encoder.emplace_back(D, cfg.heads, cfg.ffn_mult, rng);
    encoder_norm = LayerNorm(D);
    std::normal_distribution<Real> tok(0.0, 0.02);
    std::vector<Real> v(D);
    for (auto& x : v) x = tok(rng);
    mask_token = Tensor({D}, std::move(v), true);
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) decoder.emplace_back(D, cfg.heads, cfg.ffn_mult, rng);
    decoder_norm = LayerNorm(D);
    regression = Linear(D, cfg.patch.patch_len * cfg.patch.channels, rng, 0.0);
}

NamedParams MaeModel::parameters() const {
    NamedParams out;
    embed.collect("embed", out);
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].collect("encoder." + std::to_string(i), out);
    encoder_norm.collect("encoder_norm", out);
    out.emplace_back("mask_token", mask_token);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].collect("decoder." + std::to_string(i), out);
    decoder_norm.collect("decoder_norm", out);
    regression.collect("regression", out);
    return out;
}

Tensor MaeModel::embed_window(const Tensor& window) const { return input_embedding(window, config.patch, embed); }

namespace {

// Runs `layers` along the model axis of a [T_p, N, D] grid. Spatial layers
// see T_p independent node sequences; temporal layers see N patch sequences.
Tensor run_axis(const std::vector<TransformerLayer>& layers, const LayerNorm& norm, Axis axis, Tensor x,
                const KeyMask* mask) {
    if (axis == Axis::temporal) x = permute(x, {1, 0, 2});
    for (const auto& layer : layers) x = layer(x, mask);
    x = norm(x);
    if (axis == Axis::temporal) x = permute(x, {1, 0, 2});
    return x;
}

} // namespace

Tensor MaeModel::encode(const Tensor& visible, const MaskSpec* mixed) const {
    if (visible.rank() != 3 || visible.dim(2) != config.patch.width)
        throw ShapeError("encoder expects [*, *, " + std::to_string(config.patch.width) + "], got " +
                         shape_str(visible.shape()));
    if (!mixed) return run_axis(encoder, encoder_norm, config.axis, visible, nullptr);

    if (mixed->axis != MaskAxis::mixed) throw ShapeError("encode: only mixed masks are passed alongside the grid");
    const std::size_t P = visible.dim(0), N = visible.dim(1);
    if (mixed->extent != P * N) throw ShapeError("mixed mask extent does not match the grid");
    KeyMask km;
    km.keep.assign(P * N, 1);
    for (auto idx : mixed->masked) {
        const std::size_t p = idx / N, n = idx % N;
        km.keep[config.axis == Axis::spatial ? p * N + n : n * P + p] = 0;
    }
    return run_axis(encoder, encoder_norm, config.axis, visible, &km);
}

std::optional<Tensor> MaeModel::pad_and_decode(const Tensor& encoded, const MaskSpec& spec, std::size_t P,
                                               std::size_t N) const {
    if (spec.masked.empty()) return std::nullopt;
    return gather_masked(decode_grid(encoded, spec, P, N), spec);
}

Tensor MaeModel::decode_grid(const Tensor& encoded, const MaskSpec& spec, std::size_t P, std::size_t N) const {
    const std::size_t D = config.patch.width;
    if (spec.extent != mask_extent(spec.axis, P, N))
        throw ShapeError("mask extent " + std::to_string(spec.extent) + " does not fit a " + std::to_string(P) + "x" +
                         std::to_string(N) + " grid");
    const std::size_t M = spec.masked.size();
    const Tensor pe = positional_encoding(P, N, D);

    // position of every original slot in [visible..., masked...]
    std::vector<std::size_t> order(spec.extent);
    for (std::size_t k = 0; k < spec.visible.size(); ++k) order[spec.visible[k]] = k;
    for (std::size_t m = 0; m < M; ++m) order[spec.masked[m]] = spec.visible.size() + m;

    Tensor full;
    if (spec.axis == MaskAxis::mixed) {
        if (encoded.shape() != Shape{P, N, D})
            throw ShapeError("mixed decode expects the full encoded grid, got " + shape_str(encoded.shape()));
        const auto flat = reshape(encoded, {P * N, D});
        const auto tokens = add(index_select(reshape(pe, {P * N, D}), 0, spec.masked), mask_token);
        std::vector<Tensor> parts;
        if (!spec.visible.empty()) parts.push_back(index_select(flat, 0, spec.visible));
        parts.push_back(tokens);
        full = reshape(index_select(concat(parts, 0), 0, order), {P, N, D});
    } else {
        const std::size_t dim = masked_axis_dim(spec.axis);
        Shape expect{P, N, D};
        expect[dim] = spec.visible.size();
        if (encoded.shape() != expect)
            throw ShapeError("decoder input " + shape_str(encoded.shape()) + " does not match mask, expected " +
                             shape_str(expect));
        const auto tokens = add(index_select(pe, dim, spec.masked), mask_token);
        full = index_select(concat({encoded, tokens}, dim), dim, order);
    }

    const auto decoded = run_axis(decoder, decoder_norm, config.axis, full, nullptr);
    return regression(decoded);
}

Tensor gather_masked(const Tensor& grid, const MaskSpec& spec) {
    if (grid.rank() != 3) throw ShapeError("gather_masked expects [T_p, N, F], got " + shape_str(grid.shape()));
    if (spec.extent != mask_extent(spec.axis, grid.dim(0), grid.dim(1)))
        throw ShapeError("mask extent " + std::to_string(spec.extent) + " does not fit grid " + shape_str(grid.shape()));
    if (spec.axis == MaskAxis::mixed)
        return index_select(reshape(grid, {grid.dim(0) * grid.dim(1), grid.dim(2)}), 0, spec.masked);
    return index_select(grid, masked_axis_dim(spec.axis), spec.masked);
}

Tensor MaeModel::represent(const Tensor& window) const { return encode(embed_window(window)); }

Tensor masked_targets(const Tensor& window, const MaskSpec& spec, std::size_t patch_len) {
    return gather_masked(patchify(window, patch_len), spec);
}

Tensor masked_loss(const Tensor& predicted, const Tensor& truth) {
    if (predicted.shape() != truth.shape())
        throw ShapeError("masked_loss shapes differ: " + shape_str(predicted.shape()) + " vs " +
                         shape_str(truth.shape()));
    return mean(abs(sub(predicted, truth)));
}

std::optional<Reconstruction> reconstruct(const MaeModel& model, const Tensor& window, const MaskSpec& spec) {
    const auto E = model.embed_window(window);
    const std::size_t P = E.dim(0), N = E.dim(1);
    if (spec.masked.empty()) return std::nullopt;
    const bool mixed = spec.axis == MaskAxis::mixed;
    if (!mixed && ((spec.axis == MaskAxis::spatial) != (model.config.axis == Axis::spatial)))
        throw ConfigError("a " + to_string(model.config.axis) + " encoder cannot take a " + to_string(spec.axis) +
                          " mask");
    const auto H = mixed ? model.encode(E, &spec) : model.encode(apply_mask(E, spec));
    auto pred = model.pad_and_decode(H, spec, P, N);
    if (!pred) return std::nullopt;
    NoGradGuard no_grad;
    return Reconstruction{*pred, masked_targets(window.detach(), spec, model.config.patch.patch_len)};
}

// ---------------------------------------------------------------- training

void PretrainConfig::validate() const {
    model.validate();
    if (mask_axis != MaskAxis::mixed && (mask_axis == MaskAxis::spatial) != (model.axis == Axis::spatial))
        throw ConfigError("mask axis " + to_string(mask_axis) + " does not fit a " + to_string(model.axis) +
                          " encoder");
    if (!(mask_ratio > 0 && mask_ratio < 1)) throw ConfigError("mask_ratio must lie in (0, 1)");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (grad_clip < 0) throw ConfigError("grad_clip must be nonnegative");
    if (window_stride == 0 || val_window_stride == 0) throw ConfigError("window strides must be positive");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
    j = {{"model", c.model},
         {"mask_axis", to_string(c.mask_axis)},
         {"sampling", to_string(c.sampling)},
         {"mask_ratio", c.mask_ratio},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"grad_clip", c.grad_clip},
         {"seed", c.seed},
         {"window_stride", c.window_stride},
         {"val_window_stride", c.val_window_stride},
         {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
    PretrainConfig d;
    c.model = j.value("model", d.model);
    c.mask_axis = parse_mask_axis(j.value("mask_axis", to_string(d.mask_axis)));
    c.sampling = parse_mask_sampling(j.value("sampling", to_string(d.sampling)));
    c.mask_ratio = j.value("mask_ratio", d.mask_ratio);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.seed = j.value("seed", d.seed);
    c.window_stride = j.value("window_stride", d.window_stride);
    c.val_window_stride = j.value("val_window_stride", d.val_window_stride);
    c.max_steps = j.value("max_steps", d.max_steps);
}

ReconstructionEval evaluate_reconstruction(const MaeModel& model, const SeriesDataset& ds, IndexRange scored,
                                           MaskAxis mask_axis, double ratio, std::uint64_t seed,
                                           std::size_t window_stride, bool keep_elements, MaskSampling sampling) {
    NoGradGuard no_grad;
    const auto& pc = model.config.patch;
    const std::size_t L = pc.patch_len, C = pc.channels, N = ds.nodes(), P = pc.num_patches();
    ReconstructionEval out;
    double sum = 0, sum_raw = 0;
    for (auto start : long_window_starts(pc.long_len, scored, window_stride)) {
        const auto window = ds.window(start, pc.long_len);
        const auto spec = sample_mask(mask_axis, mask_extent(mask_axis, P, N), ratio, mix_seed(seed, start), sampling);
        const auto rec = reconstruct(model, window, spec);
        if (!rec) continue;
        const auto pv = rec->predicted.values();
        const auto tv = rec->truth.values();
        // element e of the gathered output -> (patch, node, l * C + c)
        const std::size_t row = L * C;
        for (std::size_t e = 0; e < pv.size(); ++e) {
            const std::size_t lc = e % row, slot = e / row;
            std::size_t p = 0, n = 0;
            switch (spec.axis) {
                case MaskAxis::spatial: p = slot / spec.masked.size(); n = spec.masked[slot % spec.masked.size()]; break;
                case MaskAxis::temporal: p = spec.masked[slot / N]; n = slot % N; break;
                case MaskAxis::mixed: p = spec.masked[slot] / N; n = spec.masked[slot] % N; break;
            }
            const std::size_t step = start + p * L + lc / C, c = lc % C;
            if (!scored.contains(step)) continue;
            const double err = std::abs(pv[e] - tv[e]);
            sum += err;
            sum_raw += ds.norm() ? err * ds.norm()->std[c] : err;
            ++out.count;
            if (keep_elements) out.elements.push_back({step, n, c, pv[e], tv[e]});
        }
    }
    if (out.count) {
        out.mae = sum / static_cast<double>(out.count);
        out.mae_raw = sum_raw / static_cast<double>(out.count);
    } else {
        out.mae = out.mae_raw = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

PretrainResult pretrain(const SeriesDataset& ds, const PretrainConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    if (!ds.normalized()) throw DataError("pre-training expects a z-score normalized dataset");
    if (ds.channels() != cfg.model.patch.channels)
        throw DataError("dataset has " + std::to_string(ds.channels()) + " channels, model expects " +
                        std::to_string(cfg.model.patch.channels));
    const auto splits = ds.splits();
    const auto& pc = cfg.model.patch;
    const std::size_t P = pc.num_patches(), N = ds.nodes();
    const auto starts = long_window_starts(pc.long_len, splits.train, cfg.window_stride);
    if (starts.empty())
        throw DataError("training split (" + std::to_string(splits.train.size()) + " steps) is shorter than the " +
                        std::to_string(pc.long_len) + "-step long window");

    PretrainResult result;
    MaeModel model(cfg.model, mix_seed(cfg.seed, 0));
    const auto named = model.parameters();
    auto params = tensors_of(named);
    Adam adam(params, AdamOptions{cfg.lr});

    std::vector<std::vector<Real>> best;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0, step = 0;
    bool stop = false;
    const std::size_t extent = mask_extent(cfg.mask_axis, P, N);
    const std::uint64_t val_seed = mix_seed(cfg.seed, 3);

    for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::vector<std::size_t> order = starts;
        Rng shuffle(mix_seed(cfg.seed, 1, epoch));
        std::shuffle(order.begin(), order.end(), shuffle);
        double epoch_sum = 0;
        std::size_t epoch_steps = 0;
        for (std::size_t b = 0; b < order.size() && !stop; b += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), b + cfg.batch_size);
            adam.zero_grad();
            double total = 0;
            for (std::size_t i = b; i < end; ++i) {
                const auto window = ds.window(order[i], pc.long_len);
                const auto spec = sample_mask(cfg.mask_axis, extent, cfg.mask_ratio, mix_seed(cfg.seed, 2, step, i - b),
                                              cfg.sampling);
                Tensor loss;
                try {
                    const auto rec = reconstruct(model, window, spec);
                    loss = masked_loss(rec->predicted, rec->truth);
                } catch (const std::domain_error& e) {
                    throw DivergenceError("pre-training diverged at step " + std::to_string(step) + ": " + e.what());
                }
                const double l = loss.item();
                if (!std::isfinite(l))
                    throw DivergenceError("pre-training loss became non-finite at step " + std::to_string(step));
                scale(loss, 1.0 / static_cast<Real>(end - b)).backward();
                total += l;
            }
            if (cfg.grad_clip > 0) clip_grad_norm(params, cfg.grad_clip);
            adam.step();
            const double mean_loss = total / static_cast<double>(end - b);
            result.step_losses.push_back(mean_loss);
            epoch_sum += mean_loss;
            ++epoch_steps;
            ++step;
            if (on_step && !on_step(step, mean_loss)) stop = true;
            if (cfg.max_steps && step >= cfg.max_steps) stop = true;
        }
        ReconstructionEval val;
        try {
            val = evaluate_reconstruction(model, ds, splits.val, cfg.mask_axis, cfg.mask_ratio, val_seed,
                                          cfg.val_window_stride, false, cfg.sampling);
        } catch (const std::domain_error& e) {
            throw DivergenceError("pre-training diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what());
        }
        EpochRecord rec{epoch + 1, step, epoch_sum / static_cast<double>(std::max<std::size_t>(epoch_steps, 1)),
                        val.mae};
        result.epochs.push_back(rec);
        // without validation windows the latest parameters win
        const double score = std::isnan(val.mae) ? -static_cast<double>(epoch) : val.mae;
        if (best.empty() || score < best_val) {
            best_val = score;
            best_epoch = epoch + 1;
            best.clear();
            for (const auto& t : params) best.emplace_back(t.values().begin(), t.values().end());
        }
    }

    for (std::size_t k = 0; k < params.size(); ++k) std::copy(best[k].begin(), best[k].end(), params[k].values_mut().begin());
    round_to_float32(named);
    for (auto& t : params) t.zero_grad();

    auto& ck = result.checkpoint;
    ck.model = model;
    ck.mask_axis = cfg.mask_axis;
    ck.mask_ratio = cfg.mask_ratio;
    ck.norm = *ds.norm();
    ck.seed = cfg.seed;
    ck.metadata = {{"epochs", result.epochs.size()},
                   {"steps", step},
                   {"best_epoch", best_epoch},
                   {"best_val_loss", result.epochs[best_epoch - 1].val_loss},
                   {"final_train_loss", result.epochs.back().train_loss},
                   {"dataset_hash", hex64(ds.content_hash())},
                   {"pretrain", cfg}};
    if (std::isnan(result.epochs[best_epoch - 1].val_loss)) ck.metadata["best_val_loss"] = nullptr;
    return result;
}

void write_loss_csv(const std::vector<EpochRecord>& epochs, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(17);
    out << "step,train_loss,val_loss\n";
    for (const auto& e : epochs) {
        out << e.step << ',' << e.train_loss << ',';
        if (!std::isnan(e.val_loss)) out << e.val_loss;
        out << '\n';
    }
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const MaeCheckpoint& ck, const std::filesystem::path& path) {
    nlohmann::json h = {{"kind", "mae"},
                        {"version", 1},
                        {"config", ck.model.config},
                        {"mask_axis", to_string(ck.mask_axis)},
                        {"mask_ratio", ck.mask_ratio},
                        {"seed", ck.seed},
                        {"norm", {{"mean", ck.norm.mean}, {"std", ck.norm.std}}},
                        {"metadata", ck.metadata}};
    write_container(path, h, ck.model.parameters());
}

MaeCheckpoint load_checkpoint(const std::filesystem::path& path) {
    auto c = read_container(path);
    const auto& h = c.header;
    if (h.value("kind", "") != "mae") throw DataError(path.string() + ": not an autoencoder checkpoint");
    MaeCheckpoint ck;
    try {
        ck.model = MaeModel(h.at("config").get<MaeConfig>(), 0);
        ck.mask_axis = parse_mask_axis(h.at("mask_axis").get<std::string>());
        ck.mask_ratio = h.at("mask_ratio").get<double>();
        ck.seed = h.at("seed").get<std::uint64_t>();
        ck.norm.mean = h.at("norm").at("mean").get<std::vector<Real>>();
        ck.norm.std = h.at("norm").at("std").get<std::vector<Real>>();
        ck.metadata = h.value("metadata", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(path.string() + ": invalid checkpoint config: " + e.what());
    }
    assign_params(ck.model.parameters(), c.tensors);
    return ck;
}

Tensor encode_representation(const Tensor& window, const MaeCheckpoint& ckpt) {
    const auto& pc = ckpt.model.config.patch;
    if (window.rank() != 3 || window.dim(0) != pc.long_len)
        throw ShapeError("representation window must span " + std::to_string(pc.long_len) + " steps, got " +
                         shape_str(window.shape()));
    NoGradGuard no_grad;
    return ckpt.model.represent(window);
}

} // namespace stdmae
