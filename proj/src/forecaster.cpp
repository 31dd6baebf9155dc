#include "stdmae/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <set>

#include "stdmae/container.hpp"
#include "stdmae/errors.hpp"
#include "stdmae/optim.hpp"

namespace stdmae {

void ForecasterConfig::validate() const {
    if (input_len == 0 || horizon == 0 || channels == 0 || hidden == 0)
        throw ConfigError("forecaster sizes must be positive");
    std::size_t consumed = 0;
    for (auto d : dilations) {
        if (d == 0) throw ConfigError("dilations must be positive");
        consumed += d;
    }
    if (consumed >= input_len)
        throw ConfigError("dilations sum to " + std::to_string(consumed) + ", which does not fit an input of " +
                          std::to_string(input_len) + " steps");
    if (truncate == 0) throw ConfigError("truncation length T' must be positive");
    if ((use_spatial || use_temporal) && rep_width == 0)
        throw ConfigError("augmentation needs the encoders' representation width");
}

void to_json(nlohmann::json& j, const ForecasterConfig& c) {
    j = {{"input_len", c.input_len}, {"horizon", c.horizon},         {"channels", c.channels},
         {"hidden", c.hidden},       {"dilations", c.dilations},     {"truncate", c.truncate},
         {"rep_width", c.rep_width}, {"use_spatial", c.use_spatial}, {"use_temporal", c.use_temporal},
         {"aug_init_gain", c.aug_init_gain}};
}

void from_json(const nlohmann::json& j, ForecasterConfig& c) {
    ForecasterConfig d;
    c.input_len = j.value("input_len", d.input_len);
    c.horizon = j.value("horizon", d.horizon);
    c.channels = j.value("channels", d.channels);
    c.hidden = j.value("hidden", d.hidden);
    c.dilations = j.value("dilations", d.dilations);
    c.truncate = j.value("truncate", d.truncate);
    c.rep_width = j.value("rep_width", d.rep_width);
    c.use_spatial = j.value("use_spatial", d.use_spatial);
    c.use_temporal = j.value("use_temporal", d.use_temporal);
    c.aug_init_gain = j.value("aug_init_gain", d.aug_init_gain);
}

ForecasterModel::ForecasterModel(const ForecasterConfig& cfg, std::uint64_t seed) : config(cfg) {
    config.validate();
    const std::size_t H = cfg.hidden;
    Rng pred_rng(mix_seed(seed, 31));
    input_proj = Linear(cfg.channels, H, pred_rng);
    for (std::size_t i = 0; i < cfg.dilations.size(); ++i) {
        TemporalConvBlock b;
        b.tap_past = Linear(H, H, pred_rng);
        b.tap_now = Linear(H, H, pred_rng);
        b.skip = Linear(H, H, pred_rng);
        blocks.push_back(std::move(b));
    }
    Rng head_rng(mix_seed(seed, 32));
    head = Mlp(H, H, cfg.horizon * cfg.channels, head_rng);
    const std::size_t in = cfg.truncate * cfg.rep_width;
    if (cfg.use_spatial) {
        Rng r(mix_seed(seed, 33));
        project_spatial = Mlp(in, H, H, r, cfg.aug_init_gain);
    }
    if (cfg.use_temporal) {
        Rng r(mix_seed(seed, 34));
        project_temporal = Mlp(in, H, H, r, cfg.aug_init_gain);
    }
}

NamedParams ForecasterModel::parameters() const {
    NamedParams out;
    input_proj.collect("input_proj", out);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto p = "block." + std::to_string(i);
        blocks[i].tap_past.collect(p + ".tap_past", out);
        blocks[i].tap_now.collect(p + ".tap_now", out);
        blocks[i].skip.collect(p + ".skip", out);
    }
    head.collect("head", out);
    if (project_spatial) project_spatial->collect("project_spatial", out);
    if (project_temporal) project_temporal->collect("project_temporal", out);
    return out;
}

Tensor ForecasterModel::predictor_forward(const Tensor& short_input) const {
    const bool single = short_input.rank() == 3;
    const Tensor x = single ? reshape(short_input, {1, short_input.dim(0), short_input.dim(1), short_input.dim(2)})
                            : short_input;
    if (x.rank() != 4 || x.dim(1) != config.input_len || x.dim(3) != config.channels)
        throw ShapeError("predictor expects [B, " + std::to_string(config.input_len) + ", N, " +
                         std::to_string(config.channels) + "], got " + shape_str(short_input.shape()));
    const std::size_t B = x.dim(0), N = x.dim(2), H = config.hidden;
    Tensor h = input_proj(permute(x, {0, 2, 1, 3}));  // [B, N, T, H]
    Tensor skips;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::size_t d = config.dilations[i], len = h.dim(2);
        const auto past = slice(h, 2, 0, len - d);
        const auto now = slice(h, 2, d, len);
        const auto y = gelu(add(blocks[i].tap_past(past), blocks[i].tap_now(now)));
        const auto last = reshape(slice(y, 2, len - d - 1, len - d), {B, N, H});
        const auto s = blocks[i].skip(last);
        skips = i == 0 ? s : add(skips, s);
        h = add(y, now);
    }
    if (blocks.empty()) skips = reshape(slice(h, 2, h.dim(2) - 1, h.dim(2)), {B, N, H});
    const auto hidden = gelu(skips);
    return single ? reshape(hidden, {N, H}) : hidden;
}

Tensor ForecasterModel::forecast_head(const Tensor& hidden) const {
    const bool single = hidden.rank() == 2;
    if ((hidden.rank() != 2 && hidden.rank() != 3) || hidden.dim(-1) != config.hidden)
        throw ShapeError("forecast head expects width " + std::to_string(config.hidden) + ", got " +
                         shape_str(hidden.shape()));
    const Tensor h = single ? reshape(hidden, {1, hidden.dim(0), hidden.dim(1)}) : hidden;
    const std::size_t B = h.dim(0), N = h.dim(1);
    auto y = reshape(head(h), {B, N, config.horizon, config.channels});
    y = permute(y, {0, 2, 1, 3});
    return single ? reshape(y, {config.horizon, N, config.channels}) : y;
}

Tensor ForecasterModel::forward(const Tensor& short_input, const Tensor* spatial_rep, const Tensor* temporal_rep) const {
    const auto hf = predictor_forward(short_input);
    std::optional<Tensor> s, t;
    if (project_spatial) {
        if (!spatial_rep) throw ShapeError("spatial branch enabled but no spatial representation given");
        s = (*project_spatial)(*spatial_rep);
    }
    if (project_temporal) {
        if (!temporal_rep) throw ShapeError("temporal branch enabled but no temporal representation given");
        t = (*project_temporal)(*temporal_rep);
    }
    return forecast_head(augment(hf, s ? &*s : nullptr, t ? &*t : nullptr));
}

Tensor truncate_representation(const Tensor& rep, std::size_t truncate) {
    if (rep.rank() != 3) throw ShapeError("representation must be [T_p, N, D], got " + shape_str(rep.shape()));
    const std::size_t P = rep.dim(0), N = rep.dim(1), D = rep.dim(2);
    if (truncate == 0 || truncate > P)
        throw ShapeError("cannot keep the last " + std::to_string(truncate) + " of " + std::to_string(P) + " patches");
    return reshape(permute(slice(rep, 0, P - truncate, P), {1, 0, 2}), {N, truncate * D});
}

Tensor truncate_and_project(const Tensor& rep, std::size_t truncate, const Mlp& mlp) {
    return mlp(truncate_representation(rep, truncate));
}

Tensor augment(const Tensor& hidden, const Tensor* spatial, const Tensor* temporal) {
    Tensor out = hidden;
    for (const Tensor* p : {spatial, temporal}) {
        if (!p) continue;
        if (p->shape() != hidden.shape())
            throw ShapeError("projected representation " + shape_str(p->shape()) + " does not match hidden state " +
                             shape_str(hidden.shape()));
        out = add(out, *p);
    }
    return out;
}

// ---------------------------------------------------------------- representations

void RepresentationSet::index() {
    row_of.clear();
    for (std::size_t i = 0; i < anchors.size(); ++i) row_of[anchors[i]] = i;
}

Tensor RepresentationSet::gather(std::span<const std::size_t> which) const {
    const std::size_t row = nodes * width;
    std::vector<Real> out(which.size() * row);
    for (std::size_t b = 0; b < which.size(); ++b) {
        auto it = row_of.find(which[b]);
        if (it == row_of.end()) throw DataError("no representation for anchor " + std::to_string(which[b]));
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(it->second * row), row,
                    out.begin() + static_cast<std::ptrdiff_t>(b * row));
    }
    return Tensor({which.size(), nodes, width}, std::move(out));
}

RepresentationSet compute_representations(const SeriesDataset& ds, const MaeCheckpoint& ckpt,
                                          std::vector<std::size_t> anchors, std::size_t truncate) {
    const auto& pc = ckpt.model.config.patch;
    std::sort(anchors.begin(), anchors.end());
    anchors.erase(std::unique(anchors.begin(), anchors.end()), anchors.end());
    RepresentationSet set;
    set.anchors = anchors;
    set.nodes = ds.nodes();
    set.width = truncate * pc.width;
    set.values.reserve(anchors.size() * set.nodes * set.width);
    for (auto a : anchors) {
        if (a + 1 < pc.long_len || a >= ds.steps())
            throw DataError("anchor " + std::to_string(a) + " has no full " + std::to_string(pc.long_len) +
                            "-step lookback");
        const auto rep = encode_representation(ds.window(a + 1 - pc.long_len, pc.long_len), ckpt);
        NoGradGuard no_grad;
        const auto t = truncate_representation(rep, truncate);
        for (Real v : t.values()) set.values.push_back(static_cast<Real>(static_cast<float>(v)));
    }
    set.index();
    return set;
}

void save_representations(const RepresentationSet& reps, const std::filesystem::path& path,
                          const std::string& dataset_hash, const std::string& checkpoint_hash, std::size_t truncate) {
    nlohmann::json h = {{"kind", "representations"}, {"dataset_hash", dataset_hash},
                        {"checkpoint_hash", checkpoint_hash}, {"truncate", truncate},
                        {"anchors", reps.anchors}, {"nodes", reps.nodes}, {"width", reps.width}};
    write_container(path, h, {{"values", Tensor({reps.anchors.size(), reps.nodes, reps.width}, reps.values)}});
}

std::optional<RepresentationSet> load_representations(const std::filesystem::path& path,
                                                      const std::string& dataset_hash,
                                                      const std::string& checkpoint_hash,
                                                      const std::vector<std::size_t>& anchors, std::size_t truncate) {
    if (!std::filesystem::exists(path)) return std::nullopt;
    const auto c = read_container(path);
    const auto& h = c.header;
    if (h.value("kind", "") != "representations" || h.value("dataset_hash", "") != dataset_hash ||
        h.value("checkpoint_hash", "") != checkpoint_hash || h.value("truncate", std::size_t{0}) != truncate)
        return std::nullopt;
    std::vector<std::size_t> want = anchors;
    std::sort(want.begin(), want.end());
    want.erase(std::unique(want.begin(), want.end()), want.end());
    RepresentationSet set;
    set.anchors = h.at("anchors").get<std::vector<std::size_t>>();
    if (set.anchors != want || c.tensors.size() != 1) return std::nullopt;
    set.nodes = h.at("nodes").get<std::size_t>();
    set.width = h.at("width").get<std::size_t>();
    const auto v = c.tensors[0].second.values();
    set.values.assign(v.begin(), v.end());
    set.index();
    return set;
}

// ---------------------------------------------------------------- metrics

namespace {

struct Accum {
    double abs = 0, sq = 0, pct = 0;
    std::size_t n = 0, np = 0;
    void add(Real p, Real y, Real thr) {
        const double e = p - y;
        abs += std::abs(e);
        sq += e * e;
        ++n;
        if (std::abs(y) >= thr) {
            pct += std::abs(e) / std::abs(y);
            ++np;
        }
    }
    Metrics done() const {
        Metrics m;
        m.count = n;
        m.mape_count = np;
        if (n) {
            m.mae = abs / static_cast<double>(n);
            m.rmse = std::sqrt(sq / static_cast<double>(n));
        }
        if (np) m.mape = 100.0 * pct / static_cast<double>(np);
        return m;
    }
};

} // namespace

MetricReport evaluate(std::span<const Real> predicted, std::span<const Real> truth, const Shape& shape,
                      Real zero_threshold, const std::vector<std::size_t>& horizons) {
    if (shape.size() != 4) throw ShapeError("metrics expect [S, H, N, C], got " + shape_str(shape));
    const std::size_t total = numel_of(shape);
    if (predicted.size() != total || truth.size() != total)
        throw ShapeError("prediction/truth sizes do not match " + shape_str(shape));
    const std::size_t S = shape[0], H = shape[1], per_step = shape[2] * shape[3];
    for (auto h : horizons)
        if (h == 0 || h > H) throw ConfigError("horizon " + std::to_string(h) + " outside 1.." + std::to_string(H));
    Accum all;
    std::vector<Accum> step(H);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t k = 0; k < per_step; ++k) {
                const std::size_t i = (s * H + h) * per_step + k;
                all.add(predicted[i], truth[i], zero_threshold);
                step[h].add(predicted[i], truth[i], zero_threshold);
            }
    MetricReport r;
    r.overall = all.done();
    for (auto h : horizons) r.horizons.emplace_back(h, step[h - 1].done());
    return r;
}

nlohmann::json to_json(const Metrics& m) {
    return {{"mae", m.mae},
            {"rmse", m.rmse},
            {"mape", m.mape ? nlohmann::json(*m.mape) : nlohmann::json(nullptr)},
            {"count", m.count},
            {"mape_count", m.mape_count}};
}

nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json h = nlohmann::json::object();
    for (const auto& [k, m] : r.horizons) h["horizon_" + std::to_string(k)] = to_json(m);
    return {{"overall", to_json(r.overall)}, {"horizons", h}};
}

// ---------------------------------------------------------------- training

void ForecastTrainConfig::validate() const {
    if (epochs == 0 || batch_size == 0) throw ConfigError("forecaster epochs and batch_size must be positive");
    if (!(lr > 0)) throw ConfigError("forecaster lr must be positive");
    if (grad_clip < 0) throw ConfigError("forecaster grad_clip must be nonnegative");
}

void to_json(nlohmann::json& j, const ForecastTrainConfig& c) {
    j = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},          {"grad_clip", c.grad_clip},
         {"patience", c.patience}, {"seed", c.seed},           {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, ForecastTrainConfig& c) {
    ForecastTrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.patience = j.value("patience", d.patience);
    c.seed = j.value("seed", d.seed);
    c.max_steps = j.value("max_steps", d.max_steps);
}

ForecastData make_forecast_data(const SeriesDataset& ds, const WindowSpec& w) {
    ForecastData d;
    d.dataset = &ds;
    d.window = w;
    const auto sp = ds.splits();
    d.train = iterate_samples(ds, w, sp.train);
    d.val = iterate_samples(ds, w, sp.val);
    d.test = iterate_samples(ds, w, sp.test);
    return d;
}

std::vector<std::size_t> all_anchors(const ForecastData& data) {
    std::vector<std::size_t> out;
    for (const auto* set : {&data.train, &data.val, &data.test})
        for (const auto& s : set->samples) out.push_back(s.anchor);
    return out;
}

namespace {

Tensor stack_windows(const SeriesDataset& ds, std::span<const ForecastSample> batch, std::size_t len, bool targets) {
    const std::size_t row = len * ds.nodes() * ds.channels();
    std::vector<Real> v(batch.size() * row);
    const auto data = ds.data();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t begin = targets ? batch[b].target_begin() : batch[b].anchor + 1 - len;
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(begin * ds.nodes() * ds.channels()), row,
                    v.begin() + static_cast<std::ptrdiff_t>(b * row));
    }
    return Tensor({batch.size(), len, ds.nodes(), ds.channels()}, std::move(v));
}

Tensor forward_batch(const ForecasterModel& model, const ForecastData& data, std::span<const ForecastSample> batch) {
    std::vector<std::size_t> anchors(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) anchors[b] = batch[b].anchor;
    std::optional<Tensor> s, t;
    if (model.project_spatial) {
        if (!data.spatial) throw DataError("spatial branch enabled but no spatial representations loaded");
        s = data.spatial->gather(anchors);
    }
    if (model.project_temporal) {
        if (!data.temporal) throw DataError("temporal branch enabled but no temporal representations loaded");
        t = data.temporal->gather(anchors);
    }
    return model.forward(stack_windows(*data.dataset, batch, model.config.input_len, false), s ? &*s : nullptr,
                         t ? &*t : nullptr);
}

double normalized_mae(const ForecasterModel& model, const ForecastData& data, const std::vector<ForecastSample>& samples) {
    const auto p = predict(model, data, samples);
    const auto y = targets(data, samples);
    double sum = 0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - y[i]);
    return sum / static_cast<double>(p.size());
}

} // namespace

std::vector<Real> predict(const ForecasterModel& model, const ForecastData& data,
                          const std::vector<ForecastSample>& samples, std::size_t batch_size) {
    NoGradGuard no_grad;
    std::vector<Real> out;
    for (std::size_t b = 0; b < samples.size(); b += batch_size) {
        const std::span<const ForecastSample> batch(samples.data() + b, std::min(batch_size, samples.size() - b));
        const auto y = forward_batch(model, data, batch);
        out.insert(out.end(), y.values().begin(), y.values().end());
    }
    return out;
}

std::vector<Real> targets(const ForecastData& data, const std::vector<ForecastSample>& samples) {
    const auto t = stack_windows(*data.dataset, samples, data.window.horizon, true);
    return {t.values().begin(), t.values().end()};
}

ForecastResult train_forecaster(const ForecastData& data, const ForecasterConfig& cfg, const ForecastTrainConfig& tc) {
    cfg.validate();
    tc.validate();
    const auto& ds = *data.dataset;
    if (!ds.normalized()) throw DataError("forecaster training expects a z-score normalized dataset");
    if (cfg.input_len != data.window.input_len || cfg.horizon != data.window.horizon)
        throw ConfigError("forecaster window does not match the sample window");
    if (cfg.channels != ds.channels()) throw DataError("channel count does not match the dataset");
    for (const auto* r : {cfg.use_spatial ? data.spatial : nullptr, cfg.use_temporal ? data.temporal : nullptr})
        if (r && (r->nodes != ds.nodes() || r->width != cfg.truncate * cfg.rep_width))
            throw DataError("representations do not match the dataset or configured width");
    const auto& train = data.train.samples;
    if (train.empty()) throw DataError("no training samples: " + data.train.warning.value_or("empty split"));

    ForecastResult result;
    ForecasterModel model(cfg, tc.seed);
    const auto named = model.parameters();
    auto params = tensors_of(named);
    Adam adam(params, AdamOptions{tc.lr});

    std::vector<std::vector<Real>> best;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t step = 0, since_best = 0;
    bool stop = false;
    for (std::size_t epoch = 0; epoch < tc.epochs && !stop; ++epoch) {
        std::vector<ForecastSample> order = train;
        Rng shuffle(mix_seed(tc.seed, 20, epoch));
        std::shuffle(order.begin(), order.end(), shuffle);
        double sum = 0;
        std::size_t steps = 0;
        for (std::size_t b = 0; b < order.size() && !stop; b += tc.batch_size) {
            const std::span<const ForecastSample> batch(order.data() + b, std::min(tc.batch_size, order.size() - b));
            adam.zero_grad();
            const auto pred = forward_batch(model, data, batch);
            const auto y = stack_windows(ds, batch, cfg.horizon, true);
            auto loss = mean(abs(sub(pred, y)));
            const double l = loss.item();
            if (!std::isfinite(l)) throw DivergenceError("forecaster loss became non-finite at step " + std::to_string(step));
            loss.backward();
            if (tc.grad_clip > 0) clip_grad_norm(params, tc.grad_clip);
            adam.step();
            result.step_losses.push_back(l);
            sum += l;
            ++steps;
            ++step;
            if (tc.max_steps && step >= tc.max_steps) stop = true;
        }
        const double train_loss = sum / static_cast<double>(std::max<std::size_t>(steps, 1));
        const double val = data.val.samples.empty() ? train_loss : normalized_mae(model, data, data.val.samples);
        result.epochs.push_back({epoch + 1, step, train_loss, val});
        if (best.empty() || val < best_val) {
            best_val = val;
            result.best_epoch = epoch + 1;
            since_best = 0;
            best.clear();
            for (const auto& t : params) best.emplace_back(t.values().begin(), t.values().end());
        } else if (tc.patience && ++since_best >= tc.patience) {
            stop = true;
        }
    }
    for (std::size_t k = 0; k < params.size(); ++k)
        std::copy(best[k].begin(), best[k].end(), params[k].values_mut().begin());
    for (auto& t : params) t.zero_grad();
    round_to_float32(named);
    result.model = model;
    return result;
}

ForecastEvaluation evaluate_forecaster(const ForecasterModel& model, const ForecastData& data,
                                       const std::vector<ForecastSample>& samples, Real zero_threshold) {
    if (samples.empty()) throw DataError("cannot evaluate an empty sample set");
    const auto& ds = *data.dataset;
    ForecastEvaluation ev;
    const auto p = predict(model, data, samples);
    const auto y = targets(data, samples);
    const Shape shape{samples.size(), data.window.horizon, ds.nodes(), ds.channels()};
    std::vector<std::size_t> horizons;
    for (std::size_t h : {3, 6, 12})
        if (h <= data.window.horizon) horizons.push_back(h);
    ev.normalized = evaluate(p, y, shape, zero_threshold, horizons);
    Real scale = 1.0;
    if (ds.norm()) {
        ev.predicted_raw = denormalize(p, *ds.norm());
        ev.truth_raw = denormalize(y, *ds.norm());
        scale = std::accumulate(ds.norm()->std.begin(), ds.norm()->std.end(), 0.0) /
                static_cast<Real>(ds.norm()->std.size());
    } else {
        ev.predicted_raw = p;
        ev.truth_raw = y;
    }
    ev.raw = evaluate(ev.predicted_raw, ev.truth_raw, shape, zero_threshold * scale, horizons);
    return ev;
}

void save_forecaster(const ForecasterModel& model, const NormStats& norm, const nlohmann::json& metadata,
                     const std::filesystem::path& path) {
    nlohmann::json h = {{"kind", "forecaster"},
                        {"version", 1},
                        {"config", model.config},
                        {"norm", {{"mean", norm.mean}, {"std", norm.std}}},
                        {"metadata", metadata}};
    write_container(path, h, model.parameters());
}

LoadedForecaster load_forecaster(const std::filesystem::path& path) {
    const auto c = read_container(path);
    const auto& h = c.header;
    if (h.value("kind", "") != "forecaster") throw DataError(path.string() + ": not a forecaster checkpoint");
    LoadedForecaster out;
    try {
        out.model = ForecasterModel(h.at("config").get<ForecasterConfig>(), 0);
        out.norm.mean = h.at("norm").at("mean").get<std::vector<Real>>();
        out.norm.std = h.at("norm").at("std").get<std::vector<Real>>();
        out.metadata = h.value("metadata", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed forecaster header: " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(path.string() + ": invalid forecaster config: " + e.what());
    }
    assign_params(out.model.parameters(), c.tensors);
    return out;
}

} // namespace stdmae
