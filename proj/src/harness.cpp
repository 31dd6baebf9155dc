#include "stdmae/harness.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "stdmae/container.hpp"
#include "stdmae/errors.hpp"

namespace stdmae {

namespace fs = std::filesystem;

std::string to_string(AblationMode m) {
    switch (m) {
        case AblationMode::full: return "full";
        case AblationMode::s_only: return "s-only";
        case AblationMode::t_only: return "t-only";
        case AblationMode::mixed: return "mixed";
        case AblationMode::none: return "none";
    }
    return "?";
}

AblationMode parse_ablation_mode(const std::string& s) {
    for (auto m : {AblationMode::full, AblationMode::s_only, AblationMode::t_only, AblationMode::mixed,
                   AblationMode::none})
        if (to_string(m) == s) return m;
    throw ConfigError("ablation must be one of full|s-only|t-only|mixed|none, got '" + s + "'");
}

// ---------------------------------------------------------------- fields

namespace {

template <class T>
T parse_value(const std::string& key, const std::string& s) {
    const auto bad = [&] { return ConfigError(key + ": cannot parse '" + s + "'"); };
    if constexpr (std::is_same_v<T, std::string>) {
        return s;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw bad();
    } else {
        T v{};
        const auto* end = s.data() + s.size();
        const auto r = std::from_chars(s.data(), end, v);
        if (s.empty() || r.ec != std::errc() || r.ptr != end) throw bad();
        if constexpr (std::is_floating_point_v<T>)
            if (!std::isfinite(v)) throw bad();
        return v;
    }
}

template <class T>
ConfigField field_of(std::string key, std::string help, T ExperimentConfig::*member) {
    ConfigField f;
    f.key = key;
    f.help = std::move(help);
    f.set = [key, member](ExperimentConfig& c, const std::string& s) { c.*member = parse_value<T>(key, s); };
    f.get = [member](const ExperimentConfig& c) { return nlohmann::json(c.*member); };
    return f;
}

std::string value_text(const nlohmann::json& v) {
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        return s.empty() ? "\"\"" : s;
    }
    return v.dump();
}

} // namespace

const std::vector<ConfigField>& config_fields() {
    using C = ExperimentConfig;
    static const std::vector<ConfigField> fields = {
        field_of("data.path", "series file (.csv or binary); empty generates a synthetic series", &C::data_path),
        field_of("data.nodes", "CSV node count", &C::data_nodes),
        field_of("data.steps", "CSV step count", &C::data_steps),
        field_of("data.channels", "CSV channels per node", &C::data_channels),
        field_of("data.nan_policy", "reject | forward_fill", &C::data_nan_policy),
        field_of("synth.kind", "sinusoid | mixture", &C::synth_kind),
        field_of("synth.nodes", "synthetic node count", &C::synth_nodes),
        field_of("synth.steps", "synthetic step count", &C::synth_steps),
        field_of("synth.period", "daily period in steps", &C::synth_period),
        field_of("synth.latents", "latent signals (mixture)", &C::synth_latents),
        field_of("synth.noise", "Gaussian noise std", &C::synth_noise),
        field_of("synth.mirage_fraction", "fraction of slots planted as mirage pairs, [0, 0.5]", &C::synth_mirage_fraction),
        field_of("synth.seed", "generator seed", &C::synth_seed),
        field_of("split.train", "training fraction", &C::split_train),
        field_of("split.val", "validation fraction", &C::split_val),
        field_of("split.test", "test fraction", &C::split_test),
        field_of("patch_len", "patch length L", &C::patch_len),
        field_of("long_len", "long input window T_long", &C::long_len),
        field_of("width", "encoder width D", &C::width),
        field_of("input_len", "short input window T", &C::input_len),
        field_of("horizon", "forecast steps", &C::horizon),
        field_of("truncate", "representation patches kept, T'", &C::truncate),
        field_of("hidden", "forecaster width D'", &C::hidden),
        field_of("mask_ratio", "masking ratio r", &C::mask_ratio),
        field_of("mask_sampling", "fixed_count | bernoulli", &C::mask_sampling),
        field_of("mae.heads", "attention heads", &C::mae_heads),
        field_of("mae.encoder_layers", "encoder layers", &C::mae_encoder_layers),
        field_of("mae.decoder_layers", "decoder layers", &C::mae_decoder_layers),
        field_of("mae.ffn_mult", "feed-forward width multiple", &C::mae_ffn_mult),
        field_of("mae.epochs", "pre-training epochs", &C::mae_epochs),
        field_of("mae.batch_size", "windows per optimizer step", &C::mae_batch_size),
        field_of("mae.lr", "Adam learning rate", &C::mae_lr),
        field_of("mae.grad_clip", "global gradient norm clip, 0 disables", &C::mae_grad_clip),
        field_of("mae.seed", "pre-training seed", &C::mae_seed),
        field_of("mae.window_stride", "steps between training windows", &C::mae_window_stride),
        field_of("mae.val_window_stride", "steps between validation windows", &C::mae_val_window_stride),
        field_of("mae.max_steps", "stop after this many steps, 0 = no limit", &C::mae_max_steps),
        field_of("forecast.dilations", "comma-separated dilations of the temporal convolutions", &C::forecast_dilations),
        field_of("forecast.aug_init_gain", "initial output scale of the projection MLPs", &C::forecast_aug_init_gain),
        field_of("forecast.epochs", "forecaster epochs", &C::forecast_epochs),
        field_of("forecast.batch_size", "samples per step", &C::forecast_batch_size),
        field_of("forecast.lr", "Adam learning rate", &C::forecast_lr),
        field_of("forecast.grad_clip", "global gradient norm clip, 0 disables", &C::forecast_grad_clip),
        field_of("forecast.patience", "early stopping patience in epochs, 0 disables", &C::forecast_patience),
        field_of("forecast.seed", "forecaster seed", &C::forecast_seed),
        field_of("forecast.max_steps", "stop after this many steps, 0 = no limit", &C::forecast_max_steps),
        field_of("ablation", "full | s-only | t-only | mixed | none", &C::ablation),
        field_of("compare", "also train the plain baseline", &C::compare),
        field_of("zero_threshold", "MAPE skips |y| below this (normalized units)", &C::zero_threshold),
        field_of("report.nodes", "sensors per overlay family", &C::report_nodes),
        field_of("output_dir", "run directory (relative paths resolve under STDMAE_OUTPUT_ROOT)", &C::output_dir),
    };
    return fields;
}

namespace {

const ConfigField* find_field(const std::string& key) {
    for (const auto& f : config_fields())
        if (f.key == key) return &f;
    return nullptr;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

} // namespace

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::vector<std::string> errors;
    for (const auto& [k, v] : kv) {
        const auto* f = find_field(k);
        if (!f) {
            errors.push_back("unknown key '" + k + "'");
            continue;
        }
        try {
            f->set(cfg, v);
        } catch (const ConfigError& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) throw ConfigError(join(errors, "; "));
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigINI().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        kv.emplace_back(item.fullname(), join(item.inputs, ","));
    }
    apply_overrides(base, kv);
    return base;
}

ExperimentConfig load_config(const fs::path& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    return parse_config(in, std::move(base));
}

std::string dump_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    for (const auto& f : config_fields()) out << "# " << f.help << "\n" << f.key << " = " << value_text(f.get(cfg)) << "\n";
    return out.str();
}

nlohmann::json config_json(const ExperimentConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : config_fields()) j[f.key] = f.get(cfg);
    return j;
}

// ---------------------------------------------------------------- derived settings

AblationMode ExperimentConfig::mode() const { return parse_ablation_mode(ablation); }

MaskSampling ExperimentConfig::sampling() const {
    try {
        return parse_mask_sampling(mask_sampling);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("mask_sampling: ") + e.what());
    }
}

std::vector<std::size_t> ExperimentConfig::dilations() const {
    std::vector<std::size_t> out;
    std::stringstream ss(forecast_dilations);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        out.push_back(parse_value<std::size_t>("forecast.dilations", tok));
    }
    return out;
}

WindowSpec ExperimentConfig::window() const { return {input_len, horizon, long_len}; }

SplitRatios ExperimentConfig::ratios() const { return {split_train, split_val, split_test}; }

SynthSpec ExperimentConfig::synth_spec() const {
    SynthSpec s = synth_kind == "mixture" ? latent_mixture_spec(synth_nodes, synth_steps, synth_latents, synth_noise, synth_seed)
                                          : sinusoid_spec(synth_nodes, synth_steps, synth_noise, synth_seed);
    s.daily_period = synth_period;
    s.mirage_fraction = synth_mirage_fraction;
    s.short_len = input_len;
    s.horizon = horizon;
    s.lookback = long_len;
    return s;
}

std::vector<Axis> ExperimentConfig::encoders() const {
    switch (mode()) {
        case AblationMode::full:
        case AblationMode::mixed: return {Axis::spatial, Axis::temporal};
        case AblationMode::s_only: return {Axis::spatial};
        case AblationMode::t_only: return {Axis::temporal};
        case AblationMode::none: return {};
    }
    return {};
}

PretrainConfig ExperimentConfig::pretrain_config(Axis axis) const {
    PretrainConfig c;
    c.model.patch = PatchConfig{patch_len, width, long_len, data_path.empty() ? 1 : data_channels};
    c.model.axis = axis;
    c.model.heads = mae_heads;
    c.model.encoder_layers = mae_encoder_layers;
    c.model.decoder_layers = mae_decoder_layers;
    c.model.ffn_mult = mae_ffn_mult;
    c.mask_axis = mode() == AblationMode::mixed ? MaskAxis::mixed
                  : axis == Axis::spatial      ? MaskAxis::spatial
                                               : MaskAxis::temporal;
    c.sampling = sampling();
    c.mask_ratio = mask_ratio;
    c.epochs = mae_epochs;
    c.batch_size = mae_batch_size;
    c.lr = mae_lr;
    c.grad_clip = mae_grad_clip;
    c.seed = mae_seed;
    c.window_stride = mae_window_stride;
    c.val_window_stride = mae_val_window_stride;
    c.max_steps = mae_max_steps;
    return c;
}

ForecasterConfig ExperimentConfig::forecaster_config(bool augmented) const {
    ForecasterConfig c;
    c.input_len = input_len;
    c.horizon = horizon;
    c.channels = data_path.empty() ? 1 : data_channels;
    c.hidden = hidden;
    c.dilations = dilations();
    c.truncate = truncate;
    c.aug_init_gain = forecast_aug_init_gain;
    if (augmented) {
        c.rep_width = width;
        for (auto a : encoders()) (a == Axis::spatial ? c.use_spatial : c.use_temporal) = true;
    }
    return c;
}

ForecastTrainConfig ExperimentConfig::forecast_train_config() const {
    ForecastTrainConfig t;
    t.epochs = forecast_epochs;
    t.batch_size = forecast_batch_size;
    t.lr = forecast_lr;
    t.grad_clip = forecast_grad_clip;
    t.patience = forecast_patience;
    t.seed = forecast_seed;
    t.max_steps = forecast_max_steps;
    return t;
}

void ExperimentConfig::validate() const {
    std::vector<std::string> e;
    const auto check = [&](bool ok, const std::string& msg) {
        if (!ok) e.push_back(msg);
    };
    const auto guard = [&](auto&& fn) {
        try {
            fn();
        } catch (const std::exception& ex) {
            e.push_back(ex.what());
        }
    };
    guard([&] { (void)mode(); });
    guard([&] { (void)sampling(); });
    check(synth_kind == "sinusoid" || synth_kind == "mixture", "synth.kind must be sinusoid or mixture");
    check(data_nan_policy == "reject" || data_nan_policy == "forward_fill",
          "data.nan_policy must be reject or forward_fill");

    check(patch_len > 0, "patch_len must be positive");
    check(long_len > 0 && patch_len > 0 && long_len % patch_len == 0,
          "long_len (" + std::to_string(long_len) + ") must be a positive multiple of patch_len (" +
              std::to_string(patch_len) + ")");
    check(input_len == patch_len, "input_len (" + std::to_string(input_len) + ") must equal patch_len (" +
                                      std::to_string(patch_len) + ") so the short window is one patch");
    check(horizon > 0, "horizon must be positive");
    check(width > 0 && width % 4 == 0, "width must be a positive multiple of 4");
    check(mae_heads > 0 && width % std::max<std::size_t>(mae_heads, 1) == 0, "mae.heads must divide width");
    check(mae_encoder_layers > 0, "mae.encoder_layers must be positive");
    check(mae_ffn_mult > 0, "mae.ffn_mult must be positive");
    const std::size_t P = patch_len ? long_len / patch_len : 0;
    check(truncate >= 1 && truncate <= P, "truncate must lie in [1, long_len / patch_len = " + std::to_string(P) + "]");
    check(hidden > 0, "hidden must be positive");
    check(mask_ratio > 0 && mask_ratio < 1, "mask_ratio must lie in (0, 1)");
    check(split_train > 0 && split_val >= 0 && split_test >= 0 &&
              std::abs(split_train + split_val + split_test - 1.0) < 1e-9,
          "split fractions must be nonnegative, train positive, and sum to 1");
    check(mae_epochs > 0 && mae_batch_size > 0, "mae.epochs and mae.batch_size must be positive");
    check(mae_lr > 0 && mae_grad_clip >= 0, "mae.lr must be positive and mae.grad_clip nonnegative");
    check(mae_window_stride > 0 && mae_val_window_stride > 0, "pre-training window strides must be positive");
    check(forecast_epochs > 0 && forecast_batch_size > 0, "forecast.epochs and forecast.batch_size must be positive");
    check(forecast_lr > 0 && forecast_grad_clip >= 0,
          "forecast.lr must be positive and forecast.grad_clip nonnegative");
    check(zero_threshold >= 0, "zero_threshold must be nonnegative");
    check(!output_dir.empty(), "output_dir must not be empty");
    guard([&] {
        const auto d = dilations();
        std::size_t sum = 0;
        for (auto v : d) sum += v;
        if (d.empty() || std::find(d.begin(), d.end(), 0) != d.end() || sum >= input_len)
            throw ConfigError("forecast.dilations must be positive and sum to less than input_len");
    });

    if (data_path.empty()) {
        guard([&] { synth_spec().validate(); });
        const std::size_t N = synth_nodes;
        const auto train_steps = static_cast<std::size_t>(std::floor(static_cast<double>(synth_steps) * split_train + 1e-9));
        check(train_steps >= long_len, "training split (" + std::to_string(train_steps) +
                                           " steps) is shorter than long_len (" + std::to_string(long_len) + ")");
        const auto masked = [&](std::size_t extent) {
            return static_cast<std::size_t>(std::floor(static_cast<double>(extent) * mask_ratio + 1e-9));
        };
        guard([&] {
            for (auto a : encoders()) {
                const auto ma = pretrain_config(a).mask_axis;
                const std::size_t extent = mask_extent(ma, P, N);
                if (masked(extent) < 1 || masked(extent) >= extent)
                    throw ConfigError("mask_ratio " + std::to_string(mask_ratio) + " masks " +
                                      std::to_string(masked(extent)) + " of " + std::to_string(extent) + " " +
                                      to_string(ma) + " slots; need at least one masked and one visible");
            }
        });
    } else {
        check(data_channels > 0, "data.channels must be positive");
        const bool csv = fs::path(data_path).extension() == ".csv";
        check(!csv || (data_nodes > 0 && data_steps > 0), "CSV data needs data.nodes and data.steps");
    }
    e.erase(std::remove(e.begin(), e.end(), std::string()), e.end());
    if (!e.empty()) throw ConfigError("invalid configuration: " + join(e, "; "));
}

fs::path resolve_output_dir(const ExperimentConfig& cfg) {
    fs::path p(cfg.output_dir);
    if (p.is_relative())
        if (const char* root = std::getenv("STDMAE_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
    return p;
}

// ---------------------------------------------------------------- helpers

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void note(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

std::string num(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

std::ofstream open_out(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    auto out = open_out(path);
    out << j.dump(2) << "\n";
    if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string rel(const fs::path& p, const RunLayout& run) { return fs::relative(p, run.root).generic_string(); }

nlohmann::json epochs_json(const std::vector<EpochRecord>& epochs) {
    auto a = nlohmann::json::array();
    for (const auto& e : epochs)
        a.push_back({{"epoch", e.epoch}, {"step", e.step}, {"train_loss", e.train_loss},
                     {"val_loss", std::isnan(e.val_loss) ? nlohmann::json(nullptr) : nlohmann::json(e.val_loss)}});
    return a;
}

nlohmann::json epochs_json(const std::vector<ForecastEpoch>& epochs) {
    auto a = nlohmann::json::array();
    for (const auto& e : epochs)
        a.push_back({{"epoch", e.epoch}, {"step", e.step}, {"train_loss", e.train_loss}, {"val_mae", e.val_mae}});
    return a;
}

RunLayout begin_run(const ExperimentConfig& cfg) {
    RunLayout run{resolve_output_dir(cfg)};
    std::error_code ec;
    fs::create_directories(run.root, ec);
    if (ec) throw DataError("cannot create run directory " + run.root.string() + ": " + ec.message());
    auto out = open_out(run.config());
    out << dump_config(cfg);
    return run;
}

struct PreparedData {
    SeriesDataset raw;
    SeriesDataset normalized;
    std::string hash;
    std::vector<MiragePair> manifest;
};

PreparedData prepare(const ExperimentConfig& cfg, const RunLayout& run) {
    PreparedData d;
    d.raw = prepare_dataset(cfg, run);
    d.normalized = fit_and_apply_zscore(d.raw);
    d.hash = hex64(d.raw.content_hash());
    if (cfg.data_path.empty() && fs::exists(run.manifest())) d.manifest = load_manifest(run.manifest());
    return d;
}

void check_compatible(const MaeCheckpoint& ck, const ExperimentConfig& cfg, const PreparedData& d,
                      const fs::path& path) {
    const auto& pc = ck.model.config.patch;
    std::vector<std::string> e;
    if (pc.long_len != cfg.long_len)
        e.push_back("long window " + std::to_string(pc.long_len) + " vs configured " + std::to_string(cfg.long_len));
    if (pc.width != cfg.width) e.push_back("width " + std::to_string(pc.width) + " vs " + std::to_string(cfg.width));
    if (pc.patch_len != cfg.patch_len) e.push_back("patch length differs");
    if (pc.channels != d.normalized.channels()) e.push_back("channel count differs from the dataset");
    if (ck.norm.mean != d.normalized.norm()->mean || ck.norm.std != d.normalized.norm()->std)
        e.push_back("normalization statistics differ (pre-trained on other data)");
    if (ck.metadata.contains("dataset_hash") && ck.metadata["dataset_hash"] != d.hash)
        e.push_back("dataset hash differs");
    if (!e.empty()) throw DataError(path.string() + " is incompatible with this run: " + join(e, "; "));
}

/// Representations of `anchors` for one encoder, from the cache when it
/// matches, otherwise computed and stored.
RepresentationSet representations_for(const RunLayout& run, Axis axis, const PreparedData& d,
                                      const std::vector<std::size_t>& anchors, std::size_t truncate,
                                      const ExperimentConfig& cfg, const Logger& log) {
    const auto ck_path = run.checkpoint(axis);
    const auto ck = load_checkpoint(ck_path);
    check_compatible(ck, cfg, d, ck_path);
    const auto ck_hash = file_hash(ck_path);
    if (auto cached = load_representations(run.representations(axis), d.hash, ck_hash, anchors, truncate)) {
        note(log, to_string(axis) + " representations: cache hit");
        return std::move(*cached);
    }
    note(log, to_string(axis) + " representations: encoding " + std::to_string(anchors.size()) + " windows");
    auto reps = compute_representations(d.normalized, ck, anchors, truncate);
    fs::create_directories(run.representations(axis).parent_path());
    save_representations(reps, run.representations(axis), d.hash, ck_hash, truncate);
    return reps;
}

std::vector<std::string> missing_checkpoints(const ExperimentConfig& cfg, const RunLayout& run) {
    std::vector<std::string> missing;
    for (auto a : cfg.encoders())
        if (!fs::exists(run.checkpoint(a))) missing.push_back(run.checkpoint(a).string());
    return missing;
}

std::set<std::size_t> mirage_anchors(const std::vector<MiragePair>& manifest, std::size_t short_len) {
    std::set<std::size_t> out;
    for (const auto& p : manifest) {
        out.insert(p.window_start_a + short_len - 1);
        out.insert(p.window_start_b + short_len - 1);
    }
    return out;
}

nlohmann::json metrics_block(const ForecasterModel& m, const ForecastData& data, const ExperimentConfig& cfg) {
    nlohmann::json out = nlohmann::json::object();
    for (auto [name, set] : {std::pair{"val", &data.val}, std::pair{"test", &data.test}}) {
        if (set->samples.empty()) continue;
        const auto ev = evaluate_forecaster(m, data, set->samples, cfg.zero_threshold);
        out[name] = to_json(ev.raw);
        out[name]["normalized_mae"] = ev.normalized.overall.mae;
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------- commands

void cmd_synth(const SynthSpec& spec, const fs::path& out_dir) {
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const auto res = synth_generate(spec);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
    save_binary(res.dataset, out_dir / "series.bin");
    save_manifest(res.manifest, out_dir / "manifest.csv");
    write_json(out_dir / "spec.json", spec);
}

SeriesDataset prepare_dataset(const ExperimentConfig& cfg, const RunLayout& run) {
    if (cfg.data_path.empty()) {
        const auto res = synth_generate(cfg.synth_spec());
        fs::create_directories(run.dataset().parent_path());
        save_binary(res.dataset, run.dataset());
        save_manifest(res.manifest, run.manifest());
        return res.dataset.with_ratios(cfg.ratios());
    }
    const fs::path path(cfg.data_path);
    LayoutDescriptor layout;
    if (path.extension() == ".csv") {
        layout.format = DataFormat::csv;
        layout.steps = cfg.data_steps;
        layout.nodes = cfg.data_nodes;
        layout.channels = cfg.data_channels;
    } else {
        layout = read_binary_layout(path);
        if (layout.channels != cfg.data_channels)
            throw DataError(path.string() + " has " + std::to_string(layout.channels) + " channels, data.channels is " +
                            std::to_string(cfg.data_channels));
    }
    layout.nan_policy = cfg.data_nan_policy == "forward_fill" ? NanPolicy::forward_fill : NanPolicy::reject;
    layout.ratios = cfg.ratios();
    return load_dataset(path, layout);
}

nlohmann::json cmd_pretrain(const ExperimentConfig& cfg, const Logger& log) {
    cfg.validate();
    const auto run = begin_run(cfg);
    const auto d = prepare(cfg, run);
    nlohmann::json summary = {{"mode", to_string(cfg.mode())}, {"dataset_hash", d.hash}, {"encoders", nlohmann::json::array()}};
    nlohmann::json timings = nlohmann::json::object();
    for (auto a : {Axis::spatial, Axis::temporal}) {
        const auto wanted = cfg.encoders();
        if (std::find(wanted.begin(), wanted.end(), a) == wanted.end()) {
            fs::remove(run.checkpoint(a));
            fs::remove(run.loss_csv(a));
        }
    }
    if (cfg.encoders().empty()) {
        summary["notice"] = "ablation mode none: no encoders are pre-trained";
        note(log, summary["notice"].get<std::string>());
    }
    for (auto axis : cfg.encoders()) {
        auto pc = cfg.pretrain_config(axis);
        pc.model.patch.channels = d.normalized.channels();
        note(log, "pre-training " + to_string(axis) + " encoder (" + to_string(pc.mask_axis) + " mask, r=" +
                      num(pc.mask_ratio) + ")");
        const auto t0 = Clock::now();
        auto res = pretrain(d.normalized, pc, [&](std::size_t step, double loss) {
            if (step % 50 == 0) note(log, "  step " + std::to_string(step) + " loss " + num(loss));
            return true;
        });
        timings[to_string(axis)] = seconds_since(t0);
        res.checkpoint.metadata["dataset_hash"] = d.hash;
        res.checkpoint.metadata["encoder"] = to_string(axis);
        fs::create_directories(run.checkpoint(axis).parent_path());
        save_checkpoint(res.checkpoint, run.checkpoint(axis));
        write_loss_csv(res.epochs, run.loss_csv(axis));
        const auto& last = res.epochs.back();
        summary["encoders"].push_back({{"encoder", to_string(axis)},
                                       {"mask_axis", to_string(pc.mask_axis)},
                                       {"mask_ratio", pc.mask_ratio},
                                       {"checkpoint", rel(run.checkpoint(axis), run)},
                                       {"checkpoint_hash", file_hash(run.checkpoint(axis))},
                                       {"loss_csv", rel(run.loss_csv(axis), run)},
                                       {"best_epoch", res.checkpoint.metadata.value("best_epoch", 0)},
                                       {"final_train_loss", last.train_loss},
                                       {"final_val_loss", std::isnan(last.val_loss) ? nlohmann::json(nullptr)
                                                                                    : nlohmann::json(last.val_loss)},
                                       {"epochs", epochs_json(res.epochs)},
                                       {"step_losses", res.step_losses}});
        note(log, "  done: train loss " + num(last.train_loss) + ", val loss " + num(last.val_loss));
    }
    summary["timings"] = timings;
    write_json(run.pretrain_summary(), summary);
    return summary;
}

nlohmann::json cmd_train(const ExperimentConfig& cfg, const Logger& log) {
    cfg.validate();
    const auto run = begin_run(cfg);
    if (const auto missing = missing_checkpoints(cfg, run); !missing.empty())
        throw DataError("missing pre-trained checkpoints (run pretrain first): " + join(missing, ", "));
    const auto d = prepare(cfg, run);
    auto data = make_forecast_data(d.normalized, cfg.window());
    if (data.train.samples.empty())
        throw DataError("no training samples: " + data.train.warning.value_or("training split too short"));

    nlohmann::json timings = nlohmann::json::object();
    std::optional<RepresentationSet> spatial, temporal;
    nlohmann::json encoder_hashes = nlohmann::json::object();
    {
        const auto t0 = Clock::now();
        const auto anchors = all_anchors(data);
        for (auto a : cfg.encoders()) {
            auto reps = representations_for(run, a, d, anchors, cfg.truncate, cfg, log);
            encoder_hashes[to_string(a)] = file_hash(run.checkpoint(a));
            (a == Axis::spatial ? spatial : temporal) = std::move(reps);
        }
        timings["representations"] = seconds_since(t0);
    }

    nlohmann::json report = {{"kind", "run_report"},
                             {"version", 1},
                             {"config", config_json(cfg)},
                             {"mode", to_string(cfg.mode())}};
    report["dataset"] = {{"source", cfg.data_path.empty() ? "synthetic" : cfg.data_path},
                         {"file", cfg.data_path.empty() ? rel(run.dataset(), run) : cfg.data_path},
                         {"hash", d.hash},
                         {"steps", d.raw.steps()},
                         {"nodes", d.raw.nodes()},
                         {"channels", d.raw.channels()},
                         {"norm", {{"mean", d.normalized.norm()->mean}, {"std", d.normalized.norm()->std}}},
                         {"samples",
                          {{"train", data.train.samples.size()},
                           {"val", data.val.samples.size()},
                           {"test", data.test.samples.size()}}}};
    if (fs::exists(run.pretrain_summary())) report["pretrain"] = strip_timings(read_json(run.pretrain_summary()));
    report["runs"] = nlohmann::json::object();

    const auto tc = cfg.forecast_train_config();
    std::map<std::string, ForecasterModel> models;
    const auto train_one = [&](const std::string& role, bool augmented, const fs::path& path) {
        ForecastData fd = data;
        fd.spatial = augmented && spatial ? &*spatial : nullptr;
        fd.temporal = augmented && temporal ? &*temporal : nullptr;
        auto fc = cfg.forecaster_config(augmented);
        fc.channels = d.normalized.channels();
        note(log, "training " + role + " forecaster");
        const auto t0 = Clock::now();
        const auto res = train_forecaster(fd, fc, tc);
        timings["train_" + role] = seconds_since(t0);
        nlohmann::json meta = {{"role", role},
                               {"mode", to_string(cfg.mode())},
                               {"dataset_hash", d.hash},
                               {"encoder_hashes", augmented ? encoder_hashes : nlohmann::json::object()},
                               {"window", {{"input_len", cfg.input_len}, {"horizon", cfg.horizon}, {"long_len", cfg.long_len}}}};
        fs::create_directories(path.parent_path());
        save_forecaster(res.model, *d.normalized.norm(), meta, path);
        const auto metrics = metrics_block(res.model, fd, cfg);
        report["runs"][role] = {{"checkpoint", rel(path, run)},
                                {"checkpoint_hash", file_hash(path)},
                                {"forecaster", res.model.config},
                                {"best_epoch", res.best_epoch},
                                {"epochs", epochs_json(res.epochs)},
                                {"step_losses", res.step_losses},
                                {"metrics", metrics}};
        if (metrics.contains("val"))
            note(log, "  " + role + " val MAE " + num(metrics["val"]["overall"]["mae"].get<double>()));
        models.emplace(role, res.model);
    };

    const bool augmented = cfg.mode() != AblationMode::none;
    if (!(augmented && cfg.compare)) fs::remove(run.baseline());
    if (augmented) train_one("augmented", true, run.forecaster());
    if (!augmented || cfg.compare) train_one("baseline", false, augmented ? run.baseline() : run.forecaster());

    if (models.count("augmented") && models.count("baseline")) {
        nlohmann::json cmp = nlohmann::json::object();
        for (const char* split : {"val", "test"}) {
            const auto& a = report["runs"]["augmented"]["metrics"];
            const auto& b = report["runs"]["baseline"]["metrics"];
            if (!a.contains(split)) continue;
            const double ma = a[split]["overall"]["mae"], mb = b[split]["overall"]["mae"];
            cmp[split] = {{"baseline_mae", mb}, {"augmented_mae", ma}, {"relative_change", mb > 0 ? (ma - mb) / mb : 0.0}};
        }
        report["comparison"] = cmp;
    }

    if (!d.manifest.empty()) {
        const auto anchors = mirage_anchors(d.manifest, cfg.input_len);
        std::vector<ForecastSample> held_out;
        for (const auto* set : {&data.val, &data.test})
            for (const auto& s : set->samples)
                if (anchors.count(s.anchor)) held_out.push_back(s);
        nlohmann::json m = {{"pairs", d.manifest.size()}, {"held_out_windows", held_out.size()}};
        if (!held_out.empty()) {
            for (const auto& [role, model] : models) {
                ForecastData fd = data;
                const bool aug = role == "augmented";
                fd.spatial = aug && spatial ? &*spatial : nullptr;
                fd.temporal = aug && temporal ? &*temporal : nullptr;
                m[role + "_mae"] = evaluate_forecaster(model, fd, held_out, cfg.zero_threshold).raw.overall.mae;
            }
            if (m.contains("augmented_mae") && m.contains("baseline_mae")) {
                const double b = m["baseline_mae"], a = m["augmented_mae"];
                m["improvement"] = b > 0 ? (b - a) / b : 0.0;
            }
        }
        report["mirage"] = m;
    }

    report["timings"] = timings;
    report["environment"] = environment_fingerprint();
    write_json(run.run_report(), report);
    return report;
}

nlohmann::json cmd_eval(const ExperimentConfig& cfg, SplitName split, const std::optional<fs::path>& checkpoint,
                        const Logger& log) {
    cfg.validate();
    const RunLayout run{resolve_output_dir(cfg)};
    const auto path = checkpoint.value_or(run.forecaster());
    if (!fs::exists(path)) throw DataError("forecaster checkpoint not found: " + path.string());
    const auto lf = load_forecaster(path);
    const auto d = prepare(cfg, run);
    if (lf.metadata.value("dataset_hash", d.hash) != d.hash)
        throw DataError(path.string() + " was trained on a different dataset (hash " +
                        lf.metadata.value("dataset_hash", std::string()) + ", this run " + d.hash + ")");
    if (lf.norm.mean != d.normalized.norm()->mean || lf.norm.std != d.normalized.norm()->std)
        throw DataError(path.string() + " uses different normalization statistics");
    const auto& fc = lf.model.config;
    if (fc.input_len != cfg.input_len || fc.horizon != cfg.horizon)
        throw DataError(path.string() + " forecasts " + std::to_string(fc.horizon) + " steps from " +
                        std::to_string(fc.input_len) + "; the config asks for " + std::to_string(cfg.horizon) +
                        " from " + std::to_string(cfg.input_len));
    auto data = make_forecast_data(d.normalized, cfg.window());
    const auto& set = split == SplitName::train ? data.train : split == SplitName::val ? data.val : data.test;
    if (set.samples.empty())
        throw DataError("split '" + to_string(split) + "' has no samples" + (set.warning ? ": " + *set.warning : ""));

    std::optional<RepresentationSet> spatial, temporal;
    const auto hashes = lf.metadata.value("encoder_hashes", nlohmann::json::object());
    for (auto [axis, used] : {std::pair{Axis::spatial, fc.use_spatial}, std::pair{Axis::temporal, fc.use_temporal}}) {
        if (!used) continue;
        const auto ck = run.checkpoint(axis);
        if (!fs::exists(ck)) throw DataError("forecaster needs the " + to_string(axis) + " encoder at " + ck.string());
        if (hashes.contains(to_string(axis)) && hashes[to_string(axis)] != file_hash(ck))
            throw DataError(ck.string() + " is not the encoder this forecaster was trained with");
        // same anchor set as training so the cache is shared
        auto reps = representations_for(run, axis, d, all_anchors(data), fc.truncate, cfg, log);
        (axis == Axis::spatial ? spatial : temporal) = std::move(reps);
    }
    data.spatial = spatial ? &*spatial : nullptr;
    data.temporal = temporal ? &*temporal : nullptr;

    const auto ev = evaluate_forecaster(lf.model, data, set.samples, cfg.zero_threshold);
    nlohmann::json out = {{"kind", "evaluation"},
                          {"split", to_string(split)},
                          {"checkpoint", checkpoint ? path.generic_string() : rel(path, run)},
                          {"checkpoint_hash", file_hash(path)},
                          {"dataset_hash", d.hash},
                          {"samples", set.samples.size()},
                          {"training_split", split == SplitName::train},
                          {"metrics", to_json(ev.raw)},
                          {"normalized", to_json(ev.normalized)}};
    if (split == SplitName::train) {
        out["warning"] = "evaluated on the training split; these metrics are not held-out";
        note(log, "warning: " + out["warning"].get<std::string>());
    }
    write_json(run.metrics(split), out);

    // per-sample, per-step errors in raw units
    auto csv = open_out(run.samples(split));
    csv << "sample,anchor,horizon,mae,rmse\n";
    const std::size_t H = fc.horizon, row = d.raw.nodes() * d.raw.channels();
    for (std::size_t s = 0; s < set.samples.size(); ++s)
        for (std::size_t h = 0; h < H; ++h) {
            double a = 0, q = 0;
            for (std::size_t k = 0; k < row; ++k) {
                const std::size_t i = (s * H + h) * row + k;
                const double e = ev.predicted_raw[i] - ev.truth_raw[i];
                a += std::abs(e);
                q += e * e;
            }
            csv << s << ',' << set.samples[s].anchor << ',' << h + 1 << ',' << num(a / row) << ','
                << num(std::sqrt(q / row)) << '\n';
        }
    if (!csv) throw DataError("failed writing " + run.samples(split).string());
    note(log, to_string(split) + " MAE " + num(ev.raw.overall.mae) + " RMSE " + num(ev.raw.overall.rmse));
    return out;
}

// ---------------------------------------------------------------- report

namespace {

struct OverlayModels {
    std::map<std::string, ForecasterModel> forecasters;  // role -> model
    std::map<Axis, MaeCheckpoint> encoders;
};

/// Normalized forecast [H, N, C] of one anchor.
std::vector<Real> forecast_one(const ForecasterModel& m, const SeriesDataset& ds, std::size_t anchor,
                               const std::map<Axis, MaeCheckpoint>& encoders) {
    const auto& c = m.config;
    std::vector<std::size_t> one{anchor};
    std::optional<RepresentationSet> s, t;
    if (c.use_spatial) s = compute_representations(ds, encoders.at(Axis::spatial), one, c.truncate);
    if (c.use_temporal) t = compute_representations(ds, encoders.at(Axis::temporal), one, c.truncate);
    NoGradGuard no_grad;
    const auto x = reshape(ds.window(anchor + 1 - c.input_len, c.input_len), {1, c.input_len, ds.nodes(), ds.channels()});
    std::optional<Tensor> sr, tr;
    if (s) sr = s->gather(one);
    if (t) tr = t->gather(one);
    const auto y = m.forward(x, sr ? &*sr : nullptr, tr ? &*tr : nullptr);
    return {y.values().begin(), y.values().end()};
}

Real raw_value(Real v, const NormStats& n, std::size_t c) { return v * n.std[c] + n.mean[c]; }

} // namespace

std::vector<fs::path> cmd_report(const fs::path& run_dir, const Logger& log) {
    const RunLayout probe{run_dir};
    if (!fs::exists(probe.config())) throw DataError("missing artifacts: " + probe.config().string());
    auto cfg = load_config(probe.config());
    cfg.output_dir = fs::absolute(run_dir).string();
    cfg.validate();
    const RunLayout run{cfg.output_dir};

    std::vector<std::string> missing;
    if (cfg.data_path.empty() && !fs::exists(run.dataset())) missing.push_back(run.dataset().string());
    for (const auto& m : missing_checkpoints(cfg, run)) missing.push_back(m);
    for (const auto& p : {run.forecaster(), run.run_report()})
        if (!fs::exists(p)) missing.push_back(p.string());
    if (!missing.empty()) throw DataError("missing artifacts: " + join(missing, ", "));

    const auto report = read_json(run.run_report());
    SeriesDataset raw;
    if (cfg.data_path.empty()) {
        raw = load_dataset(run.dataset(), read_binary_layout(run.dataset())).with_ratios(cfg.ratios());
    } else {
        raw = prepare_dataset(cfg, run);
    }
    const auto ds = fit_and_apply_zscore(raw);
    const auto& norm = *ds.norm();
    if (report["dataset"]["hash"] != hex64(raw.content_hash()))
        throw DataError("run report was produced from a different dataset than " + run.dataset().string());

    OverlayModels models;
    for (auto a : cfg.encoders()) models.encoders.emplace(a, load_checkpoint(run.checkpoint(a)));
    for (const auto& [role, entry] : report["runs"].items())
        models.forecasters.emplace(role, load_forecaster(run.root / entry["checkpoint"].get<std::string>()).model);

    std::vector<fs::path> written;
    const auto dir = run.report_dir();
    fs::create_directories(dir);

    // loss curves
    {
        const auto path = dir / "loss_curves.csv";
        auto out = open_out(path);
        out << "phase,epoch,step,train_loss,val_loss\n";
        if (report.contains("pretrain"))
            for (const auto& e : report["pretrain"]["encoders"])
                for (const auto& r : e["epochs"])
                    out << "pretrain_" << e["encoder"].get<std::string>() << ',' << r["epoch"] << ',' << r["step"]
                        << ',' << num(r["train_loss"]) << ','
                        << (r["val_loss"].is_null() ? "" : num(r["val_loss"].get<double>())) << '\n';
        for (const auto& [role, entry] : report["runs"].items())
            for (const auto& r : entry["epochs"])
                out << "forecast_" << role << ',' << r["epoch"] << ',' << r["step"] << ',' << num(r["train_loss"])
                    << ',' << num(r["val_mae"]) << '\n';
        written.push_back(path);
    }

    const auto splits = ds.splits();
    const std::size_t K = std::min(cfg.report_nodes, ds.nodes());

    // reconstruction overlays: one long window, one seeded mask per encoder
    {
        const auto& scored = splits.val.size() ? splits.val : splits.train;
        auto starts = long_window_starts(cfg.long_len, scored, cfg.long_len);
        if (starts.empty()) starts = long_window_starts(cfg.long_len, splits.train, cfg.long_len);
        if (!starts.empty()) {
            const std::size_t start = starts.front();
            const auto window = ds.window(start, cfg.long_len);
            for (const auto& [axis, ck] : models.encoders) {
                const auto& pc = ck.model.config.patch;
                const std::size_t P = pc.num_patches(), N = ds.nodes(), L = pc.patch_len, C = pc.channels;
                const auto spec = sample_mask(ck.mask_axis, mask_extent(ck.mask_axis, P, N), ck.mask_ratio,
                                              mix_seed(cfg.mae_seed, 4, start), cfg.sampling());
                const auto rec = reconstruct(ck.model, window, spec);
                // [step][node] -> reconstructed value, NaN where visible
                std::vector<Real> recon(cfg.long_len * N * C, std::numeric_limits<Real>::quiet_NaN());
                if (rec) {
                    const auto pv = rec->predicted.values();
                    const std::size_t row = L * C;
                    for (std::size_t e = 0; e < pv.size(); ++e) {
                        const std::size_t lc = e % row, slot = e / row;
                        std::size_t p = 0, n = 0;
                        switch (spec.axis) {
                            case MaskAxis::spatial: p = slot / spec.masked.size(); n = spec.masked[slot % spec.masked.size()]; break;
                            case MaskAxis::temporal: p = spec.masked[slot / N]; n = slot % N; break;
                            case MaskAxis::mixed: p = spec.masked[slot] / N; n = spec.masked[slot] % N; break;
                        }
                        recon[((p * L + lc / C) * N + n) * C + lc % C] = pv[e];
                    }
                }
                std::vector<std::size_t> nodes;
                if (spec.axis == MaskAxis::spatial) {
                    auto m = spec.masked;
                    std::sort(m.begin(), m.end());
                    nodes.assign(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(std::min(K, m.size())));
                } else {
                    for (std::size_t n = 0; n < K; ++n) nodes.push_back(n);
                }
                for (auto n : nodes) {
                    const auto path = dir / ("reconstruction_" + to_string(axis) + "_node" + std::to_string(n) + ".csv");
                    auto out = open_out(path);
                    out << "step,truth,reconstruction,masked\n";
                    for (std::size_t t = 0; t < cfg.long_len; ++t) {
                        const Real r = recon[(t * N + n) * C];
                        out << start + t << ',' << num(raw_value(window.values()[(t * N + n) * C], norm, 0)) << ','
                            << (std::isnan(r) ? "" : num(raw_value(r, norm, 0))) << ',' << (std::isnan(r) ? 0 : 1)
                            << '\n';
                    }
                    written.push_back(path);
                }
            }
        }
    }

    // prediction overlays for the first held-out sample
    const auto data = make_forecast_data(ds, cfg.window());
    const auto& held = data.test.samples.empty() ? data.val.samples : data.test.samples;
    const auto overlay = [&](std::ostream& out, std::size_t anchor, std::size_t n, std::size_t r,
                             const std::map<std::string, std::vector<Real>>& preds) {
        const std::size_t T = cfg.input_len, N = ds.nodes(), C = ds.channels();
        const std::size_t step = anchor + 1 - T + r;
        out << step << ',' << (r < T ? "input" : "forecast") << ',' << num(raw_value(ds.at(step, n), norm, 0));
        for (const char* role : {"augmented", "baseline"}) {
            out << ',';
            auto it = preds.find(role);
            if (it != preds.end() && r >= T) out << num(raw_value(it->second[((r - T) * N + n) * C], norm, 0));
        }
    };
    if (!held.empty()) {
        const std::size_t anchor = held.front().anchor;
        std::map<std::string, std::vector<Real>> preds;
        for (const auto& [role, m] : models.forecasters) preds[role] = forecast_one(m, ds, anchor, models.encoders);
        for (std::size_t n = 0; n < K; ++n) {
            const auto path = dir / ("prediction_node" + std::to_string(n) + ".csv");
            auto out = open_out(path);
            out << "step,phase,truth,augmented,baseline\n";
            for (std::size_t r = 0; r < cfg.input_len + cfg.horizon; ++r) {
                overlay(out, anchor, n, r, preds);
                out << '\n';
            }
            written.push_back(path);
        }
    }

    // mirage pairs from the generator manifest
    if (cfg.data_path.empty() && fs::exists(run.manifest())) {
        const auto manifest = load_manifest(run.manifest());
        std::size_t emitted = 0;
        for (std::size_t i = 0; i < manifest.size() && emitted < std::max<std::size_t>(K, 1); ++i) {
            const auto& p = manifest[i];
            const std::size_t a = p.window_start_a + cfg.input_len - 1, b = p.window_start_b + cfg.input_len - 1;
            if (a + 1 < cfg.long_len || b + cfg.horizon >= ds.steps()) continue;
            std::map<std::string, std::vector<Real>> pa, pb;
            for (const auto& [role, m] : models.forecasters) {
                pa[role] = forecast_one(m, ds, a, models.encoders);
                pb[role] = forecast_one(m, ds, b, models.encoders);
            }
            const auto path = dir / ("mirage_pair" + std::to_string(i) + ".csv");
            auto out = open_out(path);
            out << "a_step,phase,a_truth,a_augmented,a_baseline,b_step,b_phase,b_truth,b_augmented,b_baseline\n";
            for (std::size_t r = 0; r < cfg.input_len + cfg.horizon; ++r) {
                overlay(out, a, 0, r, pa);
                out << ',';
                overlay(out, b, 0, r, pb);
                out << '\n';
            }
            written.push_back(path);
            ++emitted;
        }
    }
    note(log, "wrote " + std::to_string(written.size()) + " files under " + dir.string());
    return written;
}

nlohmann::json cmd_run(const ExperimentConfig& cfg, const Logger& log) {
    cfg.validate();
    nlohmann::json out;
    out["pretrain"] = cmd_pretrain(cfg, log);
    out["train"] = cmd_train(cfg, log);
    out["eval"] = cmd_eval(cfg, SplitName::test, std::nullopt, log);
    auto files = nlohmann::json::array();
    const RunLayout run{resolve_output_dir(cfg)};
    for (const auto& f : cmd_report(run.root, log)) files.push_back(rel(f, run));
    out["report_files"] = files;
    return out;
}

nlohmann::json cmd_sweep(const ExperimentConfig& cfg, const std::vector<double>& ratios, const Logger& log) {
    if (ratios.empty()) throw ConfigError("sweep needs at least one masking ratio");
    if (cfg.mode() == AblationMode::none) throw ConfigError("a masking-ratio sweep needs pre-trained encoders (ablation != none)");
    std::vector<ExperimentConfig> runs;
    const auto base = resolve_output_dir(cfg);
    for (double r : ratios) {
        auto c = cfg;
        c.mask_ratio = r;
        c.compare = false;
        c.output_dir = (base / ("r" + num(r))).string();
        c.validate();
        runs.push_back(c);
    }
    auto rows = nlohmann::json::array();
    for (const auto& c : runs) {
        note(log, "sweep: mask_ratio " + num(c.mask_ratio));
        const auto pre = cmd_pretrain(c, log);
        const auto rep = cmd_train(c, log);
        nlohmann::json row = {{"mask_ratio", c.mask_ratio}, {"run_dir", fs::relative(c.output_dir, base).generic_string()}};
        for (const auto& e : pre["encoders"]) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& r : e["epochs"])
                if (!r["val_loss"].is_null()) best = std::min(best, r["val_loss"].get<double>());
            row[e["encoder"].get<std::string>() + "_val_reconstruction"] = std::isfinite(best) ? nlohmann::json(best) : nlohmann::json(nullptr);
        }
        const auto& m = rep["runs"]["augmented"]["metrics"];
        for (const char* split : {"val", "test"})
            if (m.contains(split)) {
                row[std::string(split) + "_mae"] = m[split]["overall"]["mae"];
                row[std::string(split) + "_rmse"] = m[split]["overall"]["rmse"];
                row[std::string(split) + "_mape"] = m[split]["overall"]["mape"];
            }
        rows.push_back(row);
    }
    {
        auto out = open_out(base / "sweep.csv");
        std::vector<std::string> cols;
        for (const auto& [k, v] : rows[0].items()) cols.push_back(k);
        out << join(cols, ",") << "\n";
        for (const auto& row : rows) {
            std::vector<std::string> cells;
            for (const auto& k : cols) {
                const auto& v = row.contains(k) ? row[k] : nlohmann::json(nullptr);
                cells.push_back(v.is_null() ? "" : v.is_string() ? v.get<std::string>() : num(v.get<double>()));
            }
            out << join(cells, ",") << "\n";
        }
    }
    auto md = open_out(base / "sweep.md");
    md << sweep_table(rows);
    write_json(base / "sweep.json", rows);
    return rows;
}

std::string sweep_table(const nlohmann::json& rows) {
    if (rows.empty()) return "";
    std::vector<std::string> cols;
    for (const auto& [k, v] : rows[0].items())
        if (k != "run_dir") cols.push_back(k);
    std::ostringstream out;
    out << "| " << join(cols, " | ") << " |\n|";
    for (std::size_t i = 0; i < cols.size(); ++i) out << "---|";
    out << "\n";
    for (const auto& row : rows) {
        out << "|";
        for (const auto& k : cols) {
            const auto& v = row.contains(k) ? row[k] : nlohmann::json(nullptr);
            std::ostringstream cell;
            if (v.is_number()) cell << std::setprecision(5) << v.get<double>();
            else if (v.is_string()) cell << v.get<std::string>();
            else cell << "n/a";
            out << " " << cell.str() << " |";
        }
        out << "\n";
    }
    return out.str();
}

nlohmann::json environment_fingerprint() {
    nlohmann::json env = {{"library", "stdmae 0.1.0"},
                          {"compiler", __VERSION__},
                          {"cplusplus", static_cast<long>(__cplusplus)},
                          {"real", "float64"},
                          {"checkpoint_precision", "float32"},
                          {"hardware_threads", std::thread::hardware_concurrency()}};
#ifdef NDEBUG
    env["optimized"] = true;
#else
    env["optimized"] = false;
#endif
    utsname u{};
    if (uname(&u) == 0) env["os"] = std::string(u.sysname) + " " + u.release + " " + u.machine;
    return env;
}

nlohmann::json strip_timings(nlohmann::json report) {
    if (report.is_object()) {
        report.erase("timings");
        for (auto& [k, v] : report.items()) v = strip_timings(v);
    } else if (report.is_array()) {
        for (auto& v : report) v = strip_timings(v);
    }
    return report;
}

} // namespace stdmae
