#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stdmae/data.hpp"
#include "stdmae/forecaster.hpp"
#include "stdmae/mae.hpp"
#include "stdmae/synth.hpp"

namespace stdmae {

enum class AblationMode { full, s_only, t_only, mixed, none };

std::string to_string(AblationMode m);
AblationMode parse_ablation_mode(const std::string& s);

/// One experiment, flat so every field maps to one `key = value` line and
/// one `--key value` flag. See config_fields() for keys and defaults.
struct ExperimentConfig {
    // dataset: a file, or (when data_path is empty) a synthetic series
    std::string data_path;
    std::size_t data_nodes = 0;     // CSV only; binary files carry their shape
    std::size_t data_steps = 0;
    std::size_t data_channels = 1;
    std::string data_nan_policy = "reject";
    std::string synth_kind = "sinusoid";  // sinusoid | mixture
    std::size_t synth_nodes = 20;
    std::size_t synth_steps = 2880;
    std::size_t synth_period = 288;
    std::size_t synth_latents = 3;
    double synth_noise = 0.1;
    double synth_mirage_fraction = 0.0;
    std::uint64_t synth_seed = 0;
    double split_train = 0.6;
    double split_val = 0.2;
    double split_test = 0.2;

    // geometry
    std::size_t patch_len = 12;   // L
    std::size_t long_len = 864;   // T_long
    std::size_t width = 96;       // D
    std::size_t input_len = 12;   // T
    std::size_t horizon = 12;     // T-hat
    std::size_t truncate = 1;     // T'
    std::size_t hidden = 64;      // D'
    double mask_ratio = 0.25;
    std::string mask_sampling = "fixed_count";

    // pre-training
    std::size_t mae_heads = 4;
    std::size_t mae_encoder_layers = 4;
    std::size_t mae_decoder_layers = 1;
    std::size_t mae_ffn_mult = 4;
    std::size_t mae_epochs = 20;
    std::size_t mae_batch_size = 8;
    double mae_lr = 1e-3;
    double mae_grad_clip = 0.0;
    std::uint64_t mae_seed = 0;
    std::size_t mae_window_stride = 12;
    std::size_t mae_val_window_stride = 48;
    std::size_t mae_max_steps = 0;

    // downstream
    std::string forecast_dilations = "1,2,4";
    double forecast_aug_init_gain = 0.1;
    std::size_t forecast_epochs = 30;
    std::size_t forecast_batch_size = 32;
    double forecast_lr = 1e-3;
    double forecast_grad_clip = 5.0;
    std::size_t forecast_patience = 5;
    std::uint64_t forecast_seed = 0;
    std::size_t forecast_max_steps = 0;

    // orchestration
    std::string ablation = "full";
    bool compare = true;          // also train the plain baseline
    double zero_threshold = 1e-2; // MAPE exclusion, normalized units
    std::size_t report_nodes = 3; // sensors per overlay family
    std::string output_dir = "runs/default";

    /// Throws ConfigError listing every violated field and cross-field rule.
    void validate() const;

    AblationMode mode() const;
    MaskSampling sampling() const;
    std::vector<std::size_t> dilations() const;
    WindowSpec window() const;
    SplitRatios ratios() const;
    SynthSpec synth_spec() const;
    /// Pre-training settings for the encoder along `axis`. In mixed mode both
    /// encoders use the mixed mask.
    PretrainConfig pretrain_config(Axis axis) const;
    ForecasterConfig forecaster_config(bool augmented) const;
    ForecastTrainConfig forecast_train_config() const;
    /// Encoders the ablation mode pre-trains and feeds downstream.
    std::vector<Axis> encoders() const;
};

/// Accessor for one config key.
struct ConfigField {
    std::string key;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;  // throws ConfigError on bad syntax
    std::function<nlohmann::json(const ExperimentConfig&)> get;
};

const std::vector<ConfigField>& config_fields();

/// Parses `key = value` lines (INI sections prefix keys with "section.").
/// Unknown keys and malformed values are collected into one ConfigError.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
/// Applies key/value overrides in order.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv);
/// Every field with its value and help text, loadable by parse_config.
std::string dump_config(const ExperimentConfig& cfg);
nlohmann::json config_json(const ExperimentConfig& cfg);

/// Resolves `output_dir` against STDMAE_OUTPUT_ROOT when it is relative.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg);

/// File layout of a run directory.
struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.txt"; }
    std::filesystem::path dataset() const { return root / "data" / "series.bin"; }
    std::filesystem::path manifest() const { return root / "data" / "manifest.csv"; }
    std::filesystem::path checkpoint(Axis a) const { return root / "pretrain" / (to_string(a) + ".ckpt"); }
    std::filesystem::path loss_csv(Axis a) const { return root / "pretrain" / (to_string(a) + "_loss.csv"); }
    std::filesystem::path pretrain_summary() const { return root / "pretrain" / "summary.json"; }
    std::filesystem::path representations(Axis a) const { return root / "cache" / (to_string(a) + "_reps.bin"); }
    std::filesystem::path forecaster() const { return root / "train" / "forecaster.ckpt"; }
    std::filesystem::path baseline() const { return root / "train" / "baseline.ckpt"; }
    std::filesystem::path run_report() const { return root / "train" / "report.json"; }
    std::filesystem::path metrics(SplitName s) const { return root / "eval" / ("metrics_" + to_string(s) + ".json"); }
    std::filesystem::path samples(SplitName s) const { return root / "eval" / ("samples_" + to_string(s) + ".csv"); }
    std::filesystem::path report_dir() const { return root / "report"; }
};

/// Progress sink; the CLI prints to stderr, tests stay quiet.
using Logger = std::function<void(const std::string&)>;

/// Writes the synthetic series (binary) and its mirage manifest.
void cmd_synth(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// Raw (un-normalized) series of the experiment: loads data_path, or
/// generates and stores the synthetic series in the run directory.
SeriesDataset prepare_dataset(const ExperimentConfig& cfg, const RunLayout& run);

/// Pre-trains the encoders the ablation mode asks for; writes checkpoints,
/// loss CSVs and a summary (also returned). Mode "none" writes a notice only.
nlohmann::json cmd_pretrain(const ExperimentConfig& cfg, const Logger& log = {});

/// Trains the forecaster of the ablation mode (plus the plain baseline when
/// `compare` is set) and writes the RunReport. Needs cmd_pretrain's output.
nlohmann::json cmd_train(const ExperimentConfig& cfg, const Logger& log = {});

/// Evaluates a forecaster checkpoint (default: the run's) on one split;
/// writes metrics JSON and a per-sample CSV. Training-split runs are flagged.
nlohmann::json cmd_eval(const ExperimentConfig& cfg, SplitName split,
                        const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                        const Logger& log = {});

/// Plot-ready overlays and curves from a finished run directory. Returns
/// the list of files written. Throws DataError naming every missing artifact.
std::vector<std::filesystem::path> cmd_report(const std::filesystem::path& run_dir, const Logger& log = {});

/// synth (if any) + pretrain + train + eval(test) + report.
nlohmann::json cmd_run(const ExperimentConfig& cfg, const Logger& log = {});

/// Runs pretrain + train once per masking ratio, each in its own
/// sub-directory, and writes sweep.csv / sweep.md. Returns the table rows.
nlohmann::json cmd_sweep(const ExperimentConfig& cfg, const std::vector<double>& ratios, const Logger& log = {});

/// Markdown table of a cmd_sweep result.
std::string sweep_table(const nlohmann::json& rows);

/// Compiler, platform and library facts recorded in every report.
nlohmann::json environment_fingerprint();

/// A copy of `report` without wall-clock fields.
nlohmann::json strip_timings(nlohmann::json report);

} // namespace stdmae
