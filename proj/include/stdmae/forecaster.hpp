#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "stdmae/data.hpp"
#include "stdmae/mae.hpp"
#include "stdmae/nn.hpp"

namespace stdmae {

struct ForecasterConfig {
    std::size_t input_len = 12;   // T
    std::size_t horizon = 12;     // T-hat
    std::size_t channels = 1;
    std::size_t hidden = 64;      // D'
    std::vector<std::size_t> dilations{1, 2, 4};
    std::size_t truncate = 1;     // T'
    std::size_t rep_width = 0;    // D of the pre-trained encoders
    bool use_spatial = false;
    bool use_temporal = false;
    Real aug_init_gain = 0.1;     // output layer scale of the projection MLPs

    void validate() const;
};

void to_json(nlohmann::json& j, const ForecasterConfig& c);
void from_json(const nlohmann::json& j, ForecasterConfig& c);

/// Node-wise dilated temporal convolution (kernel 2) with residual and skip
/// connections; the summed skips give the hidden state H^(F) [B, N, D'].
struct TemporalConvBlock {
    Linear tap_past, tap_now, skip;
};

struct ForecasterModel {
    ForecasterConfig config;
    Linear input_proj;
    std::vector<TemporalConvBlock> blocks;
    Mlp head;
    std::optional<Mlp> project_spatial;
    std::optional<Mlp> project_temporal;

    ForecasterModel() = default;
    /// Predictor, head and each projection draw from separate streams of
    /// `seed`, so enabling a branch never changes the other parameters.
    ForecasterModel(const ForecasterConfig& config, std::uint64_t seed);

    NamedParams parameters() const;

    /// [B, T, N, C] (or [T, N, C]) -> H^(F): [B, N, D'] (or [N, D']).
    Tensor predictor_forward(const Tensor& short_input) const;
    /// [B, N, D'] -> [B, H, N, C] (batch axis optional as above).
    Tensor forecast_head(const Tensor& hidden) const;
    /// Full forward pass; representation rows are [B, N, T' * D] or null
    /// for disabled branches.
    Tensor forward(const Tensor& short_input, const Tensor* spatial_rep, const Tensor* temporal_rep) const;
};

/// Keeps patches [T_p - T', T_p) of H ([T_p, N, D]) and lays them out as
/// [N, T' * D]. Throws ShapeError when T' > T_p.
Tensor truncate_representation(const Tensor& rep, std::size_t truncate);
/// truncate_representation followed by the projection MLP: [N, D'].
Tensor truncate_and_project(const Tensor& rep, std::size_t truncate, const Mlp& mlp);
/// H^(F) + optional projected representations, elementwise.
Tensor augment(const Tensor& hidden, const Tensor* spatial, const Tensor* temporal);

/// Truncated encoder representations per anchor: rows of [N, T' * D].
struct RepresentationSet {
    std::vector<std::size_t> anchors;
    std::size_t nodes = 0;
    std::size_t width = 0;  // T' * D
    std::vector<Real> values;
    std::unordered_map<std::size_t, std::size_t> row_of;

    void index();
    /// Stacks the rows of the given anchors into [B, N, width].
    Tensor gather(std::span<const std::size_t> anchors) const;
};

/// Runs the frozen encoder of `ckpt` on the long window of every anchor.
/// Values are rounded to float32 so cached and fresh sets agree exactly.
RepresentationSet compute_representations(const SeriesDataset& ds, const MaeCheckpoint& ckpt,
                                          std::vector<std::size_t> anchors, std::size_t truncate);

/// Cache files use the checkpoint container; the header records the
/// dataset hash, checkpoint hash and anchor list they were built from.
void save_representations(const RepresentationSet& reps, const std::filesystem::path& path,
                          const std::string& dataset_hash, const std::string& checkpoint_hash,
                          std::size_t truncate);
/// Returns nullopt when the file is missing or was built from other inputs.
std::optional<RepresentationSet> load_representations(const std::filesystem::path& path,
                                                      const std::string& dataset_hash,
                                                      const std::string& checkpoint_hash,
                                                      const std::vector<std::size_t>& anchors,
                                                      std::size_t truncate);

struct Metrics {
    double mae = 0;
    double rmse = 0;
    std::optional<double> mape;  // percent; empty when every target is excluded
    std::size_t count = 0;
    std::size_t mape_count = 0;
};

struct MetricReport {
    Metrics overall;
    std::vector<std::pair<std::size_t, Metrics>> horizons;  // 1-based step
};

/// Predictions and truths laid out [S, H, N, C]. Overall metrics pool all
/// steps; horizon k uses step k only. MAPE skips |y| < zero_threshold.
MetricReport evaluate(std::span<const Real> predicted, std::span<const Real> truth, const Shape& shape,
                      Real zero_threshold, const std::vector<std::size_t>& horizons = {3, 6, 12});

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const MetricReport& r);

struct ForecastTrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double grad_clip = 5.0;
    std::size_t patience = 5;  // epochs without validation improvement; 0 disables
    std::uint64_t seed = 0;
    std::size_t max_steps = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const ForecastTrainConfig& c);
void from_json(const nlohmann::json& j, ForecastTrainConfig& c);

/// Everything a forecaster run reads: normalized data, the sample sets of
/// each split and, for enabled branches, representations covering them.
struct ForecastData {
    const SeriesDataset* dataset = nullptr;
    WindowSpec window;
    SampleSet train, val, test;
    const RepresentationSet* spatial = nullptr;
    const RepresentationSet* temporal = nullptr;
};

/// Samples of every split restricted to anchors with a full long lookback,
/// so baseline and augmented runs see the same positions.
ForecastData make_forecast_data(const SeriesDataset& ds, const WindowSpec& w);
std::vector<std::size_t> all_anchors(const ForecastData& data);

struct ForecastEpoch {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double train_loss = 0;
    double val_mae = 0;
};

struct ForecastResult {
    ForecasterModel model;
    std::vector<double> step_losses;
    std::vector<ForecastEpoch> epochs;
    std::size_t best_epoch = 0;
};

/// L1 training on normalized targets with early stopping on validation MAE;
/// returns the best parameters rounded to float32. Representations are inputs only, so the
/// encoders that produced them are never touched.
ForecastResult train_forecaster(const ForecastData& data, const ForecasterConfig& cfg, const ForecastTrainConfig& tc);

/// Normalized predictions [S, H, N, C] for the given samples.
std::vector<Real> predict(const ForecasterModel& model, const ForecastData& data,
                          const std::vector<ForecastSample>& samples, std::size_t batch_size = 64);
/// Normalized targets [S, H, N, C].
std::vector<Real> targets(const ForecastData& data, const std::vector<ForecastSample>& samples);

struct ForecastEvaluation {
    MetricReport raw;         // de-normalized units
    MetricReport normalized;
    std::vector<Real> predicted_raw;  // [S, H, N, C]
    std::vector<Real> truth_raw;
};

/// Metrics in raw units; MAPE threshold = zero_threshold * training std.
/// Horizons 3, 6 and 12 are reported where the forecast reaches them.
ForecastEvaluation evaluate_forecaster(const ForecasterModel& model, const ForecastData& data,
                                       const std::vector<ForecastSample>& samples, Real zero_threshold = 1e-2);

void save_forecaster(const ForecasterModel& model, const NormStats& norm, const nlohmann::json& metadata,
                     const std::filesystem::path& path);
struct LoadedForecaster {
    ForecasterModel model;
    NormStats norm;
    nlohmann::json metadata;
};
LoadedForecaster load_forecaster(const std::filesystem::path& path);

} // namespace stdmae
