#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stdmae/data.hpp"
#include "stdmae/embedding.hpp"
#include "stdmae/nn.hpp"

namespace stdmae {

/// Axis the encoder attends along.
enum class Axis { spatial, temporal };
/// Which slots a mask hides: whole nodes, whole patches, or individual
/// (patch, node) cells of the flattened grid.
enum class MaskAxis { spatial, temporal, mixed };
enum class MaskSampling { fixed_count, bernoulli };

std::string to_string(Axis a);
std::string to_string(MaskAxis a);
std::string to_string(MaskSampling s);
Axis parse_axis(const std::string& s);
MaskAxis parse_mask_axis(const std::string& s);
MaskSampling parse_mask_sampling(const std::string& s);

/// Indices are node ids (spatial), patch ids (temporal), or p * N + n
/// (mixed). `masked` keeps the listed order; `visible` is ascending.
struct MaskSpec {
    MaskAxis axis = MaskAxis::spatial;
    double ratio = 0.25;
    std::size_t extent = 0;
    std::vector<std::size_t> masked;
    std::vector<std::size_t> visible;
    std::uint64_t seed = 0;
};

/// Fixed count: exactly floor(extent * r) distinct indices, uniform without
/// replacement. Bernoulli: each index independently with probability r,
/// redrawn until at least one index is masked and one visible.
/// Throws ConfigError for r outside (0, 1) or an extent too small to mask.
MaskSpec sample_mask(MaskAxis axis, std::size_t extent, double r, std::uint64_t seed,
                     MaskSampling sampling = MaskSampling::fixed_count);
/// Mask from an explicit index list (any order, may be empty).
MaskSpec make_mask(MaskAxis axis, std::size_t extent, std::vector<std::size_t> masked);
/// Extent of the masked axis for a [T_p, N, D] grid.
std::size_t mask_extent(MaskAxis axis, std::size_t patches, std::size_t nodes);

/// Keeps the visible slices of E ([T_p, N, D]) in original order. Mixed masks
/// do not drop slices (see encode); passing one is an error.
Tensor apply_mask(const Tensor& embedding, const MaskSpec& spec);

struct MaeConfig {
    PatchConfig patch;
    Axis axis = Axis::temporal;
    std::size_t heads = 4;
    std::size_t encoder_layers = 4;
    std::size_t decoder_layers = 1;
    std::size_t ffn_mult = 4;

    void validate() const;
};

void to_json(nlohmann::json& j, const MaeConfig& c);
void from_json(const nlohmann::json& j, MaeConfig& c);

/// Patch embedding, axis-wise transformer encoder, shared mask token and a
/// light decoder with a regression layer D -> L * C (zero-initialized).
struct MaeModel {
    MaeConfig config;
    PatchEmbedding embed;
    std::vector<TransformerLayer> encoder;
    LayerNorm encoder_norm;
    Tensor mask_token;  // [D]
    std::vector<TransformerLayer> decoder;
    LayerNorm decoder_norm;
    Linear regression;

    MaeModel() = default;
    MaeModel(const MaeConfig& config, std::uint64_t seed);

    NamedParams parameters() const;

    /// [T_long, N, C] -> E: [T_p, N, D]
    Tensor embed_window(const Tensor& window) const;

    /// Runs the encoder on visible embeddings (output of apply_mask) along
    /// the model axis. With a mixed mask, pass the full grid plus the mask:
    /// masked cells are excluded as attention keys.
    Tensor encode(const Tensor& visible, const MaskSpec* mixed = nullptr) const;

    /// Fills masked slots with mask token + positional encoding, restores
    /// the original order, decodes and regresses, then gathers the masked
    /// slots in listed order: [T_p, N_M, L*C] (spatial), [T_M, N, L*C]
    /// (temporal) or [M, L*C] (mixed). No masked slots gives nullopt.
    std::optional<Tensor> pad_and_decode(const Tensor& encoded, const MaskSpec& spec, std::size_t patches,
                                         std::size_t nodes) const;
    /// Decoder output before gathering: [T_p, N, L*C] over every slot.
    Tensor decode_grid(const Tensor& encoded, const MaskSpec& spec, std::size_t patches, std::size_t nodes) const;

    /// Encoder output over every patch and node, no masking: [T_p, N, D].
    Tensor represent(const Tensor& window) const;
};

/// Selects the masked slots of a [T_p, N, F] grid in listed order.
Tensor gather_masked(const Tensor& grid, const MaskSpec& spec);

/// Ground-truth patches of a [T_long, N, C] window at the masked slots,
/// laid out like pad_and_decode's output.
Tensor masked_targets(const Tensor& window, const MaskSpec& spec, std::size_t patch_len);

/// Mean absolute error over all elements; shapes must match.
Tensor masked_loss(const Tensor& predicted, const Tensor& truth);

/// One full forward pass: embed, mask, encode, decode. Returns prediction
/// and truth at the masked slots (nullopt if nothing is masked).
struct Reconstruction {
    Tensor predicted;
    Tensor truth;
};
std::optional<Reconstruction> reconstruct(const MaeModel& model, const Tensor& window, const MaskSpec& spec);

struct PretrainConfig {
    MaeConfig model;
    MaskAxis mask_axis = MaskAxis::temporal;  // model axis or mixed
    MaskSampling sampling = MaskSampling::fixed_count;
    double mask_ratio = 0.25;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    double lr = 1e-3;
    double grad_clip = 0.0;  // 0 disables
    std::uint64_t seed = 0;
    std::size_t window_stride = 12;      // between training window starts
    std::size_t val_window_stride = 48;  // between validation window starts
    std::size_t max_steps = 0;           // 0 = no limit

    void validate() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;  // optimizer steps completed
    double train_loss = 0;
    double val_loss = 0;
};

struct MaeCheckpoint {
    MaeModel model;
    MaskAxis mask_axis = MaskAxis::temporal;
    double mask_ratio = 0.25;
    NormStats norm;
    std::uint64_t seed = 0;
    nlohmann::json metadata;  // epochs, best epoch, losses, config
};

struct PretrainResult {
    MaeCheckpoint checkpoint;
    std::vector<double> step_losses;
    std::vector<EpochRecord> epochs;
};

/// Masked-slot reconstruction error restricted to elements whose time step
/// lies in `scored`. Windows are long windows ending inside `scored`.
/// Masks are drawn from `seed` per window, so repeated calls agree.
struct ReconstructionElement {
    std::size_t step, node, channel;
    Real predicted, truth;
};
struct ReconstructionEval {
    double mae = 0;       // normalized units
    double mae_raw = 0;   // de-normalized
    std::size_t count = 0;
    std::vector<ReconstructionElement> elements;  // filled when requested
};
ReconstructionEval evaluate_reconstruction(const MaeModel& model, const SeriesDataset& ds, IndexRange scored,
                                           MaskAxis mask_axis, double ratio, std::uint64_t seed,
                                           std::size_t window_stride, bool keep_elements = false,
                                           MaskSampling sampling = MaskSampling::fixed_count);

/// Per-step callback: (step, loss). Return false to stop early.
using StepCallback = std::function<bool(std::size_t, double)>;

/// Trains on long windows of the training split of a normalized dataset,
/// one fresh mask per window per step. Returns the parameters with the best
/// validation reconstruction loss, rounded to float32.
/// Throws DivergenceError when a loss becomes non-finite.
PretrainResult pretrain(const SeriesDataset& ds, const PretrainConfig& cfg, const StepCallback& on_step = {});

/// Epoch curve as CSV: step,train_loss,val_loss.
void write_loss_csv(const std::vector<EpochRecord>& epochs, const std::filesystem::path& path);

void save_checkpoint(const MaeCheckpoint& ckpt, const std::filesystem::path& path);
MaeCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Full-window representation [T_p, N, D] from a frozen checkpoint; the
/// window length must match the checkpoint's long window.
Tensor encode_representation(const Tensor& window, const MaeCheckpoint& ckpt);

/// Deterministic 64-bit mixing of seed components.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0, std::uint64_t d = 0);

} // namespace stdmae
