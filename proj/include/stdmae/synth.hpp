#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "stdmae/data.hpp"

namespace stdmae {

/// Parameters of a synthetic spatiotemporal series:
///   x[t, n] = amp[n] * sin(2 pi t / period + phase[n])
///           + sum_k mix[n, k] * latent_k(t) + noise
/// Latents are smooth unit-variance sums of random sinusoids drawn from the
/// seed. Mirage pairs are planted on top (see synth_generate).
struct SynthSpec {
    std::size_t n_nodes = 20;
    std::size_t n_steps = 2880;
    std::size_t daily_period = 288;
    std::vector<Real> node_amplitudes;  // n_nodes
    std::vector<Real> node_phases;      // n_nodes
    std::size_t n_latents = 0;
    std::vector<Real> latent_mix;       // n_nodes x n_latents, row-major
    Real noise_std = 0.1;
    Real mirage_fraction = 0.0;         // [0, 0.5]
    std::uint64_t seed = 0;
    // Window geometry used when planting mirages.
    std::size_t short_len = 12;
    std::size_t horizon = 12;
    std::size_t lookback = 864;

    /// Throws ConfigError describing the first violated invariant.
    void validate() const;
};

/// A planted pair: the short windows starting at `window_start_a` and
/// `window_start_b` hold identical values; their futures begin
/// `divergence_step` steps after the window start and differ.
struct MiragePair {
    std::size_t window_start_a = 0;
    std::size_t window_start_b = 0;
    std::size_t divergence_step = 0;
    bool operator==(const MiragePair&) const = default;
};

struct SynthResult {
    SeriesDataset dataset;
    std::vector<MiragePair> manifest;
    /// Number of candidate slots (disjoint short+horizon windows with a full
    /// lookback) the pairs were drawn from.
    std::size_t candidate_windows = 0;
};

/// Deterministic in `spec`. Values are rounded to float32 so every on-disk
/// format round-trips them exactly.
///
/// Mirage planting: the timeline after the first `lookback - short_len`
/// steps is cut into disjoint slots of `short_len + horizon` steps;
/// floor(mirage_fraction * slots) pairs of slots are drawn. In each pair the
/// two short windows are overwritten by their element-wise average, so both
/// show the same input while their futures keep their own (different)
/// continuations. The long history before each window is untouched.
SynthResult synth_generate(const SynthSpec& spec);

/// Daily sinusoid per node with amplitude in [0.5, 2] and phase in [0, 2 pi).
SynthSpec sinusoid_spec(std::size_t nodes, std::size_t steps, Real noise_std, std::uint64_t seed);
/// Nodes as fixed linear mixtures of `latents` smooth signals, no sinusoid.
SynthSpec latent_mixture_spec(std::size_t nodes, std::size_t steps, std::size_t latents, Real noise_std,
                              std::uint64_t seed);

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

void save_manifest(const std::vector<MiragePair>& manifest, const std::filesystem::path& path);
std::vector<MiragePair> load_manifest(const std::filesystem::path& path);

} // namespace stdmae
