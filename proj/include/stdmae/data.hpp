#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stdmae/tensor.hpp"

namespace stdmae {

/// Half-open range of time steps.
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - begin; }
    bool contains(std::size_t t) const noexcept { return t >= begin && t < end; }
    bool operator==(const IndexRange&) const = default;
};

struct SplitRatios {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

enum class SplitName { train, val, test };

struct SplitRanges {
    IndexRange train, val, test;
    const IndexRange& operator[](SplitName s) const;
};

std::string to_string(SplitName s);
SplitName parse_split_name(const std::string& s);

/// Boundaries floor(T * cumulative ratio); the three ranges partition [0, T).
SplitRanges split(std::size_t steps, const SplitRatios& ratios);

/// Per-channel z-score statistics.
struct NormStats {
    std::vector<Real> mean;
    std::vector<Real> std;
};

/// Immutable T x N x C series with its split layout and (optional) the
/// statistics it was normalized with.
class SeriesDataset {
public:
    SeriesDataset() = default;
    SeriesDataset(std::size_t steps, std::size_t nodes, std::size_t channels, std::vector<Real> data,
                  SplitRatios ratios = {}, int interval_minutes = 5);

    std::size_t steps() const noexcept { return steps_; }
    std::size_t nodes() const noexcept { return nodes_; }
    std::size_t channels() const noexcept { return channels_; }
    int interval_minutes() const noexcept { return interval_minutes_; }
    const SplitRatios& ratios() const noexcept { return ratios_; }
    SplitRanges splits() const { return split(steps_, ratios_); }

    std::span<const Real> data() const noexcept { return data_; }
    Real at(std::size_t t, std::size_t n, std::size_t c = 0) const {
        return data_[(t * nodes_ + n) * channels_ + c];
    }

    /// Rows [begin, begin + length) as a [length, N, C] tensor.
    Tensor window(std::size_t begin, std::size_t length) const;

    const std::optional<NormStats>& norm() const noexcept { return norm_; }
    bool normalized() const noexcept { return norm_.has_value(); }

    SeriesDataset with_data(std::vector<Real> data, std::optional<NormStats> norm) const;
    SeriesDataset with_ratios(SplitRatios ratios) const;

    /// FNV-1a over shape and raw value bytes; stable across runs.
    std::uint64_t content_hash() const;

private:
    std::size_t steps_ = 0, nodes_ = 0, channels_ = 0;
    std::vector<Real> data_;
    SplitRatios ratios_;
    int interval_minutes_ = 5;
    std::optional<NormStats> norm_;
};

enum class DataFormat { csv, binary };
enum class NanPolicy { reject, forward_fill };

/// Declared on-disk layout. For CSV each row is one step with N * C
/// comma-separated values (channel fastest).
struct LayoutDescriptor {
    DataFormat format = DataFormat::binary;
    std::size_t steps = 0;
    std::size_t nodes = 0;
    std::size_t channels = 1;
    NanPolicy nan_policy = NanPolicy::reject;
    SplitRatios ratios;
};

/// Throws DataError on unreadable files, malformed content, shape mismatch
/// against the declaration, or (under NanPolicy::reject) non-finite values.
SeriesDataset load_dataset(const std::filesystem::path& path, const LayoutDescriptor& layout);

/// Reads the binary header only: {steps, nodes, channels}.
LayoutDescriptor read_binary_layout(const std::filesystem::path& path);

void save_csv(const SeriesDataset& ds, const std::filesystem::path& path);
void save_binary(const SeriesDataset& ds, const std::filesystem::path& path);

/// Fits per-channel mean / population std on the training split and
/// normalizes the whole series. Throws DataError if a training std is zero.
SeriesDataset fit_and_apply_zscore(const SeriesDataset& ds);
NormStats fit_zscore(const SeriesDataset& ds);
SeriesDataset apply_zscore(const SeriesDataset& ds, const NormStats& stats);
/// Inverse transform of a normalized dataset back to raw units.
SeriesDataset invert_zscore(const SeriesDataset& ds);
/// Maps normalized values with channel-fastest layout back to raw units.
std::vector<Real> denormalize(std::span<const Real> values, const NormStats& stats);

struct WindowSpec {
    std::size_t input_len = 12;   // T
    std::size_t horizon = 12;     // T-hat
    std::size_t long_len = 864;   // T_long
};

/// One forecasting position: `anchor` is the last observed step t.
struct ForecastSample {
    std::size_t anchor = 0;

    std::size_t short_begin(const WindowSpec& w) const { return anchor + 1 - w.input_len; }
    std::size_t long_begin(const WindowSpec& w) const { return anchor + 1 - w.long_len; }
    std::size_t target_begin() const { return anchor + 1; }

    Tensor short_input(const SeriesDataset& ds, const WindowSpec& w) const;
    Tensor long_input(const SeriesDataset& ds, const WindowSpec& w) const;
    Tensor target(const SeriesDataset& ds, const WindowSpec& w) const;
};

struct SampleSet {
    std::vector<ForecastSample> samples;
    std::optional<std::string> warning;
};

/// All anchors whose targets lie inside `targets` and whose long lookback
/// starts at or after step 0, in time order. Lookbacks may reach into
/// earlier splits. Too-short ranges give an empty set with a warning.
SampleSet iterate_samples(const SeriesDataset& ds, const WindowSpec& w, IndexRange targets);

/// Start offsets of long windows (length `long_len`) that end inside
/// `range` and start at or after step 0, oldest first, every `stride` steps.
std::vector<std::size_t> long_window_starts(std::size_t long_len, IndexRange range,
                                            std::size_t stride);

} // namespace stdmae
