#include "stdmae/data.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stdmae {

namespace {

constexpr std::array<char, 4> kBinaryMagic{'S', 'T', 'S', '1'};

std::size_t floor_boundary(std::size_t steps, double cumulative) {
    // The epsilon absorbs representation error in sums such as 0.6 + 0.2.
    const double x = std::floor(static_cast<double>(steps) * cumulative + 1e-9);
    return std::min(steps, static_cast<std::size_t>(std::max(0.0, x)));
}

void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

void apply_nan_policy(std::vector<Real>& data, std::size_t steps, std::size_t width, NanPolicy policy) {
    if (policy == NanPolicy::reject) {
        for (std::size_t i = 0; i < data.size(); ++i)
            if (!std::isfinite(data[i]))
                throw DataError("non-finite value at step " + std::to_string(i / width) + ", column " +
                                std::to_string(i % width) + " (nan_policy = reject)");
        return;
    }
    // forward fill; leading gaps take the first finite value of the column
    for (std::size_t col = 0; col < width; ++col) {
        std::size_t first = steps;
        for (std::size_t t = 0; t < steps; ++t)
            if (std::isfinite(data[t * width + col])) {
                first = t;
                break;
            }
        if (first == steps) throw DataError("column " + std::to_string(col) + " has no finite value");
        Real last = data[first * width + col];
        for (std::size_t t = 0; t < steps; ++t) {
            Real& v = data[t * width + col];
            if (std::isfinite(v))
                last = v;
            else
                v = last;
        }
    }
}

std::vector<Real> read_csv_values(const std::filesystem::path& path, std::size_t& rows,
                                  std::size_t expected_cols) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<Real> values;
    std::string line;
    rows = 0;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::size_t cols = 0;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            const std::size_t stop = comma == std::string::npos ? line.size() : comma;
            std::size_t b = pos, e = stop;
            while (b < e && line[b] == ' ') ++b;
            while (e > b && line[e - 1] == ' ') --e;
            Real v = std::numeric_limits<Real>::quiet_NaN();
            if (b < e) {
                auto [ptr, ec] = std::from_chars(line.data() + b, line.data() + e, v);
                if (ec != std::errc() || ptr != line.data() + e)
                    throw DataError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" +
                                    line.substr(b, e - b) + "'");
            }
            values.push_back(v);
            ++cols;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cols != expected_cols)
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(expected_cols) + " columns, found " + std::to_string(cols));
        ++rows;
    }
    return values;
}

} // namespace

// ---------------------------------------------------------------------------

const IndexRange& SplitRanges::operator[](SplitName s) const {
    switch (s) {
        case SplitName::train: return train;
        case SplitName::val: return val;
        case SplitName::test: return test;
    }
    return test;
}

std::string to_string(SplitName s) {
    switch (s) {
        case SplitName::train: return "train";
        case SplitName::val: return "val";
        case SplitName::test: return "test";
    }
    return "?";
}

SplitName parse_split_name(const std::string& s) {
    if (s == "train") return SplitName::train;
    if (s == "val" || s == "validation") return SplitName::val;
    if (s == "test") return SplitName::test;
    throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

SplitRanges split(std::size_t steps, const SplitRatios& r) {
    if (r.train < 0 || r.val < 0 || r.test < 0)
        throw std::invalid_argument("split ratios must be nonnegative");
    if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");
    const std::size_t b1 = floor_boundary(steps, r.train);
    const std::size_t b2 = std::max(b1, floor_boundary(steps, r.train + r.val));
    return {{0, b1}, {b1, b2}, {b2, steps}};
}

// ---------------------------------------------------------------------------

SeriesDataset::SeriesDataset(std::size_t steps, std::size_t nodes, std::size_t channels,
                             std::vector<Real> data, SplitRatios ratios, int interval_minutes)
    : steps_(steps),
      nodes_(nodes),
      channels_(channels),
      data_(std::move(data)),
      ratios_(ratios),
      interval_minutes_(interval_minutes) {
    if (steps == 0 || nodes == 0 || channels == 0) throw DataError("dataset extents must be positive");
    if (data_.size() != steps * nodes * channels)
        throw DataError("dataset holds " + std::to_string(data_.size()) + " values, expected " +
                        std::to_string(steps) + " x " + std::to_string(nodes) + " x " +
                        std::to_string(channels));
    if (interval_minutes <= 0) throw DataError("interval_minutes must be positive");
    for (Real v : data_)
        if (!std::isfinite(v)) throw DataError("dataset values must be finite");
    split(steps, ratios);  // validates ratios
}

Tensor SeriesDataset::window(std::size_t begin, std::size_t length) const {
    if (length == 0 || begin + length > steps_)
        throw ShapeError("window [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                         ") outside a series of " + std::to_string(steps_) + " steps");
    const std::size_t row = nodes_ * channels_;
    std::vector<Real> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                        data_.begin() + static_cast<std::ptrdiff_t>((begin + length) * row));
    return Tensor({length, nodes_, channels_}, std::move(v));
}

SeriesDataset SeriesDataset::with_data(std::vector<Real> data, std::optional<NormStats> norm) const {
    SeriesDataset out(steps_, nodes_, channels_, std::move(data), ratios_, interval_minutes_);
    out.norm_ = std::move(norm);
    return out;
}

SeriesDataset SeriesDataset::with_ratios(SplitRatios ratios) const {
    SeriesDataset out = *this;
    split(steps_, ratios);
    out.ratios_ = ratios;
    return out;
}

std::uint64_t SeriesDataset::content_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    const std::uint64_t dims[3] = {steps_, nodes_, channels_};
    feed(dims, sizeof dims);
    feed(data_.data(), data_.size() * sizeof(Real));
    return h;
}

// ---------------------------------------------------------------------------

SeriesDataset load_dataset(const std::filesystem::path& path, const LayoutDescriptor& layout) {
    if (layout.steps == 0 || layout.nodes == 0 || layout.channels == 0)
        throw DataError("layout must declare positive steps, nodes and channels");
    const std::size_t width = layout.nodes * layout.channels;
    std::vector<Real> values;
    if (layout.format == DataFormat::csv) {
        std::size_t rows = 0;
        values = read_csv_values(path, rows, width);
        if (rows == 0) throw DataError(path.string() + " holds no data rows");
        if (rows != layout.steps)
            throw DataError(path.string() + ": declared " + std::to_string(layout.steps) + " steps, found " +
                            std::to_string(rows));
    } else {
        const LayoutDescriptor found = read_binary_layout(path);
        if (found.steps != layout.steps || found.nodes != layout.nodes || found.channels != layout.channels)
            throw DataError(path.string() + ": header declares " + std::to_string(found.steps) + "x" +
                            std::to_string(found.nodes) + "x" + std::to_string(found.channels) +
                            ", layout expects " + std::to_string(layout.steps) + "x" +
                            std::to_string(layout.nodes) + "x" + std::to_string(layout.channels));
        const std::size_t count = layout.steps * width;
        std::ifstream in(path, std::ios::binary);
        in.seekg(16);
        std::vector<unsigned char> raw(count * 4);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size())
            throw DataError(path.string() + ": truncated payload");
        if (in.peek() != std::char_traits<char>::eof())
            throw DataError(path.string() + ": trailing bytes after declared payload");
        values.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            values[i] = static_cast<Real>(std::bit_cast<float>(get_u32(raw.data() + 4 * i)));
    }
    apply_nan_policy(values, layout.steps, width, layout.nan_policy);
    return SeriesDataset(layout.steps, layout.nodes, layout.channels, std::move(values), layout.ratios);
}

LayoutDescriptor read_binary_layout(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    unsigned char header[16];
    in.read(reinterpret_cast<char*>(header), 16);
    if (in.gcount() == 0) throw DataError(path.string() + " is empty");
    if (in.gcount() != 16 || std::memcmp(header, kBinaryMagic.data(), 4) != 0)
        throw DataError(path.string() + ": not a series binary (bad magic or short header)");
    LayoutDescriptor d;
    d.format = DataFormat::binary;
    d.steps = get_u32(header + 4);
    d.nodes = get_u32(header + 8);
    d.channels = get_u32(header + 12);
    return d;
}

void save_csv(const SeriesDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    const std::size_t width = ds.nodes() * ds.channels();
    char buf[64];
    for (std::size_t t = 0; t < ds.steps(); ++t) {
        for (std::size_t j = 0; j < width; ++j) {
            if (j) out << ',';
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, ds.data()[t * width + j]);
            out.write(buf, ptr - buf);
        }
        out << '\n';
    }
    if (!out) throw DataError("failed writing " + path.string());
}

void save_binary(const SeriesDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kBinaryMagic.data(), 4);
    put_u32(out, static_cast<std::uint32_t>(ds.steps()));
    put_u32(out, static_cast<std::uint32_t>(ds.nodes()));
    put_u32(out, static_cast<std::uint32_t>(ds.channels()));
    for (Real v : ds.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!out) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

NormStats fit_zscore(const SeriesDataset& ds) {
    const auto train = ds.splits().train;
    if (train.size() == 0) throw DataError("training split is empty");
    const std::size_t c = ds.channels();
    NormStats s{std::vector<Real>(c, 0.0), std::vector<Real>(c, 0.0)};
    const Real count = static_cast<Real>(train.size() * ds.nodes());
    for (std::size_t t = train.begin; t < train.end; ++t)
        for (std::size_t n = 0; n < ds.nodes(); ++n)
            for (std::size_t k = 0; k < c; ++k) s.mean[k] += ds.at(t, n, k);
    for (auto& m : s.mean) m /= count;
    for (std::size_t t = train.begin; t < train.end; ++t)
        for (std::size_t n = 0; n < ds.nodes(); ++n)
            for (std::size_t k = 0; k < c; ++k) {
                const Real d = ds.at(t, n, k) - s.mean[k];
                s.std[k] += d * d;
            }
    for (std::size_t k = 0; k < c; ++k) {
        s.std[k] = std::sqrt(s.std[k] / count);
        if (!(s.std[k] > 0))
            throw DataError("training split of channel " + std::to_string(k) +
                            " has zero standard deviation; cannot z-score");
    }
    return s;
}

SeriesDataset apply_zscore(const SeriesDataset& ds, const NormStats& stats) {
    const std::size_t c = ds.channels();
    if (stats.mean.size() != c || stats.std.size() != c)
        throw DataError("normalization stats do not match channel count");
    std::vector<Real> out(ds.data().begin(), ds.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - stats.mean[i % c]) / stats.std[i % c];
    return ds.with_data(std::move(out), stats);
}

SeriesDataset fit_and_apply_zscore(const SeriesDataset& ds) { return apply_zscore(ds, fit_zscore(ds)); }

std::vector<Real> denormalize(std::span<const Real> values, const NormStats& stats) {
    const std::size_t c = stats.mean.size();
    std::vector<Real> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * stats.std[i % c] + stats.mean[i % c];
    return out;
}

SeriesDataset invert_zscore(const SeriesDataset& ds) {
    if (!ds.normalized()) throw DataError("dataset is not normalized");
    return ds.with_data(denormalize(ds.data(), *ds.norm()), std::nullopt);
}

// ---------------------------------------------------------------------------

Tensor ForecastSample::short_input(const SeriesDataset& ds, const WindowSpec& w) const {
    return ds.window(short_begin(w), w.input_len);
}
Tensor ForecastSample::long_input(const SeriesDataset& ds, const WindowSpec& w) const {
    return ds.window(long_begin(w), w.long_len);
}
Tensor ForecastSample::target(const SeriesDataset& ds, const WindowSpec& w) const {
    return ds.window(target_begin(), w.horizon);
}

SampleSet iterate_samples(const SeriesDataset& ds, const WindowSpec& w, IndexRange targets) {
    if (w.input_len == 0 || w.horizon == 0 || w.long_len < w.input_len)
        throw std::invalid_argument("window spec needs T >= 1, T_hat >= 1 and T_long >= T");
    if (targets.end > ds.steps() || targets.begin > targets.end)
        throw std::invalid_argument("target range outside the dataset");
    SampleSet out;
    // anchor t: t >= long_len - 1, t + 1 >= targets.begin, t + horizon <= targets.end - 1 + 1
    const std::size_t first = std::max(w.long_len - 1, targets.begin == 0 ? 0 : targets.begin - 1);
    if (targets.end >= w.horizon + 1) {
        const std::size_t last = targets.end - w.horizon - 1;
        for (std::size_t t = first; t <= last; ++t) out.samples.push_back({t});
    }
    if (out.samples.empty())
        out.warning = "range [" + std::to_string(targets.begin) + ", " + std::to_string(targets.end) +
                      ") is too short for T_long=" + std::to_string(w.long_len) +
                      ", horizon=" + std::to_string(w.horizon) + "; no samples";
    return out;
}

std::vector<std::size_t> long_window_starts(std::size_t long_len, IndexRange range, std::size_t stride) {
    if (stride == 0) throw std::invalid_argument("window stride must be positive");
    std::vector<std::size_t> out;
    if (range.end < long_len) return out;
    const std::size_t first_end = std::max(range.begin, long_len - 1);
    for (std::size_t e = first_end; e < range.end; e += stride) out.push_back(e + 1 - long_len);
    return out;
}

} // namespace stdmae
