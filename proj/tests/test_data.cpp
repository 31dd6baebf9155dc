#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "stdmae/data.hpp"
#include "stdmae/synth.hpp"

using namespace stdmae;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / "stdmae_test_data";
    fs::create_directories(dir);
    return dir / name;
}

SeriesDataset ramp(std::size_t steps, std::size_t nodes, SplitRatios r = {}) {
    std::vector<Real> v(steps * nodes);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Real>(i % 17) * 0.5 - 2.0;
    return SeriesDataset(steps, nodes, 1, std::move(v), r);
}

} // namespace

TEST_CASE("split examples") {
    auto s = split(10, {0.6, 0.2, 0.2});
    CHECK(s.train == IndexRange{0, 6});
    CHECK(s.val == IndexRange{6, 8});
    CHECK(s.test == IndexRange{8, 10});
    s = split(10, {0.7, 0.1, 0.2});
    CHECK(s.train == IndexRange{0, 7});
    CHECK(s.val == IndexRange{7, 8});
    CHECK(s.test == IndexRange{8, 10});
    CHECK(split(16992, {0.6, 0.2, 0.2}).train.size() == 10195);
    CHECK_THROWS(split(10, {-0.1, 0.6, 0.5}));
    CHECK_THROWS(split(10, {0.5, 0.2, 0.2}));
}

TEST_CASE("splits partition the timeline") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> steps(1, 50000);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 200; ++i) {
        double a = u(rng), b = u(rng) * (1 - a);
        const auto T = steps(rng);
        const auto s = split(T, {a, b, 1 - a - b});
        CHECK(s.train.begin == 0);
        CHECK(s.train.end == s.val.begin);
        CHECK(s.val.end == s.test.begin);
        CHECK(s.test.end == T);
    }
}

TEST_CASE("load_dataset: PEMS04-shaped binary") {
    const std::size_t T = 16992, N = 307;
    std::vector<Real> v(T * N);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Real>(i % 1000);
    const auto path = temp_path("pems04.bin");
    save_binary(SeriesDataset(T, N, 1, std::move(v)), path);
    LayoutDescriptor layout{DataFormat::binary, T, N, 1};
    const auto ds = load_dataset(path, layout);
    CHECK(ds.nodes() == 307);
    CHECK(ds.steps() == 16992);
    CHECK(ds.at(T - 1, N - 1) == static_cast<Real>((T * N - 1) % 1000));

    layout.nodes = 306;
    CHECK_THROWS_AS(load_dataset(path, layout), DataError);
}

TEST_CASE("load_dataset: empty and unreadable files") {
    const auto path = temp_path("empty.bin");
    std::ofstream(path).close();
    CHECK_THROWS_AS(load_dataset(path, {DataFormat::binary, 1, 1, 1}), DataError);
    CHECK_THROWS_AS(load_dataset(path, {DataFormat::csv, 1, 1, 1}), DataError);
    CHECK_THROWS_AS(load_dataset(temp_path("missing.csv"), {DataFormat::csv, 1, 1, 1}), DataError);
}

TEST_CASE("load_dataset: toy CSV equals file contents") {
    const auto path = temp_path("toy.csv");
    std::vector<Real> expected;
    {
        std::ofstream out(path);
        out << "# three sensors, ten steps\n";
        for (int t = 0; t < 10; ++t) {
            for (int n = 0; n < 3; ++n) {
                const Real v = t * 10 + n + 0.25;
                expected.push_back(v);
                out << (n ? "," : "") << v;
            }
            out << "\n";
        }
    }
    const auto ds = load_dataset(path, {DataFormat::csv, 10, 3, 1});
    REQUIRE(ds.steps() == 10);
    REQUIRE(ds.nodes() == 3);
    CHECK(std::vector<Real>(ds.data().begin(), ds.data().end()) == expected);
    CHECK_THROWS_AS(load_dataset(path, {DataFormat::csv, 9, 3, 1}), DataError);
    CHECK_THROWS_AS(load_dataset(path, {DataFormat::csv, 10, 4, 1}), DataError);
}

TEST_CASE("NaN handling: reject by default, optional forward fill") {
    const auto path = temp_path("gaps.csv");
    {
        std::ofstream out(path);
        out << ",1\n2,nan\n3,\n4,5\n";
    }
    CHECK_THROWS_AS(load_dataset(path, {DataFormat::csv, 4, 2, 1}), DataError);
    LayoutDescriptor layout{DataFormat::csv, 4, 2, 1, NanPolicy::forward_fill};
    const auto ds = load_dataset(path, layout);
    CHECK(ds.at(0, 0) == 2);  // leading gap takes the first finite value
    CHECK(ds.at(1, 1) == 1);
    CHECK(ds.at(2, 1) == 1);
    CHECK(ds.at(3, 1) == 5);
}

TEST_CASE("z-score examples") {
    SUBCASE("constant series is rejected") {
        SeriesDataset ds(10, 2, 1, std::vector<Real>(20, 3.0));
        CHECK_THROWS_AS(fit_and_apply_zscore(ds), DataError);
    }
    SUBCASE("train values {1,3} become {-1,1}") {
        SeriesDataset ds(2, 1, 1, {1.0, 3.0}, {1.0, 0.0, 0.0});
        const auto z = fit_and_apply_zscore(ds);
        CHECK(z.at(0, 0) == -1.0);
        CHECK(z.at(1, 0) == 1.0);
        CHECK(z.norm()->mean[0] == 2.0);
        CHECK(z.norm()->std[0] == 1.0);
    }
    SUBCASE("statistics come from the training split only") {
        std::vector<Real> v{1, 3, 1, 3, 1, 3, 100, 200, 300, 400};
        SeriesDataset ds(10, 1, 1, v);
        const auto z = fit_and_apply_zscore(ds);
        CHECK(z.norm()->mean[0] == 2.0);
        CHECK(z.norm()->std[0] == 1.0);
    }
    SUBCASE("train split is standardized and the inverse restores raw values") {
        const auto ds = ramp(100, 4);
        const auto z = fit_and_apply_zscore(ds);
        const auto train = z.splits().train;
        Real mu = 0, var = 0;
        const Real count = static_cast<Real>(train.size() * 4);
        for (std::size_t t = train.begin; t < train.end; ++t)
            for (std::size_t n = 0; n < 4; ++n) mu += z.at(t, n);
        mu /= count;
        for (std::size_t t = train.begin; t < train.end; ++t)
            for (std::size_t n = 0; n < 4; ++n) var += (z.at(t, n) - mu) * (z.at(t, n) - mu);
        CHECK(std::abs(mu) < 1e-6);
        CHECK(std::abs(std::sqrt(var / count) - 1.0) < 1e-6);
        const auto back = invert_zscore(z);
        for (std::size_t i = 0; i < ds.data().size(); ++i) CHECK(std::abs(back.data()[i] - ds.data()[i]) < 1e-9);
    }
}

TEST_CASE("iterate_samples examples") {
    WindowSpec w{12, 12, 24};
    auto ds = ramp(36, 2);
    auto set = iterate_samples(ds, w, {0, 36});
    CHECK(set.samples.size() == 1);
    CHECK_FALSE(set.warning.has_value());

    ds = ramp(23, 2);
    set = iterate_samples(ds, w, {0, 23});
    CHECK(set.samples.empty());
    CHECK(set.warning.has_value());

    ds = ramp(900, 1);
    set = iterate_samples(ds, WindowSpec{12, 12, 864}, {0, 900});
    CHECK(set.samples.size() == 25);
}

TEST_CASE("samples never leak targets across split boundaries") {
    const auto ds = ramp(400, 2);
    const WindowSpec w{12, 12, 48};
    const auto splits = ds.splits();
    for (auto name : {SplitName::train, SplitName::val, SplitName::test}) {
        const auto range = splits[name];
        const auto set = iterate_samples(ds, w, range);
        std::size_t prev = 0;
        bool first = true;
        for (const auto& s : set.samples) {
            CHECK(range.contains(s.target_begin()));
            CHECK(range.contains(s.target_begin() + w.horizon - 1));
            CHECK(s.long_begin(w) + w.long_len == s.short_begin(w) + w.input_len);
            if (!first) CHECK(s.anchor > prev);
            prev = s.anchor;
            first = false;
            const auto lng = s.long_input(ds, w);
            const auto sht = s.short_input(ds, w);
            CHECK(lng.shape() == Shape{48, 2, 1});
            CHECK(lng.at(lng.numel() - 1) == sht.at(sht.numel() - 1));
        }
        // anchors t run from max(long_len - 1, begin - 1) to end - horizon - 1
        const std::size_t lo = name == SplitName::train ? w.long_len - 1 : range.begin - 1;
        CHECK(set.samples.size() == range.end - w.horizon - lo);
    }
}

TEST_CASE("long window starts") {
    const auto starts = long_window_starts(24, {0, 36}, 6);
    CHECK(starts == std::vector<std::size_t>{0, 6, 12});
    CHECK(long_window_starts(24, {0, 23}, 1).empty());
    CHECK(long_window_starts(24, {30, 40}, 5) == std::vector<std::size_t>{7, 12});
}

TEST_CASE("synth_generate examples") {
    SUBCASE("all-zero series") {
        SynthSpec s;
        s.n_nodes = 3;
        s.n_steps = 50;
        s.noise_std = 0;
        s.node_amplitudes.assign(3, 0.0);
        s.node_phases.assign(3, 0.0);
        const auto r = synth_generate(s);
        for (Real v : r.dataset.data()) CHECK(v == 0.0);
    }
    SUBCASE("same seed twice") {
        auto s = sinusoid_spec(5, 500, 0.1, 42);
        s.n_latents = 2;
        s.mirage_fraction = 0.0;
        const auto a = synth_generate(s), b = synth_generate(s);
        CHECK(std::vector<Real>(a.dataset.data().begin(), a.dataset.data().end()) ==
              std::vector<Real>(b.dataset.data().begin(), b.dataset.data().end()));
    }
    SUBCASE("planted mirage pairs are verifiable from the manifest") {
        auto s = sinusoid_spec(4, 2880, 0.1, 7);
        s.mirage_fraction = 0.2;
        const auto r = synth_generate(s);
        const auto need = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(r.candidate_windows)));
        CHECK(r.candidate_windows > 0);
        CHECK(r.manifest.size() >= need);
        const auto& ds = r.dataset;
        for (const auto& p : r.manifest) {
            CHECK(p.window_start_a >= s.lookback - s.short_len);
            CHECK(p.divergence_step == s.short_len);
            for (std::size_t j = 0; j < s.short_len; ++j)
                for (std::size_t n = 0; n < 4; ++n)
                    CHECK(ds.at(p.window_start_a + j, n) == ds.at(p.window_start_b + j, n));
            Real diff = 0;
            for (std::size_t j = 0; j < s.horizon; ++j)
                for (std::size_t n = 0; n < 4; ++n)
                    diff += std::abs(ds.at(p.window_start_a + p.divergence_step + j, n) -
                                     ds.at(p.window_start_b + p.divergence_step + j, n));
            CHECK(diff > 0);
        }
    }
    SUBCASE("invalid specs") {
        SynthSpec s;
        s.mirage_fraction = 0.7;
        CHECK_THROWS_AS(synth_generate(s), ConfigError);
        s = SynthSpec{};
        s.n_nodes = 0;
        CHECK_THROWS_AS(synth_generate(s), ConfigError);
    }
}

TEST_CASE("synthetic data round-trips through both on-disk formats bit-exactly") {
    auto s = sinusoid_spec(6, 400, 0.3, 3);
    s.n_latents = 2;
    const auto r = synth_generate(s);
    const auto bin = temp_path("synth.bin"), csv = temp_path("synth.csv");
    save_binary(r.dataset, bin);
    save_csv(r.dataset, csv);
    const auto a = load_dataset(bin, {DataFormat::binary, 400, 6, 1});
    const auto b = load_dataset(csv, {DataFormat::csv, 400, 6, 1});
    const std::vector<Real> orig(r.dataset.data().begin(), r.dataset.data().end());
    CHECK(std::vector<Real>(a.data().begin(), a.data().end()) == orig);
    CHECK(std::vector<Real>(b.data().begin(), b.data().end()) == orig);
    CHECK(a.content_hash() == r.dataset.content_hash());

    const auto mpath = temp_path("manifest.csv");
    std::vector<MiragePair> m{{100, 400, 12}, {220, 700, 12}};
    save_manifest(m, mpath);
    CHECK(load_manifest(mpath) == m);
}
