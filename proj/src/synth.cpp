#include "stdmae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace stdmae {

namespace {

using Rng = std::mt19937_64;

// Independent generator streams per purpose so that e.g. changing the noise
// level does not reshuffle the planted pairs.
Rng stream(std::uint64_t seed, std::uint64_t purpose) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(purpose)};
    return Rng(seq);
}

enum : std::uint64_t { kNodes = 1, kLatents = 2, kMix = 3, kNoise = 4, kMirage = 5 };

void fill_node_defaults(SynthSpec& s) {
    Rng rng = stream(s.seed, kNodes);
    std::uniform_real_distribution<Real> amp(0.5, 2.0);
    std::uniform_real_distribution<Real> phase(0.0, 2.0 * std::numbers::pi);
    if (s.node_amplitudes.empty()) {
        s.node_amplitudes.resize(s.n_nodes);
        for (auto& a : s.node_amplitudes) a = amp(rng);
    }
    if (s.node_phases.empty()) {
        s.node_phases.resize(s.n_nodes);
        for (auto& p : s.node_phases) p = phase(rng);
    }
    if (s.latent_mix.empty() && s.n_latents > 0) {
        Rng mrng = stream(s.seed, kMix);
        std::normal_distribution<Real> w(0.0, 1.0);
        s.latent_mix.resize(s.n_nodes * s.n_latents);
        for (auto& m : s.latent_mix) m = w(mrng);
    }
}

std::vector<Real> smooth_latent(std::size_t steps, std::size_t period, Rng& rng) {
    std::uniform_real_distribution<Real> per(static_cast<Real>(period) / 4.0, static_cast<Real>(period) * 3.0);
    std::uniform_real_distribution<Real> ph(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<Real> amp(0.5, 1.5);
    std::vector<Real> z(steps, 0.0);
    for (int m = 0; m < 3; ++m) {
        const Real p = per(rng), phase = ph(rng), a = amp(rng);
        for (std::size_t t = 0; t < steps; ++t)
            z[t] += a * std::sin(2.0 * std::numbers::pi * static_cast<Real>(t) / p + phase);
    }
    Real mu = 0, var = 0;
    for (Real v : z) mu += v;
    mu /= static_cast<Real>(steps);
    for (Real v : z) var += (v - mu) * (v - mu);
    const Real sd = std::sqrt(var / static_cast<Real>(steps));
    for (Real& v : z) v = sd > 0 ? (v - mu) / sd : 0.0;
    return z;
}

} // namespace

void SynthSpec::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synth spec: " + m); };
    if (n_nodes == 0 || n_steps == 0) fail("n_nodes and n_steps must be positive");
    if (daily_period == 0) fail("daily_period must be positive");
    if (!node_amplitudes.empty() && node_amplitudes.size() != n_nodes) fail("node_amplitudes needs n_nodes entries");
    if (!node_phases.empty() && node_phases.size() != n_nodes) fail("node_phases needs n_nodes entries");
    if (!latent_mix.empty() && latent_mix.size() != n_nodes * n_latents)
        fail("latent_mix needs n_nodes * n_latents entries");
    if (!(noise_std >= 0)) fail("noise_std must be nonnegative");
    if (!(mirage_fraction >= 0 && mirage_fraction <= 0.5))
        fail("mirage_fraction must lie in [0, 0.5] (each pair uses two disjoint windows)");
    if (short_len == 0 || horizon == 0 || lookback < short_len) fail("window geometry needs 0 < short_len <= lookback");
}

SynthResult synth_generate(const SynthSpec& input) {
    input.validate();
    SynthSpec s = input;
    fill_node_defaults(s);

    const std::size_t T = s.n_steps, N = s.n_nodes;
    std::vector<Real> x(T * N, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t t = 0; t < T; ++t)
            x[t * N + n] = s.node_amplitudes[n] *
                           std::sin(2.0 * std::numbers::pi * static_cast<Real>(t) /
                                        static_cast<Real>(s.daily_period) +
                                    s.node_phases[n]);
    if (s.n_latents > 0) {
        Rng lrng = stream(s.seed, kLatents);
        for (std::size_t k = 0; k < s.n_latents; ++k) {
            const auto z = smooth_latent(T, s.daily_period, lrng);
            for (std::size_t n = 0; n < N; ++n) {
                const Real w = s.latent_mix[n * s.n_latents + k];
                for (std::size_t t = 0; t < T; ++t) x[t * N + n] += w * z[t];
            }
        }
    }
    if (s.noise_std > 0) {
        Rng nrng = stream(s.seed, kNoise);
        std::normal_distribution<Real> noise(0.0, s.noise_std);
        for (auto& v : x) v += noise(nrng);
    }

    SynthResult result;
    const std::size_t first = s.lookback - s.short_len;
    const std::size_t slot = s.short_len + s.horizon;
    result.candidate_windows = T > first ? (T - first) / slot : 0;
    const auto pairs = static_cast<std::size_t>(
        std::floor(s.mirage_fraction * static_cast<Real>(result.candidate_windows) + 1e-9));
    if (pairs > 0) {
        std::vector<std::size_t> slots(result.candidate_windows);
        for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = first + i * slot;
        Rng mrng = stream(s.seed, kMirage);
        // partial Fisher-Yates over the first 2 * pairs positions
        for (std::size_t i = 0; i < 2 * pairs; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, slots.size() - 1);
            std::swap(slots[i], slots[pick(mrng)]);
        }
        for (std::size_t p = 0; p < pairs; ++p) {
            const std::size_t a = std::min(slots[2 * p], slots[2 * p + 1]);
            const std::size_t b = std::max(slots[2 * p], slots[2 * p + 1]);
            for (std::size_t j = 0; j < s.short_len; ++j)
                for (std::size_t n = 0; n < N; ++n) {
                    const Real avg = 0.5 * (x[(a + j) * N + n] + x[(b + j) * N + n]);
                    x[(a + j) * N + n] = avg;
                    x[(b + j) * N + n] = avg;
                }
            result.manifest.push_back({a, b, s.short_len});
        }
        std::sort(result.manifest.begin(), result.manifest.end(),
                  [](const MiragePair& l, const MiragePair& r) { return l.window_start_a < r.window_start_a; });
    }

    for (auto& v : x) v = static_cast<Real>(static_cast<float>(v));
    result.dataset = SeriesDataset(T, N, 1, std::move(x));
    return result;
}

SynthSpec sinusoid_spec(std::size_t nodes, std::size_t steps, Real noise_std, std::uint64_t seed) {
    SynthSpec s;
    s.n_nodes = nodes;
    s.n_steps = steps;
    s.noise_std = noise_std;
    s.seed = seed;
    fill_node_defaults(s);
    return s;
}

SynthSpec latent_mixture_spec(std::size_t nodes, std::size_t steps, std::size_t latents, Real noise_std,
                              std::uint64_t seed) {
    SynthSpec s;
    s.n_nodes = nodes;
    s.n_steps = steps;
    s.noise_std = noise_std;
    s.seed = seed;
    s.node_amplitudes.assign(nodes, 0.0);
    s.node_phases.assign(nodes, 0.0);
    s.n_latents = latents;
    fill_node_defaults(s);
    return s;
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
    j = nlohmann::json{{"n_nodes", s.n_nodes},
                       {"n_steps", s.n_steps},
                       {"daily_period", s.daily_period},
                       {"node_amplitudes", s.node_amplitudes},
                       {"node_phases", s.node_phases},
                       {"n_latents", s.n_latents},
                       {"latent_mix", s.latent_mix},
                       {"noise_std", s.noise_std},
                       {"mirage_fraction", s.mirage_fraction},
                       {"seed", s.seed},
                       {"short_len", s.short_len},
                       {"horizon", s.horizon},
                       {"lookback", s.lookback}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
    SynthSpec d;
    s.n_nodes = j.value("n_nodes", d.n_nodes);
    s.n_steps = j.value("n_steps", d.n_steps);
    s.daily_period = j.value("daily_period", d.daily_period);
    s.node_amplitudes = j.value("node_amplitudes", std::vector<Real>{});
    s.node_phases = j.value("node_phases", std::vector<Real>{});
    s.n_latents = j.value("n_latents", d.n_latents);
    s.latent_mix = j.value("latent_mix", std::vector<Real>{});
    s.noise_std = j.value("noise_std", d.noise_std);
    s.mirage_fraction = j.value("mirage_fraction", d.mirage_fraction);
    s.seed = j.value("seed", d.seed);
    s.short_len = j.value("short_len", d.short_len);
    s.horizon = j.value("horizon", d.horizon);
    s.lookback = j.value("lookback", d.lookback);
}

void save_manifest(const std::vector<MiragePair>& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "window_start_a,window_start_b,divergence_step\n";
    for (const auto& p : manifest)
        out << p.window_start_a << ',' << p.window_start_b << ',' << p.divergence_step << '\n';
}

std::vector<MiragePair> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);  // header
    std::vector<MiragePair> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        MiragePair p;
        char c1 = 0, c2 = 0;
        if (!(row >> p.window_start_a >> c1 >> p.window_start_b >> c2 >> p.divergence_step) || c1 != ',' ||
            c2 != ',')
            throw DataError(path.string() + ": malformed manifest row '" + line + "'");
        out.push_back(p);
    }
    return out;
}

} // namespace stdmae
