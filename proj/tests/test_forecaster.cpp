#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "stdmae/container.hpp"
#include "stdmae/errors.hpp"
#include "stdmae/forecaster.hpp"
#include "stdmae/synth.hpp"

using namespace stdmae;
using stdmae::testing::random_tensor;

namespace {

std::vector<Real> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void zero_out(Linear& l) {
    for (auto* t : {&l.weight, &l.bias})
        for (auto& v : t->values_mut()) v = 0;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "stdmae_test_forecaster";
    std::filesystem::create_directories(dir);
    return dir / name;
}

ForecasterConfig small_config(std::size_t hidden = 8) {
    ForecasterConfig c;
    c.hidden = hidden;
    return c;
}

// Tiny frozen encoder over 48-step windows (4 patches of 12).
MaeCheckpoint tiny_checkpoint(Axis axis, std::uint64_t seed) {
    MaeConfig m;
    m.patch = PatchConfig{12, 8, 48, 1};
    m.axis = axis;
    m.heads = 2;
    m.encoder_layers = 1;
    m.decoder_layers = 1;
    m.ffn_mult = 2;
    MaeCheckpoint ck;
    ck.model = MaeModel(m, seed);
    ck.mask_axis = axis == Axis::spatial ? MaskAxis::spatial : MaskAxis::temporal;
    return ck;
}

SeriesDataset small_dataset(std::uint64_t seed = 3) {
    auto spec = sinusoid_spec(4, 700, 0.1, seed);
    spec.daily_period = 48;
    return fit_and_apply_zscore(synth_generate(spec).dataset);
}

ForecastTrainConfig quick_train(std::size_t epochs = 2) {
    ForecastTrainConfig t;
    t.epochs = epochs;
    t.batch_size = 16;
    t.seed = 5;
    return t;
}

} // namespace

TEST_CASE("predictor output shapes") {
    Rng rng(1);
    ForecasterModel m(ForecasterConfig{}, 7);
    NoGradGuard no_grad;
    const auto x = random_tensor({12, 170, 1}, rng, false);
    CHECK(m.predictor_forward(x).shape() == Shape{170, 64});
    const auto xb = random_tensor({3, 12, 170, 1}, rng, false);
    CHECK(m.predictor_forward(xb).shape() == Shape{3, 170, 64});
    CHECK(m.forward(xb, nullptr, nullptr).shape() == Shape{3, 12, 170, 1});
    CHECK_THROWS_AS(m.predictor_forward(random_tensor({11, 170, 1}, rng, false)), ShapeError);
}

TEST_CASE("predictor is equivariant to node permutations") {
    Rng rng(2);
    ForecasterModel m(small_config(), 3);
    NoGradGuard no_grad;
    const std::size_t N = 9;
    const auto x = random_tensor({2, 12, N, 1}, rng, false);
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto a = m.forward(index_select(x, 2, perm), nullptr, nullptr);
    const auto b = index_select(m.forward(x, nullptr, nullptr), 2, perm);
    CHECK(to_vec(a) == to_vec(b));
}

TEST_CASE("zero head predicts the training mean") {
    auto raw = synth_generate(sinusoid_spec(3, 400, 0.1, 2)).dataset;
    const auto ds = fit_and_apply_zscore(raw);
    WindowSpec w{12, 12, 12};
    const auto data = make_forecast_data(ds, w);
    ForecasterModel m(ForecasterConfig{}, 1);
    zero_out(m.head.out);
    REQUIRE(!data.test.samples.empty());
    const auto ev = evaluate_forecaster(m, data, data.test.samples);
    for (Real v : predict(m, data, data.test.samples)) CHECK(v == 0.0);
    for (Real v : ev.predicted_raw) CHECK(v == doctest::Approx(ds.norm()->mean[0]).epsilon(1e-12));
}

TEST_CASE("truncate_representation keeps the last patches node-major") {
    Rng rng(4);
    const auto rep = random_tensor({72, 170, 96}, rng, false);
    const auto one = truncate_representation(rep, 1);
    CHECK(one.shape() == Shape{170, 96});
    const auto v = rep.values();
    for (std::size_t n = 0; n < 170; n += 13)
        for (std::size_t d = 0; d < 96; ++d) CHECK(one.values()[n * 96 + d] == v[(71 * 170 + n) * 96 + d]);

    const auto small = random_tensor({5, 3, 4}, rng, false);
    for (std::size_t T = 1; T <= 5; ++T) {
        const auto t = truncate_representation(small, T);
        REQUIRE(t.shape() == Shape{3, T * 4});
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t k = 0; k < T; ++k)
                for (std::size_t d = 0; d < 4; ++d)
                    CHECK(t.values()[n * T * 4 + k * 4 + d] == small.values()[((5 - T + k) * 3 + n) * 4 + d]);
    }
    CHECK(truncate_representation(rep, 72).shape() == Shape{170, 72 * 96});
    CHECK_THROWS_AS(truncate_representation(rep, 73), ShapeError);
    CHECK_THROWS_AS(truncate_representation(rep, 0), ShapeError);
}

TEST_CASE("projection with a zero map contributes nothing") {
    Rng rng(5);
    Mlp mlp(96, 64, 64, rng);
    zero_out(mlp.out);
    const auto rep = random_tensor({4, 170, 96}, rng, false);
    const auto p = truncate_and_project(rep, 1, mlp);
    CHECK(p.shape() == Shape{170, 64});
    for (Real x : p.values()) CHECK(x == 0.0);
    const auto h = random_tensor({170, 64}, rng, false);
    CHECK(to_vec(augment(h, &p, &p)) == to_vec(h));
}

TEST_CASE("augment adds the projected branches elementwise") {
    Rng rng(6);
    const auto h = random_tensor({2, 5, 3}, rng, false);
    const auto s = random_tensor({2, 5, 3}, rng, false);
    const auto t = random_tensor({2, 5, 3}, rng, false);
    const auto both = augment(h, &s, &t);
    const auto only_s = augment(h, &s, nullptr);
    const auto only_t = augment(h, nullptr, &t);
    for (std::size_t i = 0; i < h.numel(); ++i) {
        const Real a = h.values()[i], b = s.values()[i], c = t.values()[i];
        CHECK(both.values()[i] == doctest::Approx(a + b + c).epsilon(1e-15));
        CHECK(only_s.values()[i] == a + b);
        CHECK(only_t.values()[i] == a + c);
    }
    CHECK(to_vec(augment(h, nullptr, nullptr)) == to_vec(h));
    const auto wrong = random_tensor({2, 5, 4}, rng, false);
    CHECK_THROWS_AS(augment(h, &wrong, nullptr), ShapeError);
}

TEST_CASE("forecaster gradients match finite differences") {
    Rng rng(7);
    ForecasterConfig c;
    c.hidden = 4;
    c.horizon = 2;
    c.input_len = 4;
    c.dilations = {1, 2};
    c.truncate = 2;
    c.rep_width = 3;
    c.use_spatial = true;
    c.use_temporal = true;
    c.aug_init_gain = 1.0;
    ForecasterModel m(c, 11);
    // non-zero biases so every path carries gradient
    for (auto& [name, t] : m.parameters())
        for (auto& v : t.values_mut()) v += std::uniform_real_distribution<Real>(-0.1, 0.1)(rng);
    const auto x = random_tensor({2, 4, 2, 1}, rng, false);
    const auto s = random_tensor({2, 2, 6}, rng, false);
    const auto t = random_tensor({2, 2, 6}, rng, false);
    const auto w = random_tensor({2, 2, 2, 1}, rng, false);
    auto loss = [&] { return sum(mul(m.forward(x, &s, &t), w)); };
    CHECK(stdmae::testing::gradient_relative_error(loss, tensors_of(m.parameters())) < 1e-6);
}

TEST_CASE("metrics examples") {
    const Shape shape{1, 1, 1, 1};
    const std::vector<Real> one{1.0}, two{2.0};
    auto r = evaluate(one, one, shape, 1e-2, {1});
    CHECK(r.overall.mae == 0);
    CHECK(r.overall.rmse == 0);
    REQUIRE(r.overall.mape);
    CHECK(*r.overall.mape == 0);
    r = evaluate(two, one, shape, 1e-2, {1});
    CHECK(r.overall.mae == 1);
    CHECK(r.overall.rmse == 1);
    CHECK(*r.overall.mape == doctest::Approx(100.0));

    // every target below the threshold: MAPE undefined
    const std::vector<Real> tiny{1e-5, -1e-4};
    r = evaluate(std::vector<Real>{1.0, 1.0}, tiny, Shape{2, 1, 1, 1}, 1e-2, {1});
    CHECK(!r.overall.mape);
    CHECK(r.overall.mape_count == 0);
    CHECK(to_json(r)["overall"]["mape"].is_null());

    CHECK_THROWS_AS(evaluate(one, one, shape, 1e-2, {2}), ConfigError);
    CHECK_THROWS_AS(evaluate(one, two, Shape{2, 1, 1, 1}, 1e-2, {1}), ShapeError);
}

TEST_CASE("metrics match a scalar-loop oracle") {
    Rng rng(8);
    std::uniform_real_distribution<Real> u(-3, 3);
    for (int inst = 0; inst < 1000; ++inst) {
        const std::size_t S = 1 + inst % 3, H = 12, N = 1 + inst % 4, C = 1 + inst % 2;
        const std::size_t n = S * H * N * C;
        std::vector<Real> p(n), y(n);
        for (auto& v : p) v = u(rng);
        for (auto& v : y) v = u(rng);
        if (inst % 5 == 0) y[0] = 0.0;
        const auto r = evaluate(p, y, Shape{S, H, N, C}, 0.5);
        double a = 0, q = 0, pc = 0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < n; ++i) {
            a += std::abs(p[i] - y[i]);
            q += (p[i] - y[i]) * (p[i] - y[i]);
            if (std::abs(y[i]) >= 0.5) {
                pc += std::abs(p[i] - y[i]) / std::abs(y[i]);
                ++cnt;
            }
        }
        REQUIRE(std::abs(r.overall.mae - a / n) < 1e-12);
        REQUIRE(std::abs(r.overall.rmse - std::sqrt(q / n)) < 1e-12);
        REQUIRE(r.overall.mape_count == cnt);
        if (cnt) REQUIRE(std::abs(*r.overall.mape - 100 * pc / cnt) < 1e-10);

        // horizon k only sees step k
        REQUIRE(r.horizons.size() == 3);
        for (const auto& [k, m] : r.horizons) {
            double e = 0;
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t j = 0; j < N * C; ++j) {
                    const std::size_t i = (s * H + (k - 1)) * N * C + j;
                    e += std::abs(p[i] - y[i]);
                }
            REQUIRE(std::abs(m.mae - e / (S * N * C)) < 1e-12);
            REQUIRE(m.count == S * N * C);
        }
    }
}

TEST_CASE("raw MAE is normalized MAE times the training std") {
    const auto ds = small_dataset();
    const auto data = make_forecast_data(ds, WindowSpec{12, 12, 12});
    ForecasterModel m(small_config(), 4);
    const auto ev = evaluate_forecaster(m, data, data.val.samples);
    CHECK(std::abs(ev.raw.overall.mae - ev.normalized.overall.mae * ds.norm()->std[0]) < 1e-9);
    for (std::size_t k = 0; k < 3; ++k)
        CHECK(std::abs(ev.raw.horizons[k].second.mae - ev.normalized.horizons[k].second.mae * ds.norm()->std[0]) <
              1e-9);
    CHECK(ev.predicted_raw.size() == data.val.samples.size() * 12 * 4);
}

TEST_CASE("disabled or zeroed branches give the baseline bitwise") {
    Rng rng(9);
    ForecasterConfig base = small_config();
    ForecasterConfig aug = base;
    aug.rep_width = 8;
    aug.truncate = 2;
    aug.use_spatial = true;
    aug.use_temporal = true;
    ForecasterModel b(base, 12), a(aug, 12);
    zero_out(a.project_spatial->out);
    zero_out(a.project_temporal->out);
    NoGradGuard no_grad;
    const auto x = random_tensor({3, 12, 5, 1}, rng, false);
    const auto s = random_tensor({3, 5, 16}, rng, false);
    const auto t = random_tensor({3, 5, 16}, rng, false);
    CHECK(to_vec(a.forward(x, &s, &t)) == to_vec(b.forward(x, nullptr, nullptr)));
    CHECK_THROWS_AS(a.forward(x, nullptr, &t), ShapeError);

    // enabling a branch leaves predictor and head initialization unchanged
    const auto pb = b.parameters();
    const auto pa = a.parameters();
    for (std::size_t i = 0; i < pb.size(); ++i) {
        CHECK(pb[i].first == pa[i].first);
        CHECK(to_vec(pb[i].second) == to_vec(pa[i].second));
    }
}

TEST_CASE("training is deterministic, learns and leaves encoders frozen") {
    const auto ds = small_dataset();
    WindowSpec w{12, 12, 48};
    auto data = make_forecast_data(ds, w);
    const auto ck_s = tiny_checkpoint(Axis::spatial, 1);
    const auto ck_t = tiny_checkpoint(Axis::temporal, 2);
    std::vector<std::vector<Real>> before;
    for (const auto* ck : {&ck_s, &ck_t})
        for (const auto& [n, t] : ck->model.parameters()) before.push_back(to_vec(t));

    const auto anchors = all_anchors(data);
    const auto rs = compute_representations(ds, ck_s, anchors, 1);
    const auto rt = compute_representations(ds, ck_t, anchors, 1);
    CHECK(rs.width == 8);
    CHECK(rs.anchors.size() == anchors.size());
    data.spatial = &rs;
    data.temporal = &rt;

    ForecasterConfig cfg = small_config();
    cfg.rep_width = 8;
    cfg.use_spatial = cfg.use_temporal = true;
    auto tc = quick_train(4);
    tc.patience = 0;
    const auto full = train_forecaster(data, cfg, tc);
    tc.max_steps = 5;
    const auto part = train_forecaster(data, cfg, tc);
    REQUIRE(part.step_losses.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(full.step_losses[i] == part.step_losses[i]);
    CHECK(full.epochs.size() == 4);
    CHECK(full.epochs.back().train_loss < full.epochs.front().train_loss);
    CHECK(full.best_epoch >= 1);

    std::size_t k = 0;
    for (const auto* ck : {&ck_s, &ck_t})
        for (const auto& [n, t] : ck->model.parameters()) CHECK(to_vec(t) == before[k++]);

    // best-epoch parameters are the ones returned, rounded to float32
    const auto best = std::min_element(full.epochs.begin(), full.epochs.end(),
                                       [](auto& x, auto& y) { return x.val_mae < y.val_mae; });
    const auto ev = evaluate_forecaster(full.model, data, data.val.samples);
    CHECK(ev.normalized.overall.mae == doctest::Approx(best->val_mae).epsilon(1e-4));
    for (const auto& [n, t] : full.model.parameters())
        for (Real v : t.values()) CHECK(v == static_cast<Real>(static_cast<float>(v)));

    // round trip through a file
    const auto path = temp_path("f.ckpt");
    save_forecaster(full.model, *ds.norm(), {{"note", "x"}}, path);
    const auto loaded = load_forecaster(path);
    CHECK(loaded.metadata["note"] == "x");
    CHECK(loaded.norm.mean == ds.norm()->mean);
    CHECK(predict(loaded.model, data, data.test.samples) == predict(full.model, data, data.test.samples));
}

TEST_CASE("training rejects bad inputs") {
    const auto ds = small_dataset();
    const auto data = make_forecast_data(ds, WindowSpec{12, 12, 12});
    auto cfg = small_config();
    cfg.dilations = {4, 4, 4};
    CHECK_THROWS_AS(train_forecaster(data, cfg, quick_train()), ConfigError);
    cfg = small_config();
    cfg.use_spatial = true;
    CHECK_THROWS_AS(train_forecaster(data, cfg, quick_train()), ConfigError);
    cfg.rep_width = 8;
    CHECK_THROWS_AS(train_forecaster(data, cfg, quick_train()), DataError);
    auto tc = quick_train();
    tc.lr = 0;
    CHECK_THROWS_AS(train_forecaster(data, small_config(), tc), ConfigError);
    const auto raw = synth_generate(sinusoid_spec(3, 300, 0.1, 1)).dataset;
    CHECK_THROWS_AS(train_forecaster(make_forecast_data(raw, WindowSpec{12, 12, 12}), small_config(), quick_train()),
                    DataError);
}

TEST_CASE("representation cache round trip and key mismatch") {
    const auto ds = small_dataset();
    const auto ck = tiny_checkpoint(Axis::temporal, 3);
    const std::vector<std::size_t> anchors{60, 47, 100, 60};
    const auto reps = compute_representations(ds, ck, anchors, 2);
    CHECK(reps.anchors == std::vector<std::size_t>{47, 60, 100});
    CHECK(reps.width == 16);
    for (Real v : reps.values) CHECK(v == static_cast<Real>(static_cast<float>(v)));

    // a row equals the truncated encoder output of that anchor's long window
    const auto direct = truncate_representation(encode_representation(ds.window(60 + 1 - 48, 48), ck), 2);
    const std::vector<std::size_t> one{60};
    const auto row = reps.gather(one);
    for (std::size_t i = 0; i < direct.numel(); ++i)
        CHECK(row.values()[i] == static_cast<Real>(static_cast<float>(direct.values()[i])));

    const auto path = temp_path("reps.bin");
    save_representations(reps, path, "dh", "ch", 2);
    const auto back = load_representations(path, "dh", "ch", anchors, 2);
    REQUIRE(back);
    CHECK(back->values == reps.values);
    CHECK(to_vec(back->gather(one)) == to_vec(row));
    CHECK(!load_representations(path, "other", "ch", anchors, 2));
    CHECK(!load_representations(path, "dh", "other", anchors, 2));
    CHECK(!load_representations(path, "dh", "ch", {47, 60}, 2));
    CHECK(!load_representations(path, "dh", "ch", anchors, 1));
    CHECK(!load_representations(temp_path("missing.bin"), "dh", "ch", anchors, 2));
    CHECK_THROWS_AS(compute_representations(ds, ck, {46}, 1), DataError);
    const std::vector<std::size_t> absent{48};
    CHECK_THROWS_AS(reps.gather(absent), DataError);
}
