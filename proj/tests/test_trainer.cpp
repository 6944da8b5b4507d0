// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "veggie/errors.hpp"
#include "veggie/trainer.hpp"

using namespace veggie;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "veggie_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ConditionerConfig tiny_cond_config() {
    ConditionerConfig c;
    c.d_model = 16;
    c.d_cond = 8;
    c.layers = 1;
    c.heads = 2;
    c.m = 2;
    c.patch = 8;
    c.max_text_len = 16;
    c.max_patches = 4;
    c.ffn_mult = 2;
    return c;
}

UNetConfig tiny_unet_config() {
    UNetConfig c;
    c.c_latent = 3;
    c.base_width = 8;
    c.channel_multipliers = {1, 2};
    c.attn_levels = {1};
    c.d_cond = 8;
    c.norm_groups = 4;
    return c;
}

VideoClip smooth_clip(Rng& rng, int n, int H, int W) {
    Tensor f({n, H, W, 3});
    const double a = rng.uniform(), b = rng.uniform();
    for (int t = 0; t < n; ++t)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c)
                    f.at({t, y, x, c}) =
                        0.5 + 0.4 * std::sin(a + 0.5 * x + 0.3 * y + 0.7 * c + b * t);
    for (std::int64_t i = 0; i < f.numel(); ++i) f[i] = std::clamp(f[i], 0.0, 1.0);
    return VideoClip(std::move(f), 8.0);
}

InstructionSample toy_sample(Rng& rng, int n, int H, int W) {
    InstructionSample s;
    s.source = smooth_clip(rng, n, H, W);
    VideoClip tgt = s.source;
    for (std::int64_t i = 0; i < tgt.frames().numel(); i += 3)
        tgt.frames()[i + 1] = std::min(1.0, tgt.frames()[i + 1] + 0.2);
    s.target = std::move(tgt);
    s.instruction = "tint the scene green";
    s.skill = Skill::visual_feature;
    return s;
}

/// Writes a tiny manifest + media tree; returns (manifest, base dir).
std::pair<DatasetManifest, std::string> toy_dataset(const fs::path& base, int records) {
    DatasetManifest man;
    Rng rng(7777);
    for (int i = 0; i < records; ++i) {
        InstructionSample s = toy_sample(rng, 2, 8, 8);
        ManifestRecord rec;
        rec.id = "toy" + std::to_string(i);
        rec.skill = s.skill;
        rec.instruction = s.instruction;
        rec.source_dir = rec.id + "/src";
        rec.target_dir = rec.id + "/tgt";
        rec.provenance = "unit-test";
        save_clip(s.source, (base / rec.source_dir).string());
        save_clip(*s.target, (base / *rec.target_dir).string());
        man.records.push_back(std::move(rec));
    }
    man.save((base / "manifest.json").string());
    return {man, base.string()};
}

}  // namespace

TEST_CASE("linear schedule satisfies the DDPM invariants") {
    NoiseSchedule s = NoiseSchedule::linear();
    CHECK(s.T_max == 1000);
    CHECK(s.beta(1) == doctest::Approx(1e-4));
    CHECK(s.beta(1000) == doctest::Approx(0.02));
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        CHECK(s.beta(t) > 0.0);
        CHECK(s.beta(t) < 1.0);
        if (t > 1) CHECK(s.beta(t) > s.beta(t - 1));
        prod *= 1.0 - s.beta(t);
        CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
        CHECK(s.alpha_bar(t) > 0.0);
        CHECK(s.alpha_bar(t) <= 1.0);
        if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
}

TEST_CASE("add_noise matches the closed form at t=1") {
    NoiseSchedule s = NoiseSchedule::linear();
    Rng rng(60);
    Tensor z0 = rng.normal_tensor({2, 3, 4});
    Tensor eps = rng.normal_tensor({2, 3, 4});
    Tensor zt = s.add_noise(z0, 1, eps);
    const double a = std::sqrt(0.9999), b = std::sqrt(1e-4);
    for (std::int64_t i = 0; i < z0.numel(); ++i)
        CHECK(zt[i] == doctest::Approx(a * z0[i] + b * eps[i]).epsilon(1e-14));

    Tensor quiet = s.add_noise(z0, 500, Tensor({2, 3, 4}));
    const double a5 = std::sqrt(s.alpha_bar(500));
    for (std::int64_t i = 0; i < z0.numel(); ++i)
        CHECK(quiet[i] == doctest::Approx(a5 * z0[i]));

    CHECK_THROWS_AS(s.add_noise(z0, 0, eps), TimestepError);
    CHECK_THROWS_AS(s.add_noise(z0, 1001, eps), TimestepError);
    CHECK_THROWS_AS(s.add_noise(z0, 5, Tensor({2, 3})), ShapeError);
}

TEST_CASE("forward marginals match (sqrt(abar) z0, 1-abar) within 3 sigma") {
    NoiseSchedule s = NoiseSchedule::linear();
    const int t = 500, N = 10000;
    const double z0 = 0.7;
    Rng rng(61);
    double sum = 0, sumsq = 0;
    for (int i = 0; i < N; ++i) {
        Tensor z({1}, {z0});
        Tensor e({1}, {rng.normal()});
        const double zt = s.add_noise(z, t, e)[0];
        sum += zt;
        sumsq += zt * zt;
    }
    const double mean = sum / N;
    const double var = sumsq / N - mean * mean;
    const double abar = s.alpha_bar(t);
    const double sd_mean = std::sqrt((1.0 - abar) / N);
    CHECK(std::fabs(mean - std::sqrt(abar) * z0) < 3.0 * sd_mean);
    const double sd_var = std::sqrt(2.0 / N) * (1.0 - abar);
    CHECK(std::fabs(var - (1.0 - abar)) < 3.0 * sd_var);
}

TEST_CASE("condition dropout draws are mutually exclusive with the right rates") {
    CondDropout p;  // (0.05, 0.05, 0.05)
    Rng rng(62);
    const int N = 100000;
    int text = 0, video = 0, both = 0, none = 0;
    for (int i = 0; i < N; ++i) {
        switch (draw_cond_drop(p, rng)) {
            case CondDrop::text: ++text; break;
            case CondDrop::video: ++video; break;
            case CondDrop::both: ++both; break;
            case CondDrop::none: ++none; break;
        }
    }
    CHECK(text + video + both + none == N);
    // text condition is nulled on text-only and both draws: 0.10 +- 0.01
    const double null_text = static_cast<double>(text + both) / N;
    CHECK(std::fabs(null_text - 0.10) < 0.01);
    const double null_video = static_cast<double>(video + both) / N;
    CHECK(std::fabs(null_video - 0.10) < 0.01);
    CHECK(std::fabs(static_cast<double>(none) / N - 0.85) < 0.01);

    CondDropout bad;
    bad.p_text = 0.6;
    bad.p_video = 0.3;
    bad.p_both = 0.2;
    CHECK_THROWS_AS(draw_cond_drop(bad, rng), ConfigError);
}

TEST_CASE("loss vanishes under the exact-noise oracle") {
    Rng rng(63);
    Conditioner cond(tiny_cond_config(), rng);
    IdentityCodec codec;
    NoiseSchedule sched = NoiseSchedule::linear();
    Rng dr(64);
    std::vector<InstructionSample> batch{toy_sample(dr, 1, 8, 8)};
    const Tensor z0 = codec.encode(*batch[0].target);

    DenoiseFn oracle = [&](const nn::Var& z, int t, const nn::Var&, const nn::Var&) {
        const double abar = sched.alpha_bar(t);
        Tensor eps(z->value.shape());
        for (std::int64_t i = 0; i < eps.numel(); ++i)
            eps[i] = (z->value[i] - std::sqrt(abar) * z0[i]) / std::sqrt(1.0 - abar);
        return nn::constant(std::move(eps));
    };
    Rng lr(65);
    for (int rep = 0; rep < 5; ++rep) {
        double l = diffusion_loss_graph(oracle, cond, codec, sched, batch, {}, lr)->value[0];
        CHECK(l >= 0.0);
        CHECK(l < 1e-18);
    }
}

TEST_CASE("loss under the zero predictor averages to one") {
    Rng rng(66);
    Conditioner cond(tiny_cond_config(), rng);
    IdentityCodec codec;
    NoiseSchedule sched = NoiseSchedule::linear();
    Rng dr(67);
    std::vector<InstructionSample> batch{toy_sample(dr, 1, 4, 4)};

    DenoiseFn zero = [](const nn::Var& z, int, const nn::Var&, const nn::Var&) {
        return nn::constant(Tensor(z->value.shape()));
    };
    Rng lr(68);
    double avg = 0;
    const int K = 200;
    CondDropout drop_all{0.0, 0.0, 1.0};  // conditioning is irrelevant to the zero stub
    for (int i = 0; i < K; ++i)
        avg += diffusion_loss_graph(zero, cond, codec, sched, batch, drop_all, lr)->value[0] / K;
    // loss per draw is a mean of 48 squared unit normals
    const double sd = std::sqrt(2.0 / (48.0 * K));
    CHECK(std::fabs(avg - 1.0) < 4.0 * sd);
}

TEST_CASE("samples without targets are rejected") {
    Rng rng(69);
    Conditioner cond(tiny_cond_config(), rng);
    Rng ur(70);
    DenoiserModel model(tiny_unet_config(), ur);
    IdentityCodec codec;
    NoiseSchedule sched = NoiseSchedule::linear();
    Rng dr(71);
    InstructionSample s = toy_sample(dr, 1, 8, 8);
    s.target.reset();
    Rng lr(72);
    CHECK_THROWS_AS(diffusion_loss(model, cond, codec, sched, {s}, {}, lr), MissingTarget);
}

TEST_CASE("one loss backward reaches queries, alignment, and unet weights") {
    Rng rng(73);
    Conditioner cond(tiny_cond_config(), rng);
    Rng ur(74);
    DenoiserModel model(tiny_unet_config(), ur);
    IdentityCodec codec;
    NoiseSchedule sched = NoiseSchedule::linear();
    Rng dr(75);
    std::vector<InstructionSample> batch{toy_sample(dr, 1, 8, 8)};

    cond.params().zero_grads();
    model.params().zero_grads();
    CondDropout nodrop{0.0, 0.0, 0.0};
    Rng lr(76);
    nn::Var loss = diffusion_loss_graph(model, cond, codec, sched, batch, nodrop, lr);
    nn::backward(loss);

    auto grad_norm = [](const nn::Var& v) {
        double s = 0;
        for (std::int64_t i = 0; i < v->grad.numel(); ++i) s += v->grad[i] * v->grad[i];
        return std::sqrt(s);
    };
    CHECK(grad_norm(cond.params().find("queries/emb")) > 0.0);
    CHECK(grad_norm(cond.params().find("align/w")) > 0.0);
    CHECK(grad_norm(cond.params().find("encoder/tok_emb")) > 0.0);
    CHECK(grad_norm(model.params().find("unet/conv_in/w")) > 0.0);
}

TEST_CASE("loss gradient w.r.t. the null tokens matches finite differences") {
    Rng rng(77);
    Conditioner cond(tiny_cond_config(), rng);
    Rng ur(78);
    UNetConfig uc = tiny_unet_config();
    uc.base_width = 4;
    uc.norm_groups = 2;
    DenoiserModel model(uc, ur);
    IdentityCodec codec;
    NoiseSchedule sched = NoiseSchedule::linear();
    Rng dr(79);
    std::vector<InstructionSample> batch{toy_sample(dr, 1, 8, 8)};

    CondDropout always_null{1.0, 0.0, 0.0};  // loss sees only the null tokens
    const Rng base(80);
    auto build = [&] {
        cond.params().zero_grads();
        model.params().zero_grads();
        Rng lr = base;
        return diffusion_loss_graph(model, cond, codec, sched, batch, always_null, lr);
    };
    std::vector<nn::Var> leaves{cond.params().find("queries/null")};
    Rng cr(81);
    CHECK(testutil::gradcheck(build, leaves, cr, 6, 1e-5) < 1e-3);
}

TEST_CASE("run_stage trains, freezes, checkpoints, and gates stage 2") {
    auto base = tmpdir("trainer_stage");
    auto [man, basedir] = toy_dataset(base, 3);

    Rng cr(82), urr(83);
    TrainState state{Conditioner(tiny_cond_config(), cr),
                     DenoiserModel(tiny_unet_config(), urr), 0};
    IdentityCodec codec;
    NoiseSchedule sched = NoiseSchedule::linear();

    StagePlan s2early = StagePlan::defaults(2);
    CHECK(s2early.lr == doctest::Approx(5e-4));
    CHECK_THROWS_AS(
        run_stage(s2early, man, basedir, state, codec, sched, 1, (base / "out").string()),
        MissingPrerequisite);

    StagePlan s1 = StagePlan::defaults(1);
    CHECK(s1.lr == doctest::Approx(1e-4));
    s1.steps = 4;
    s1.batch = 1;
    s1.checkpoint_every = 2;
    auto frozen_before = state.conditioner.params().snapshot();

    TrainReport r1 = run_stage(s1, man, basedir, state, codec, sched, 1, (base / "out").string());
    CHECK(r1.losses.size() == 4);
    for (double l : r1.losses) {
        CHECK(std::isfinite(l));
        CHECK(l >= 0.0);
    }
    CHECK(state.completed_stage == 1);
    CHECK(fs::exists(base / "out/stage1_step2.ckpt"));
    CHECK(fs::exists(base / "out/stage1_final.ckpt"));
    CHECK(fs::exists(base / "out/stage1_loss.csv"));
    {
        std::ifstream csv(base / "out/stage1_loss.csv");
        std::string line;
        int lines = 0;
        while (std::getline(csv, line)) ++lines;
        CHECK(lines == 5);  // header + 4 steps
    }
    // encoder backbone frozen bit-exactly; queries/alignment moved
    auto after = state.conditioner.params().snapshot();
    for (const auto& [k, v] : frozen_before)
        if (k.rfind("encoder/", 0) == 0) {
            bool same = true;
            for (std::int64_t i = 0; i < v.numel(); ++i) same = same && v[i] == after.at(k)[i];
            CHECK_MESSAGE(same, "frozen param moved: ", k);
        }
    bool queries_moved = false;
    const Tensor& qb = frozen_before.at("queries/emb");
    for (std::int64_t i = 0; i < qb.numel(); ++i)
        queries_moved = queries_moved || qb[i] != after.at("queries/emb")[i];
    CHECK(queries_moved);

    StagePlan s2 = StagePlan::defaults(2);
    s2.steps = 2;
    s2.batch = 1;
    s2.frames_per_sample = 2;
    s2.checkpoint_every = 0;
    TrainReport r2 = run_stage(s2, man, basedir, state, codec, sched, 2, (base / "out").string());
    CHECK(r2.losses.size() == 2);
    CHECK(state.denoiser.mode() == DenoiserMode::video3d);
    CHECK(state.conditioner.has_lora());
    CHECK(state.completed_stage == 2);
    CHECK(fs::exists(base / "out/stage2_final.ckpt"));
}

TEST_CASE("train state survives a save/load round trip") {
    auto base = tmpdir("trainer_ckpt");
    Rng cr(84), urr(85);
    TrainState state{Conditioner(tiny_cond_config(), cr),
                     DenoiserModel(tiny_unet_config(), urr), 1};
    Rng ir(86);
    state.denoiser = state.denoiser.inflated(ir);
    state.conditioner.apply_lora(LoraConfig{4, 8.0, 0.0}, ir);
    state.completed_stage = 2;

    const std::string path = (base / "state.ckpt").string();
    save_train_state(state, path, {{"note", "round-trip"}});
    TrainState back = load_train_state(path);
    CHECK(back.completed_stage == 2);
    CHECK(back.denoiser.mode() == DenoiserMode::video3d);
    CHECK(back.conditioner.has_lora());

    Rng dr(87);
    InstructionSample s = toy_sample(dr, 2, 8, 8);
    Tensor a = state.conditioner.encode(s.source, s.instruction).tokens;
    Tensor b = back.conditioner.encode(s.source, s.instruction).tokens;
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

    IdentityCodec codec;
    Tensor z = dr.normal_tensor({2, 3, 8, 8});
    Tensor src = codec.encode(s.source);
    Tensor cond = state.conditioner.encode(s.source, s.instruction).tokens;
    Tensor ea = state.denoiser.predict_noise({z, 42}, src, cond);
    Tensor eb = back.denoiser.predict_noise({z, 42}, src, cond);
    for (std::int64_t i = 0; i < ea.numel(); ++i) CHECK(ea[i] == eb[i]);
}
