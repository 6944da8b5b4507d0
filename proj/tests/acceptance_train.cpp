// SPDX-License-Identifier: Apache-2.0
//
// Criteria 6 and 7: toy training efficacy and the multitask direction check.
// Both train real models; expect minutes, not seconds.

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "veggie/metrics.hpp"
#include "veggie/sampler.hpp"
#include "veggie/taskdata.hpp"
#include "veggie/trainer.hpp"

namespace fs = std::filesystem;
using namespace veggie;

namespace {

struct Criterion {
    explicit Criterion(std::string name) : name(std::move(name)) {}
    ~Criterion() {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name.c_str());
        std::fflush(stdout);
    }
    bool ok = true;
    std::string name;
};

#define ACC_CHECK(c, ...)                      \
    do {                                       \
        const bool acc_ok_ = !!(__VA_ARGS__);  \
        (c).ok &= acc_ok_;                     \
        CHECK_MESSAGE(acc_ok_, #__VA_ARGS__);  \
    } while (0)

// desk-scale configs (same as the CLI defaults)
ConditionerConfig small_conditioner() {
    ConditionerConfig c;
    c.d_model = 128;
    c.d_cond = 64;
    c.layers = 2;
    c.heads = 4;
    c.m = 8;
    return c;
}

UNetConfig small_unet() {
    UNetConfig u;
    u.base_width = 32;
    u.channel_multipliers = {1, 2};
    u.attn_levels = {1};
    u.d_cond = 64;
    return u;
}

TrainState fresh_state(std::uint64_t seed) {
    Rng crng(seed, 10), urng(seed, 20);
    return TrainState{Conditioner(small_conditioner(), crng),
                      DenoiserModel(small_unet(), urng), 0};
}

double mean_of(const std::vector<double>& v, size_t begin, size_t count) {
    return std::accumulate(v.begin() + begin, v.begin() + begin + count, 0.0) / count;
}

double mean_jaccard(const TrainState& state, const LatentCodec& codec,
                    const NoiseSchedule& sched, const std::vector<InstructionSample>& held,
                    int steps) {
    double acc = 0;
    for (const auto& s : held) {
        GuidanceConfig g;
        g.g_T = 14.5;
        g.g_V = 1.5;
        g.steps = steps;
        g.seed = 5;
        const EditResult r =
            edit(state, codec, sched, s.source, s.instruction, s.references, s.skill, g);
        acc += jaccard(fill_to_mask(r.video, FillSpec{}), *s.gt_mask);
    }
    return acc / held.size();
}

double mean_ssim(const TrainState& state, const LatentCodec& codec, const NoiseSchedule& sched,
                 const std::vector<InstructionSample>& held, int steps) {
    double acc = 0;
    for (const auto& s : held) {
        GuidanceConfig g;
        g.g_T = 14.5;
        g.g_V = 1.5;
        g.steps = steps;
        g.seed = 5;
        const EditResult r =
            edit(state, codec, sched, s.source, s.instruction, s.references, s.skill, g);
        acc += ssim_masked(r.video, s.source, *s.gt_mask);
    }
    return acc / held.size();
}

double mean_psnr(const TrainState& state, const LatentCodec& codec, const NoiseSchedule& sched,
                 const std::vector<InstructionSample>& held, int steps) {
    double acc = 0;
    int frames = 0;
    for (const auto& s : held) {
        GuidanceConfig g;
        g.g_T = 10.5;
        g.g_V = 2.0;
        g.steps = steps;
        g.seed = 5;
        const EditResult r =
            edit(state, codec, sched, s.source, s.instruction, s.references, s.skill, g);
        const Tensor& got = r.video.frames();
        const Tensor& want = s.target->frames();
        const std::int64_t fsz = got.numel() / r.video.n();
        for (int t = 0; t < r.video.n(); ++t) {
            double mse = 0;
            for (std::int64_t i = 0; i < fsz; ++i) {
                const double d = got[t * fsz + i] - want[t * fsz + i];
                mse += d * d;
            }
            mse /= static_cast<double>(fsz);
            acc += 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
            ++frames;
        }
    }
    return acc / frames;
}

std::vector<InstructionSample> held_out(std::uint64_t seed, Skill skill, int count) {
    Rng rng(seed);
    SceneConfig cfg;
    std::vector<InstructionSample> out;
    for (int i = 0; i < count; ++i) out.push_back(generate_sample(rng, skill, cfg));
    return out;
}

}  // namespace

TEST_CASE("criterion 06: toy training efficacy") {
    Criterion c("criterion 06: toy training efficacy");
    const auto t0 = std::chrono::steady_clock::now();

    const fs::path root = fs::temp_directory_path() / "veggie_acc_train6";
    fs::remove_all(root);
    const std::string data = (root / "data").string();
    const std::string out = (root / "run").string();
    const DatasetManifest man = generate_toy_dataset(
        600, {Skill::grounding, Skill::visual_feature}, 2000, data);

    TrainState state = fresh_state(601);
    const IdentityCodec codec;
    const NoiseSchedule sched = NoiseSchedule::linear(1000);

    StagePlan p1 = StagePlan::defaults(1);
    p1.steps = 2000;
    p1.checkpoint_every = 2000;
    const TrainReport r1 = run_stage(p1, man, data, state, codec, sched, 602, out);

    StagePlan p2 = StagePlan::defaults(2);
    p2.steps = 500;
    p2.batch = 1;
    p2.checkpoint_every = 500;
    const TrainReport r2 = run_stage(p2, man, data, state, codec, sched, 603, out);

    // (a) final/initial 100-step mean loss ratio
    const double initial = mean_of(r1.losses, 0, 100);
    const double final_ = mean_of(r2.losses, r2.losses.size() - 100, 100);
    MESSAGE("loss means: initial ", initial, " final ", final_);
    ACC_CHECK(c, final_ / initial < 0.25);

    // (b) held-out grounding J via fill_to_mask
    const double J = mean_jaccard(state, codec, sched, held_out(699, Skill::grounding, 4), 20);
    MESSAGE("held-out grounding J: ", J);
    ACC_CHECK(c, J >= 80.0);

    // (c) held-out recolor PSNR vs procedural targets
    const double psnr =
        mean_psnr(state, codec, sched, held_out(698, Skill::visual_feature, 4), 20);
    MESSAGE("held-out recolor PSNR (dB): ", psnr);
    ACC_CHECK(c, psnr >= 20.0);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("criterion 6 wall time (s): ", wall);
    ACC_CHECK(c, wall <= 45.0 * 60.0);

    fs::remove_all(root);
}

TEST_CASE("criterion 07: multitask direction on grounding SSIM") {
    Criterion c("criterion 07: multitask direction");
    const fs::path root = fs::temp_directory_path() / "veggie_acc_train7";
    fs::remove_all(root);
    const IdentityCodec codec;
    const NoiseSchedule sched = NoiseSchedule::linear(1000);
    const auto held = held_out(799, Skill::grounding, 2);

    auto train_arm = [&](std::uint64_t seed, const std::vector<Skill>& skills,
                         const std::string& tag) {
        const std::string data = (root / (tag + "_data")).string();
        const std::string out = (root / (tag + "_run")).string();
        const DatasetManifest man = generate_toy_dataset(seed, skills, 300, data);
        TrainState state = fresh_state(seed + 1);
        StagePlan plan = StagePlan::defaults(1);
        plan.steps = 400;
        plan.checkpoint_every = 400;
        run_stage(plan, man, data, state, codec, sched, seed + 2, out);
        return mean_ssim(state, codec, sched, held, 10);
    };

    for (std::uint64_t seed : {700ull, 710ull, 720ull}) {
        const double mixed = train_arm(seed, {Skill::grounding, Skill::removal},
                                       "mixed_" + std::to_string(seed));
        const double grd = train_arm(seed, {Skill::grounding},
                                     "grd_" + std::to_string(seed));
        MESSAGE("seed ", seed, ": mixed SSIM ", mixed, " vs grounding-only ", grd);
        ACC_CHECK(c, mixed >= grd - 1.0);
    }
    fs::remove_all(root);
}
