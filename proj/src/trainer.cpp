// SPDX-License-Identifier: Apache-2.0
#include "veggie/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "veggie/checkpoint.hpp"
#include "veggie/errors.hpp"

namespace veggie {

using nn::Var;

CondDrop draw_cond_drop(const CondDropout& p, Rng& rng) {
    if (p.p_text < 0 || p.p_video < 0 || p.p_both < 0 ||
        p.p_text + p.p_video + p.p_both > 1.0)
        throw ConfigError("dropout probabilities must be nonnegative and sum to <= 1");
    const double u = rng.uniform();
    if (u < p.p_text) return CondDrop::text;
    if (u < p.p_text + p.p_video) return CondDrop::video;
    if (u < p.p_text + p.p_video + p.p_both) return CondDrop::both;
    return CondDrop::none;
}

StagePlan StagePlan::defaults(int stage) {
    StagePlan p;
    p.stage = stage;
    if (stage == 1) {
        // conditioner backbone frozen; alignment, queries, and the UNet learn
        p.trainable = {"unet/", "align/", "queries/"};
        p.frames_per_sample = 1;
        p.steps = 2000;
        p.lr = 1e-4;
    } else if (stage == 2) {
        p.trainable = {"unet/", "align/", "queries/", "lora/"};
        p.frames_per_sample = 8;
        p.steps = 2000;
        p.lr = 5e-4;
    } else {
        throw ConfigError("stage must be 1 or 2");
    }
    return p;
}

nlohmann::json StagePlan::to_json() const {
    return {{"stage", stage},
            {"trainable", trainable},
            {"frames_per_sample", frames_per_sample},
            {"steps", steps},
            {"lr", lr},
            {"batch", batch},
            {"cond_dropout",
             {{"p_text", cond_dropout.p_text},
              {"p_video", cond_dropout.p_video},
              {"p_both", cond_dropout.p_both}}},
            {"checkpoint_every", checkpoint_every}};
}

StagePlan StagePlan::from_json(const nlohmann::json& j) {
    StagePlan p = defaults(j.at("stage"));
    if (j.contains("trainable")) p.trainable = j["trainable"].get<std::vector<std::string>>();
    if (j.contains("frames_per_sample")) p.frames_per_sample = j["frames_per_sample"];
    if (j.contains("steps")) p.steps = j["steps"];
    if (j.contains("lr")) p.lr = j["lr"];
    if (j.contains("batch")) p.batch = j["batch"];
    if (j.contains("checkpoint_every")) p.checkpoint_every = j["checkpoint_every"];
    if (j.contains("cond_dropout")) {
        const auto& d = j["cond_dropout"];
        p.cond_dropout.p_text = d.at("p_text");
        p.cond_dropout.p_video = d.at("p_video");
        p.cond_dropout.p_both = d.at("p_both");
    }
    return p;
}

void save_train_state(const TrainState& state, const std::string& path,
                      const nlohmann::json& extra_meta) {
    Checkpoint ck;
    ck.meta = extra_meta;
    ck.meta["conditioner"] = state.conditioner.config().to_json();
    ck.meta["unet"] = state.denoiser.config().to_json();
    ck.meta["mode"] = state.denoiser.mode() == DenoiserMode::video3d ? "video3d" : "image2d";
    ck.meta["completed_stage"] = state.completed_stage;
    // conditioner names (encoder/, queries/, align/, lora/) never collide
    // with unet/ names, so one flat directory suffices
    for (const auto& [k, v] : state.conditioner.params().snapshot()) ck.tensors[k] = v;
    for (const auto& [k, v] : state.denoiser.params().snapshot()) ck.tensors[k] = v;
    ck.save(path);
}

TrainState load_train_state(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    ConditionerConfig ccfg = ConditionerConfig::from_json(ck.meta.at("conditioner"));
    const std::optional<LoraConfig> lora = ccfg.lora;
    ccfg.lora.reset();
    Rng init(0);
    Conditioner cond(ccfg, init);
    if (lora) cond.apply_lora(*lora, init);

    UNetConfig ucfg = UNetConfig::from_json(ck.meta.at("unet"));
    const DenoiserMode mode =
        ck.meta.at("mode") == "video3d" ? DenoiserMode::video3d : DenoiserMode::image2d;
    std::map<std::string, Tensor> cstate, ustate;
    for (const auto& [k, v] : ck.tensors)
        (k.rfind("unet/", 0) == 0 ? ustate : cstate)[k] = v;
    cond.params().restore(cstate);
    TrainState state{std::move(cond), DenoiserModel::from_state(ucfg, mode, ustate),
                     ck.meta.value("completed_stage", 0)};
    return state;
}

nn::Var diffusion_loss_graph(const DenoiseFn& denoise, const Conditioner& cond,
                             const LatentCodec& codec, const NoiseSchedule& sched,
                             const std::vector<InstructionSample>& batch,
                             const CondDropout& dropout, Rng& rng) {
    if (batch.empty()) throw InsufficientData("empty batch");
    Var total;
    for (const auto& s : batch) {
        if (!s.target) throw MissingTarget("sample lacks a target clip");
        const Tensor z0 = codec.encode(*s.target);
        Tensor cv = codec.encode(s.source);
        const int t = static_cast<int>(rng.uniform_int(1, sched.T_max));
        const Tensor eps = rng.normal_tensor(z0.shape());
        const Tensor zt = sched.add_noise(z0, t, eps);

        const CondDrop drop = draw_cond_drop(dropout, rng);
        const int n = s.target->n();
        Var ctok;
        if (drop == CondDrop::text || drop == CondDrop::both)
            ctok = cond.null_condition_graph(n);
        else
            ctok = cond.encode_graph(s.source, s.instruction, s.references, true, rng);
        if (drop == CondDrop::video || drop == CondDrop::both) cv = Tensor(cv.shape());

        Var eps_hat = denoise(nn::constant(zt), t, nn::constant(std::move(cv)), ctok);
        Var l = nn::mse(eps_hat, nn::constant(eps));
        total = total ? nn::add(total, l) : l;
    }
    return nn::scale(total, 1.0 / static_cast<double>(batch.size()));
}

nn::Var diffusion_loss_graph(const DenoiserModel& model, const Conditioner& cond,
                             const LatentCodec& codec, const NoiseSchedule& sched,
                             const std::vector<InstructionSample>& batch,
                             const CondDropout& dropout, Rng& rng) {
    DenoiseFn fn = [&model](const Var& z, int t, const Var& src, const Var& c) {
        return model.forward_graph(z, t, src, c);
    };
    return diffusion_loss_graph(fn, cond, codec, sched, batch, dropout, rng);
}

double diffusion_loss(const DenoiserModel& model, const Conditioner& cond,
                      const LatentCodec& codec, const NoiseSchedule& sched,
                      const std::vector<InstructionSample>& batch,
                      const CondDropout& dropout, Rng& rng) {
    return diffusion_loss_graph(model, cond, codec, sched, batch, dropout, rng)->value[0];
}

namespace {

VideoClip clip_window(const VideoClip& clip, int start, int k) {
    const int H = clip.height(), W = clip.width(), C = clip.channels();
    Tensor out({k, H, W, C});
    const std::int64_t frame = static_cast<std::int64_t>(H) * W * C;
    std::copy_n(clip.frames().data() + start * frame, k * frame, out.data());
    return VideoClip(std::move(out), clip.fps());
}

/// Decoupled-weight-decay Adam over a fixed list of trainable vars.
class AdamW {
public:
    explicit AdamW(std::vector<Var> vars) : vars_(std::move(vars)) {
        for (const auto& v : vars_) {
            m_.emplace_back(v->value.shape());
            v_.emplace_back(v->value.shape());
        }
    }

    void step(double lr, double weight_decay, double clip_norm) {
        double sq = 0;
        for (const auto& p : vars_)
            if (p->grad.numel() > 0)
                for (std::int64_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
        const double norm = std::sqrt(sq);
        const double scale = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;

        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, t_), bc2 = 1.0 - std::pow(b2, t_);
        for (size_t k = 0; k < vars_.size(); ++k) {
            auto& p = vars_[k];
            if (p->grad.numel() == 0) continue;
            for (std::int64_t i = 0; i < p->value.numel(); ++i) {
                const double g = p->grad[i] * scale;
                m_[k][i] = b1 * m_[k][i] + (1 - b1) * g;
                v_[k][i] = b2 * v_[k][i] + (1 - b2) * g * g;
                p->value[i] -= lr * ((m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + eps) +
                                     weight_decay * p->value[i]);
            }
        }
    }

private:
    std::vector<Var> vars_;
    std::vector<Tensor> m_, v_;
    int t_ = 0;
};

}  // namespace

TrainReport run_stage(const StagePlan& plan, const DatasetManifest& data,
                      const std::string& data_base, TrainState& state,
                      const LatentCodec& codec, const NoiseSchedule& sched,
                      std::uint64_t seed, const std::string& out_dir) {
    if (plan.stage != 1 && plan.stage != 2) throw ConfigError("stage must be 1 or 2");
    if (plan.stage == 2 && state.completed_stage < 1)
        throw MissingPrerequisite("stage 2 requires a completed stage-1 checkpoint");
    if (data.records.empty()) throw InsufficientData("empty dataset manifest");
    if (plan.stage == 1 && plan.frames_per_sample != 1)
        throw ConfigError("stage 1 trains single frames");

    Rng init_rng(seed, 100);
    if (plan.stage == 2) {
        if (state.denoiser.mode() == DenoiserMode::image2d)
            state.denoiser = state.denoiser.inflated(init_rng);
        if (!state.conditioner.has_lora()) state.conditioner.apply_lora(LoraConfig{}, init_rng);
    }

    state.conditioner.params().set_all_trainable(false);
    state.denoiser.params().set_all_trainable(false);
    state.conditioner.params().set_trainable_by_prefix(plan.trainable, true);
    state.denoiser.params().set_trainable_by_prefix(plan.trainable, true);
    state.conditioner.params().sync_requires_grad();
    state.denoiser.params().sync_requires_grad();

    std::vector<Var> train_vars = state.conditioner.params().trainable_vars();
    for (auto& v : state.denoiser.params().trainable_vars()) train_vars.push_back(v);
    if (train_vars.empty()) throw ConfigError("no trainable parameters selected");
    AdamW opt(train_vars);

    // Polyak-averaged copy of the trainable weights; written to the final
    // checkpoint because the averaged model samples noticeably cleaner than
    // the last raw iterate at these step budgets.
    const double ema_decay = 0.995;
    std::vector<Tensor> ema_w;
    ema_w.reserve(train_vars.size());
    for (const auto& v : train_vars) ema_w.push_back(v->value);

    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir + "/stage" + std::to_string(plan.stage) + "_loss.csv",
                      std::ios::trunc);
    if (!csv) throw IoError("cannot write loss log under " + out_dir);
    csv << "step,loss\n";
    csv.precision(10);

    Rng data_rng(seed, 200);
    Rng loss_rng(seed, 300);
    TrainReport report;
    report.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    double ema = 0.0;
    for (int step = 0; step < plan.steps; ++step) {
        std::vector<InstructionSample> batch;
        for (int b = 0; b < plan.batch; ++b) {
            const auto& rec = data.records[static_cast<size_t>(
                data_rng.uniform_int(0, static_cast<std::int64_t>(data.records.size()) - 1))];
            InstructionSample s = data.load_sample(rec, data_base);
            if (!s.target) throw MissingTarget("record " + rec.id + " lacks a target");
            const int n = s.source.n();
            const int k = std::min(plan.frames_per_sample, n);
            const int start = (n > k) ? static_cast<int>(data_rng.uniform_int(0, n - k)) : 0;
            s.source = clip_window(s.source, start, k);
            s.target = clip_window(*s.target, start, k);
            batch.push_back(std::move(s));
        }
        state.conditioner.params().zero_grads();
        state.denoiser.params().zero_grads();
        Var loss = diffusion_loss_graph(state.denoiser, state.conditioner, codec, sched, batch,
                                        plan.cond_dropout, loss_rng);
        nn::backward(loss);
        // Hold the peak lr for 70% of the stage, then cosine-decay to a small
        // floor; fixed-lr Adam leaves the weights jittering at a level that
        // visibly blurs sampled frames, while decaying from step 0 wastes
        // most of the (pinned) step budget at low learning rates.
        const int hold = (7 * plan.steps) / 10;
        const double frac =
            step <= hold ? 0.0
                         : static_cast<double>(step - hold) / std::max(1, plan.steps - 1 - hold);
        const double cos_f = 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
        opt.step(plan.lr * (0.02 + 0.98 * cos_f), 1e-2, 1.0);
        for (size_t k = 0; k < train_vars.size(); ++k)
            for (std::int64_t i = 0; i < ema_w[k].numel(); ++i)
                ema_w[k][i] = ema_decay * ema_w[k][i] +
                              (1.0 - ema_decay) * train_vars[k]->value[i];

        const double l = loss->value[0];
        report.losses.push_back(l);
        ema = (step == 0) ? l : 0.98 * ema + 0.02 * l;
        csv << step << "," << l << "\n";
        if (plan.checkpoint_every > 0 && (step + 1) % plan.checkpoint_every == 0 &&
            step + 1 < plan.steps) {
            save_train_state(state,
                             out_dir + "/stage" + std::to_string(plan.stage) + "_step" +
                                 std::to_string(step + 1) + ".ckpt",
                             {{"plan", plan.to_json()}, {"seed", seed}, {"step", step + 1}});
        }
    }
    for (size_t k = 0; k < train_vars.size(); ++k) train_vars[k]->value = ema_w[k];
    state.completed_stage = std::max(state.completed_stage, plan.stage);
    save_train_state(state, out_dir + "/stage" + std::to_string(plan.stage) + "_final.ckpt",
                     {{"plan", plan.to_json()}, {"seed", seed}, {"step", plan.steps}});
    report.ema_loss = ema;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace veggie
