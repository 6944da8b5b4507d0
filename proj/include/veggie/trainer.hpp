// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "veggie/conditioner.hpp"
#include "veggie/media.hpp"
#include "veggie/schedule.hpp"
#include "veggie/unet.hpp"

namespace veggie {

/// Per-sample condition dropout probabilities for CFG training. The three
/// events are drawn mutually exclusively from one uniform variate.
struct CondDropout {
    double p_text = 0.05;
    double p_video = 0.05;
    double p_both = 0.05;
};

enum class CondDrop { none, text, video, both };

/// One mutually-exclusive dropout draw; exposed so its marginals can be
/// checked directly.
CondDrop draw_cond_drop(const CondDropout& p, Rng& rng);

/// One curriculum stage. `trainable` holds parameter-name prefixes; every
/// parameter outside them is frozen for the duration of the stage.
struct StagePlan {
    int stage = 1;
    std::vector<std::string> trainable;
    int frames_per_sample = 1;
    int steps = 2000;
    double lr = 1e-4;
    int batch = 2;
    CondDropout cond_dropout;
    int checkpoint_every = 500;

    static StagePlan defaults(int stage);

    nlohmann::json to_json() const;
    static StagePlan from_json(const nlohmann::json& j);
};

struct TrainReport {
    std::vector<double> losses;
    double ema_loss = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

/// Everything the trainer mutates, bundled for checkpointing.
struct TrainState {
    Conditioner conditioner;
    DenoiserModel denoiser;
    int completed_stage = 0;
};

void save_train_state(const TrainState& state, const std::string& path,
                      const nlohmann::json& extra_meta = nlohmann::json::object());
TrainState load_train_state(const std::string& path);

/// Denoiser evaluation point, pluggable so loss oracles can stand in for the
/// real model.
using DenoiseFn = std::function<nn::Var(const nn::Var& z_t, int t, const nn::Var& source,
                                        const nn::Var& cond)>;

/// Single diffusion loss: mean ||eps - e(z_t, c_V, c_T)||^2 over the batch,
/// with t ~ U[1,T_max] and condition dropout per sample.
nn::Var diffusion_loss_graph(const DenoiseFn& denoise, const Conditioner& cond,
                             const LatentCodec& codec, const NoiseSchedule& sched,
                             const std::vector<InstructionSample>& batch,
                             const CondDropout& dropout, Rng& rng);
nn::Var diffusion_loss_graph(const DenoiserModel& model, const Conditioner& cond,
                             const LatentCodec& codec, const NoiseSchedule& sched,
                             const std::vector<InstructionSample>& batch,
                             const CondDropout& dropout, Rng& rng);
double diffusion_loss(const DenoiserModel& model, const Conditioner& cond,
                      const LatentCodec& codec, const NoiseSchedule& sched,
                      const std::vector<InstructionSample>& batch,
                      const CondDropout& dropout, Rng& rng);

/// Runs one stage over the manifest: AdamW on the plan's trainable groups,
/// gradient clipping at 1.0, periodic checkpoints and a CSV loss log under
/// `out_dir`. Stage 2 inflates the denoiser and inserts LoRA first.
TrainReport run_stage(const StagePlan& plan, const DatasetManifest& data,
                      const std::string& data_base, TrainState& state,
                      const LatentCodec& codec, const NoiseSchedule& sched,
                      std::uint64_t seed, const std::string& out_dir);

}  // namespace veggie
