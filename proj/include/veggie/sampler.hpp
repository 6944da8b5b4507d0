// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "veggie/schedule.hpp"
#include "veggie/trainer.hpp"

namespace veggie {

enum class SamplerKind { ddpm, ddim };

struct GuidanceConfig {
    double g_T = 10.5;  // task (text) guidance scale
    double g_V = 1.5;   // video guidance scale
    int steps = 50;
    SamplerKind sampler = SamplerKind::ddim;
    double eta = 0.0;
    std::uint64_t seed = 0;

    void validate() const;  // ConfigError on nonsense
    nlohmann::json to_json() const;
};

/// Per-skill default guidance scales.
struct SkillGuidanceTable {
    std::map<Skill, std::pair<double, double>> scales;  // skill -> (g_T, g_V)

    static SkillGuidanceTable defaults();
    std::pair<double, double> lookup(Skill s) const;  // ConfigError if missing
};

/// Plain-tensor denoiser evaluation: eps(z, t, source_latent, cond_tokens).
using NoisePredictor =
    std::function<Tensor(const Tensor& z, int t, const Tensor& source, const Tensor& cond)>;

/// Dual-scale CFG combination from exactly three predictor evaluations:
/// e(z,0,0) + g_T * (e(z,cV,cT) - e(z,cV,0)) + g_V * (e(z,cV,0) - e(z,0,0)).
/// The null video condition is the all-zero source latent; `null_T` holds the
/// learned null task tokens.
Tensor guided_noise(const NoisePredictor& eps, const Tensor& z, int t, const Tensor& c_V,
                    const Tensor& c_T, const Tensor& null_T, double g_T, double g_V);

/// Runs the configured sampler from seeded Gaussian noise down to z_0.
/// DDPM is the eta=1 special case of the DDIM update over the same
/// timestep subsequence.
Tensor sample_latent(const NoisePredictor& eps, const NoiseSchedule& sched,
                     const GuidanceConfig& cfg, const std::vector<int>& latent_shape,
                     const Tensor& c_V, const Tensor& c_T, const Tensor& null_T);

/// Descending timestep subsequence used by the samplers.
std::vector<int> sampler_timesteps(int T_max, int steps);

struct EditResult {
    VideoClip video;
    nlohmann::json run_log;  // resolved scales, sampler, seed
};

/// Full inference path: encode, sample with dual-scale CFG, decode. When
/// `cfg` is absent the scales come from the skill table (addition-style
/// defaults when `skill_hint` is also absent).
EditResult edit(const TrainState& state, const LatentCodec& codec, const NoiseSchedule& sched,
                const VideoClip& source, const std::string& instruction,
                const std::vector<Tensor>& references = {},
                std::optional<Skill> skill_hint = std::nullopt,
                std::optional<GuidanceConfig> cfg = std::nullopt);

}  // namespace veggie
