// SPDX-License-Identifier: Apache-2.0
#include "veggie/sampler.hpp"

#include <cmath>

#include "veggie/errors.hpp"

namespace veggie {

void GuidanceConfig::validate() const {
    if (!std::isfinite(g_T) || !std::isfinite(g_V)) throw ConfigError("guidance scales must be finite");
    if (steps < 1) throw ConfigError("sampler needs steps >= 1");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0,1]");
}

nlohmann::json GuidanceConfig::to_json() const {
    return {{"g_T", g_T},
            {"g_V", g_V},
            {"steps", steps},
            {"sampler", sampler == SamplerKind::ddim ? "ddim" : "ddpm"},
            {"eta", eta},
            {"seed", seed}};
}

SkillGuidanceTable SkillGuidanceTable::defaults() {
    SkillGuidanceTable t;
    for (int i = 0; i < kNumSkills; ++i) {
        const Skill s = static_cast<Skill>(i);
        const bool grounded = s == Skill::grounding || s == Skill::reasoning;
        t.scales[s] = grounded ? std::make_pair(14.5, 1.5) : std::make_pair(10.5, 2.0);
    }
    return t;
}

std::pair<double, double> SkillGuidanceTable::lookup(Skill s) const {
    auto it = scales.find(s);
    if (it == scales.end())
        throw ConfigError(std::string("no guidance scales for skill ") + skill_name(s));
    return it->second;
}

Tensor guided_noise(const NoisePredictor& eps, const Tensor& z, int t, const Tensor& c_V,
                    const Tensor& c_T, const Tensor& null_T, double g_T, double g_V) {
    const Tensor zero_V(c_V.shape());
    const Tensor e_uncond = eps(z, t, zero_V, null_T);
    const Tensor e_vid = eps(z, t, c_V, null_T);
    const Tensor e_full = eps(z, t, c_V, c_T);
    // coefficient form of the same combination; exact when a scale is 0 or 1
    const double a = 1.0 - g_V, b = g_V - g_T, c = g_T;
    Tensor out(z.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = a * e_uncond[i] + b * e_vid[i] + c * e_full[i];
    return out;
}

std::vector<int> sampler_timesteps(int T_max, int steps) {
    const int k = std::min(steps, T_max);
    std::vector<int> taus;
    int last = -1;
    // evenly spaced, descending, ending at t=1
    for (int i = k; i >= 1; --i) {
        const int t = static_cast<int>(std::llround(static_cast<double>(i) * T_max / k));
        if (t != last && t >= 1) taus.push_back(t);
        last = t;
    }
    return taus;
}

Tensor sample_latent(const NoisePredictor& eps, const NoiseSchedule& sched,
                     const GuidanceConfig& cfg, const std::vector<int>& latent_shape,
                     const Tensor& c_V, const Tensor& c_T, const Tensor& null_T) {
    cfg.validate();
    const double eta = cfg.sampler == SamplerKind::ddpm ? 1.0 : cfg.eta;
    Rng init_rng(cfg.seed, 1);
    Rng step_rng(cfg.seed, 2);
    Tensor z = init_rng.normal_tensor(latent_shape);

    const std::vector<int> taus = sampler_timesteps(sched.T_max, cfg.steps);
    for (size_t i = 0; i < taus.size(); ++i) {
        const int t = taus[i];
        const double abar = sched.alpha_bar(t);
        const double abar_prev = (i + 1 < taus.size()) ? sched.alpha_bar(taus[i + 1]) : 1.0;
        const Tensor e = guided_noise(eps, z, t, c_V, c_T, null_T, cfg.g_T, cfg.g_V);

        const double sa = std::sqrt(abar), sb = std::sqrt(1.0 - abar);
        const double sigma =
            eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar)) * std::sqrt(1.0 - abar / abar_prev);
        const double dir = std::sqrt(std::max(1.0 - abar_prev - sigma * sigma, 0.0));
        Tensor noise;
        if (sigma > 0.0) noise = step_rng.normal_tensor(latent_shape);
        for (std::int64_t j = 0; j < z.numel(); ++j) {
            const double x0 = (z[j] - sb * e[j]) / sa;
            z[j] = std::sqrt(abar_prev) * x0 + dir * e[j] +
                   (sigma > 0.0 ? sigma * noise[j] : 0.0);
        }
    }
    return z;
}

EditResult edit(const TrainState& state, const LatentCodec& codec, const NoiseSchedule& sched,
                const VideoClip& source, const std::string& instruction,
                const std::vector<Tensor>& references, std::optional<Skill> skill_hint,
                std::optional<GuidanceConfig> cfg) {
    if (state.completed_stage < 1)
        throw NotInitialized("edit requires a trained checkpoint (completed_stage >= 1)");

    GuidanceConfig g = cfg.value_or(GuidanceConfig{});
    if (!cfg) {
        const auto [gt, gv] =
            SkillGuidanceTable::defaults().lookup(skill_hint.value_or(Skill::addition));
        g.g_T = gt;
        g.g_V = gv;
    }
    g.validate();

    const Tensor c_V = codec.encode(source);
    const int n = source.n();
    const Tensor c_T =
        state.conditioner.encode(source, instruction, references).tokens;
    const Tensor null_T = state.conditioner.null_condition(n).tokens;

    NoisePredictor eps = [&](const Tensor& z, int t, const Tensor& src, const Tensor& cond) {
        return state.denoiser.predict_noise({z, t}, src, cond);
    };
    Tensor z0 = sample_latent(eps, sched, g, c_V.shape(), c_V, c_T, null_T);

    EditResult out;
    out.video = codec.decode(z0, source.fps());
    out.run_log = g.to_json();
    out.run_log["skill"] = skill_hint ? skill_name(*skill_hint) : "unspecified";
    out.run_log["scales_from"] = cfg ? "explicit" : "skill_table";
    out.run_log["frames"] = n;
    out.run_log["height"] = source.height();
    out.run_log["width"] = source.width();
    out.run_log["instruction"] = instruction;
    return out;
}

}  // namespace veggie
