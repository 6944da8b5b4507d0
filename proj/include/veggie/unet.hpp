// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "veggie/autodiff.hpp"
#include "veggie/conditioner.hpp"
#include "veggie/media.hpp"
#include "veggie/params.hpp"
#include "veggie/schedule.hpp"

namespace veggie {

/// Diffusion state: n frames of latent channels plus the timestep index.
struct LatentVolume {
    Tensor data;  // [n,c,h,w]
    int t = 0;
};

struct UNetConfig {
    int c_latent = 3;
    int base_width = 64;
    std::vector<int> channel_multipliers{1, 2, 4};
    std::vector<int> attn_levels{1, 2};  // indices into the level ladder
    int d_cond = 128;
    int T_max = 1000;
    // Forward-process beta ramp. Lives here (not only in the trainer) because
    // the denoiser's output head needs alpha_bar(t), and carrying the ramp in
    // the checkpointed config keeps training and inference on one schedule.
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int norm_groups = 8;
    int res_blocks = 1;  // per level

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int channels(int level) const { return base_width * channel_multipliers.at(static_cast<size_t>(level)); }
    bool attn_at(int level) const;
    int time_width() const { return 4 * base_width; }

    nlohmann::json to_json() const;
    static UNetConfig from_json(const nlohmann::json& j);
};

enum class DenoiserMode { image2d, video3d };

/// Conditional denoising UNet. The noisy latent is channel-concatenated with
/// the source-video latent; grounded task tokens enter through per-frame
/// cross-attention. In video3d mode zero-initialized temporal attention
/// blocks mix information across the frame axis.
class DenoiserModel {
public:
    DenoiserModel(UNetConfig cfg, Rng& init_rng);

    const UNetConfig& config() const { return cfg_; }
    DenoiserMode mode() const { return mode_; }
    nn::ParamRegistry& params() { return params_; }
    const nn::ParamRegistry& params() const { return params_; }

    /// eps-prediction graph. z, source: [n,c,h,w]; cond: [n,m,d_cond].
    /// Internally the backbone regresses the velocity v and the head returns
    /// eps = sqrt(1-abar_t)*z + sqrt(abar_t)*v_hat, so the content pathway is
    /// shared across timesteps and stays trainable at near-zero SNR.
    nn::Var forward_graph(const nn::Var& z, int t, const nn::Var& source,
                          const nn::Var& cond) const;

    Tensor predict_noise(const LatentVolume& z, const Tensor& source_latent,
                         const Tensor& cond) const;

    /// Copies all 2D weights and inserts zero-initialized temporal attention
    /// after every spatial attention block; result mode is video3d.
    DenoiserModel inflated(Rng& init_rng) const;

    /// Rebuild from config + named tensors (checkpoint load).
    static DenoiserModel from_state(UNetConfig cfg, DenoiserMode mode,
                                    const std::map<std::string, Tensor>& state);

private:
    struct Ctx;
    DenoiserModel(UNetConfig cfg, DenoiserMode mode);  // params added by caller
    void build_params(Rng& init_rng);
    void add_temporal_params(const std::string& prefix, Rng& init_rng);
    nn::Var res_block(const std::string& p, const nn::Var& x, const nn::Var& temb) const;
    nn::Var attn_block(const std::string& p, const nn::Var& x, const nn::Var& cond) const;
    nn::Var temporal_block(const std::string& p, const nn::Var& x) const;

    UNetConfig cfg_;
    DenoiserMode mode_ = DenoiserMode::image2d;
    NoiseSchedule sched_;
    nn::ParamRegistry params_;
};

/// Pixel <-> latent mapping around the denoiser.
class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    virtual Tensor encode(const VideoClip& clip) const = 0;
    virtual VideoClip decode(const Tensor& latent, double fps) const = 0;
    virtual int latent_channels(int pixel_channels) const = 0;
    virtual int spatial_factor() const = 0;
};

/// Default: pixel-space diffusion; intensities map affinely to [-1,1].
class IdentityCodec : public LatentCodec {
public:
    Tensor encode(const VideoClip& clip) const override;
    VideoClip decode(const Tensor& latent, double fps) const override;
    int latent_channels(int pixel_channels) const override { return pixel_channels; }
    int spatial_factor() const override { return 1; }
};

/// Optional learned 2x conv autoencoder (frozen after pretraining).
class ConvAutoencoder : public LatentCodec {
public:
    ConvAutoencoder(int pixel_channels, int latent_channels, Rng& init_rng);

    Tensor encode(const VideoClip& clip) const override;
    VideoClip decode(const Tensor& latent, double fps) const override;
    int latent_channels(int pixel_channels) const override { return c_latent_; }
    int spatial_factor() const override { return 2; }

    /// One reconstruction-loss training step over a batch of clips; returns loss.
    double train_step(const std::vector<VideoClip>& batch, double lr);
    nn::ParamRegistry& params() { return params_; }

private:
    nn::Var encode_graph(const nn::Var& pix) const;  // [n,C,H,W] -> [n,c,h,w]
    nn::Var decode_graph(const nn::Var& lat) const;

    int c_pixel_;
    int c_latent_;
    nn::ParamRegistry params_;
    std::vector<Tensor> adam_m_, adam_v_;
    int adam_step_ = 0;
};

/// NHWC [0,1] pixels -> NCHW tensor (shared by the codecs).
Tensor nhwc_to_nchw(const Tensor& frames);
Tensor nchw_to_nhwc(const Tensor& latent);

}  // namespace veggie
