// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "veggie/autodiff.hpp"
#include "veggie/media.hpp"
#include "veggie/params.hpp"
#include "veggie/rng.hpp"

namespace veggie {

/// n x m x d_cond condition tensor: m grounded task tokens per frame.
struct GroundedTaskQueries {
    Tensor tokens;  // [n,m,d]
    int n() const { return tokens.dim(0); }
    int m() const { return tokens.dim(1); }
    int d() const { return tokens.dim(2); }
};

struct LoraConfig {
    int rank = 64;
    double alpha = 16.0;
    double dropout = 0.05;
};

struct ConditionerConfig {
    int d_model = 256;
    int d_cond = 128;
    int layers = 4;
    int heads = 4;
    int m = 32;            // grounded task tokens per frame
    int vocab = 258;       // 256 bytes + BOS + SEP
    int patch = 8;
    int max_text_len = 128;
    int max_patches = 64;  // per frame
    int ffn_mult = 4;
    std::optional<LoraConfig> lora;  // present once apply_lora() ran

    nlohmann::json to_json() const;
    static ConditionerConfig from_json(const nlohmann::json& j);
};

/// Toy multimodal conditioner: byte-level text tokens, frame/reference patch
/// embeddings, and learnable per-frame query tokens pass through a
/// bidirectional transformer encoder in one forward pass; the query states
/// map through a single affine alignment layer into the condition space.
class Conditioner {
public:
    Conditioner(ConditionerConfig cfg, Rng& init_rng);

    const ConditionerConfig& config() const { return cfg_; }
    nn::ParamRegistry& params() { return params_; }
    const nn::ParamRegistry& params() const { return params_; }

    /// Eval-mode encode; deterministic given weights and inputs.
    GroundedTaskQueries encode(const VideoClip& source, const std::string& instruction,
                               const std::vector<Tensor>& references = {}) const;

    /// Graph-building encode used during training. When `training`, LoRA
    /// dropout is active and drawn from `rng`.
    nn::Var encode_graph(const VideoClip& source, const std::string& instruction,
                         const std::vector<Tensor>& references, bool training,
                         Rng& rng) const;

    /// Learned null task condition broadcast to n frames.
    GroundedTaskQueries null_condition(int n) const;
    nn::Var null_condition_graph(int n) const;

    /// Inserts low-rank residual adapters into every attention projection and
    /// freezes everything except the adapters, queries, and alignment net.
    void apply_lora(const LoraConfig& cfg, Rng& init_rng);
    bool has_lora() const { return cfg_.lora.has_value(); }

    std::vector<int> tokenize(const std::string& text) const;

private:
    struct LayerRefs;
    nn::Var projection(const std::string& base, const nn::Var& x, bool training,
                       Rng& rng) const;
    nn::Var encoder_forward(const nn::Var& tokens_in, bool training, Rng& rng) const;

    ConditionerConfig cfg_;
    nn::ParamRegistry params_;
};

}  // namespace veggie
