// SPDX-License-Identifier: Apache-2.0
#include "veggie/unet.hpp"

#include <cmath>

#include "veggie/errors.hpp"

namespace veggie {

using nn::Var;

namespace {

int norm_groups_for(int channels, int preferred) {
    int g = std::min(channels, preferred);
    while (channels % g != 0) --g;
    return g;
}

Tensor sinusoid_vec(double pos, int d) {
    Tensor t({d});
    for (int i = 0; i < d; ++i) {
        const double freq = std::pow(10000.0, -2.0 * (i / 2) / d);
        t[i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
    return t;
}

}  // namespace

bool UNetConfig::attn_at(int level) const {
    for (int l : attn_levels)
        if (l == level) return true;
    return false;
}

nlohmann::json UNetConfig::to_json() const {
    return {{"c_latent", c_latent},
            {"base_width", base_width},
            {"channel_multipliers", channel_multipliers},
            {"attn_levels", attn_levels},
            {"d_cond", d_cond},
            {"T_max", T_max},
            {"beta_start", beta_start},
            {"beta_end", beta_end},
            {"norm_groups", norm_groups},
            {"res_blocks", res_blocks}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.c_latent = j.at("c_latent");
    c.base_width = j.at("base_width");
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    c.attn_levels = j.at("attn_levels").get<std::vector<int>>();
    c.d_cond = j.at("d_cond");
    c.T_max = j.at("T_max");
    c.beta_start = j.value("beta_start", 1e-4);
    c.beta_end = j.value("beta_end", 0.02);
    c.norm_groups = j.at("norm_groups");
    c.res_blocks = j.at("res_blocks");
    return c;
}

DenoiserModel::DenoiserModel(UNetConfig cfg, DenoiserMode mode)
    : cfg_(std::move(cfg)), mode_(mode),
      sched_(NoiseSchedule::linear(cfg_.T_max, cfg_.beta_start, cfg_.beta_end)) {}

DenoiserModel::DenoiserModel(UNetConfig cfg, Rng& init_rng)
    : cfg_(std::move(cfg)), mode_(DenoiserMode::image2d),
      sched_(NoiseSchedule::linear(cfg_.T_max, cfg_.beta_start, cfg_.beta_end)) {
    build_params(init_rng);
    params_.sync_requires_grad();
}

void DenoiserModel::build_params(Rng& rng) {
    const int base = cfg_.base_width;
    const int tw = cfg_.time_width();
    // Kaiming-ish fan-in scaling keeps activations stable through the convs.
    auto conv_init = [&](int out, int in, int k) {
        return rng.normal_tensor({out, in, k, k}, 1.0 / std::sqrt(static_cast<double>(in) * k * k));
    };
    auto lin_init = [&](int in, int out) {
        return rng.normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    };

    params_.add("unet/temb/w1", lin_init(base, tw));
    params_.add("unet/temb/b1", Tensor({tw}));
    params_.add("unet/temb/w2", lin_init(tw, tw));
    params_.add("unet/temb/b2", Tensor({tw}));

    const int c0 = cfg_.channels(0);
    params_.add("unet/conv_in/w", conv_init(c0, 2 * cfg_.c_latent, 3));
    params_.add("unet/conv_in/b", Tensor({c0}));

    auto add_res = [&](const std::string& p, int in, int out) {
        params_.add(p + "gn1_g", Tensor::full({in}, 1.0));
        params_.add(p + "gn1_b", Tensor({in}));
        params_.add(p + "conv1_w", conv_init(out, in, 3));
        params_.add(p + "conv1_b", Tensor({out}));
        params_.add(p + "tproj_w", lin_init(tw, out));
        params_.add(p + "tproj_b", Tensor({out}));
        params_.add(p + "gn2_g", Tensor::full({out}, 1.0));
        params_.add(p + "gn2_b", Tensor({out}));
        params_.add(p + "conv2_w", conv_init(out, out, 3));
        params_.add(p + "conv2_b", Tensor({out}));
        if (in != out) {
            params_.add(p + "skip_w", conv_init(out, in, 1));
            params_.add(p + "skip_b", Tensor({out}));
        }
    };
    auto add_attn = [&](const std::string& p, int c) {
        params_.add(p + "gn_g", Tensor::full({c}, 1.0));
        params_.add(p + "gn_b", Tensor({c}));
        for (const char* h : {"q", "k", "v", "o"}) {
            params_.add(p + h + "_w", lin_init(c, c));
            params_.add(p + std::string(h) + "_b", Tensor({c}));
        }
        params_.add(p + "cn_g", Tensor::full({c}, 1.0));
        params_.add(p + "cn_b", Tensor({c}));
        params_.add(p + "cq_w", lin_init(c, c));
        params_.add(p + "cq_b", Tensor({c}));
        params_.add(p + "ck_w", lin_init(cfg_.d_cond, c));
        params_.add(p + "ck_b", Tensor({c}));
        params_.add(p + "cv_w", lin_init(cfg_.d_cond, c));
        params_.add(p + "cv_b", Tensor({c}));
        params_.add(p + "co_w", lin_init(c, c));
        params_.add(p + "co_b", Tensor({c}));
    };

    const int L = cfg_.levels();
    for (int l = 0; l < L; ++l) {
        const int cin = (l == 0) ? c0 : cfg_.channels(l - 1);
        const int cl = cfg_.channels(l);
        for (int r = 0; r < cfg_.res_blocks; ++r)
            add_res("unet/down" + std::to_string(l) + "/res" + std::to_string(r) + "/",
                    r == 0 ? cin : cl, cl);
        if (cfg_.attn_at(l)) add_attn("unet/down" + std::to_string(l) + "/attn/", cl);
        if (l < L - 1) {
            params_.add("unet/down" + std::to_string(l) + "/down/w", conv_init(cl, cl, 3));
            params_.add("unet/down" + std::to_string(l) + "/down/b", Tensor({cl}));
        }
    }
    const int cm = cfg_.channels(L - 1);
    add_res("unet/mid/res0/", cm, cm);
    add_attn("unet/mid/attn/", cm);
    add_res("unet/mid/res1/", cm, cm);

    for (int l = L - 1; l >= 0; --l) {
        const int cl = cfg_.channels(l);
        add_res("unet/up" + std::to_string(l) + "/res0/", 2 * cl, cl);
        if (cfg_.attn_at(l)) add_attn("unet/up" + std::to_string(l) + "/attn/", cl);
        if (l > 0) {
            params_.add("unet/up" + std::to_string(l) + "/upconv/w",
                        conv_init(cfg_.channels(l - 1), cl, 3));
            params_.add("unet/up" + std::to_string(l) + "/upconv/b",
                        Tensor({cfg_.channels(l - 1)}));
        }
    }
    params_.add("unet/out/gn_g", Tensor::full({c0}, 1.0));
    params_.add("unet/out/gn_b", Tensor({c0}));
    // Small final-conv init: near-zero prediction at start, but gradients
    // still reach every upstream parameter on the first step.
    params_.add("unet/out/conv_w",
                rng.normal_tensor({cfg_.c_latent, c0, 3, 3}, 0.1 / std::sqrt(9.0 * c0)));
    params_.add("unet/out/conv_b", Tensor({cfg_.c_latent}));
}

void DenoiserModel::add_temporal_params(const std::string& prefix, Rng& rng) {
    // channel count from the block's self-attention projection
    const int c = params_.find(prefix + "q_w")->value.dim(0);
    const std::string p = prefix + "temporal/";
    auto lin_init = [&](int in, int out) {
        return rng.normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    };
    params_.add(p + "ln_g", Tensor::full({c}, 1.0));
    params_.add(p + "ln_b", Tensor({c}));
    params_.add(p + "q_w", lin_init(c, c));
    params_.add(p + "q_b", Tensor({c}));
    params_.add(p + "k_w", lin_init(c, c));
    params_.add(p + "k_b", Tensor({c}));
    params_.add(p + "v_w", lin_init(c, c));
    params_.add(p + "v_b", Tensor({c}));
    params_.add(p + "o_w", Tensor({c, c}));  // zero: identity at inflation time
    params_.add(p + "o_b", Tensor({c}));
}

Var DenoiserModel::res_block(const std::string& p, const Var& x, const Var& temb) const {
    Var h = nn::group_norm(x, norm_groups_for(x->value.dim(1), cfg_.norm_groups),
                           params_.find(p + "gn1_g"), params_.find(p + "gn1_b"));
    h = nn::conv2d(nn::silu(h), params_.find(p + "conv1_w"), params_.find(p + "conv1_b"), 1, 1);
    Var tb = nn::linear(nn::silu(temb), params_.find(p + "tproj_w"), params_.find(p + "tproj_b"));
    h = nn::add_channel_bias(h, nn::reshape(tb, {tb->value.dim(1)}));
    h = nn::group_norm(h, norm_groups_for(h->value.dim(1), cfg_.norm_groups),
                       params_.find(p + "gn2_g"), params_.find(p + "gn2_b"));
    h = nn::conv2d(nn::silu(h), params_.find(p + "conv2_w"), params_.find(p + "conv2_b"), 1, 1);
    Var sk = x;
    if (params_.contains(p + "skip_w"))
        sk = nn::conv2d(x, params_.find(p + "skip_w"), params_.find(p + "skip_b"), 1, 0);
    return nn::add(sk, h);
}

Var DenoiserModel::attn_block(const std::string& p, const Var& x, const Var& cond) const {
    const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    const int hw = h * w;
    auto to_tokens = [&](const Var& t) {
        return nn::transpose(nn::reshape(t, {n, c, hw}), 1, 2);  // [n,hw,c]
    };
    auto to_spatial = [&](const Var& t) {
        return nn::reshape(nn::transpose(t, 1, 2), {n, c, h, w});
    };
    const double sc = 1.0 / std::sqrt(static_cast<double>(c));

    // spatial self-attention
    Var tok = to_tokens(nn::group_norm(x, norm_groups_for(c, cfg_.norm_groups),
                                       params_.find(p + "gn_g"), params_.find(p + "gn_b")));
    Var q = nn::linear(tok, params_.find(p + "q_w"), params_.find(p + "q_b"));
    Var k = nn::linear(tok, params_.find(p + "k_w"), params_.find(p + "k_b"));
    Var v = nn::linear(tok, params_.find(p + "v_w"), params_.find(p + "v_b"));
    Var attn = nn::softmax_lastdim(nn::scale(nn::bmm(q, nn::transpose(k, 1, 2)), sc));
    Var ctx = nn::linear(nn::bmm(attn, v), params_.find(p + "o_w"), params_.find(p + "o_b"));
    Var y = nn::add(x, to_spatial(ctx));

    // cross-attention: frame i attends only to its own m condition tokens
    Var tok2 = to_tokens(nn::group_norm(y, norm_groups_for(c, cfg_.norm_groups),
                                        params_.find(p + "cn_g"), params_.find(p + "cn_b")));
    Var cq = nn::linear(tok2, params_.find(p + "cq_w"), params_.find(p + "cq_b"));
    Var ck = nn::linear(cond, params_.find(p + "ck_w"), params_.find(p + "ck_b"));
    Var cv = nn::linear(cond, params_.find(p + "cv_w"), params_.find(p + "cv_b"));
    Var cattn = nn::softmax_lastdim(nn::scale(nn::bmm(cq, nn::transpose(ck, 1, 2)), sc));
    Var cctx = nn::linear(nn::bmm(cattn, cv), params_.find(p + "co_w"), params_.find(p + "co_b"));
    y = nn::add(y, to_spatial(cctx));

    if (mode_ == DenoiserMode::video3d) y = temporal_block(p + "temporal/", y);
    return y;
}

Var DenoiserModel::temporal_block(const std::string& p, const Var& x) const {
    const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    const int hw = h * w;
    // [n,c,h,w] -> [hw,n,c]: frame sequences per spatial location
    Var tok = nn::transpose(nn::transpose(nn::reshape(x, {n, c, hw}), 0, 2), 1, 2);
    Var hm = nn::layer_norm(tok, params_.find(p + "ln_g"), params_.find(p + "ln_b"));
    Tensor fpos({hw, n, c});
    for (int f = 0; f < n; ++f) {
        Tensor row = sinusoid_vec(f, c);
        for (int s = 0; s < hw; ++s)
            std::copy_n(row.data(), c, fpos.data() + (static_cast<std::int64_t>(s) * n + f) * c);
    }
    hm = nn::add(hm, nn::constant(std::move(fpos)));
    Var q = nn::linear(hm, params_.find(p + "q_w"), params_.find(p + "q_b"));
    Var k = nn::linear(hm, params_.find(p + "k_w"), params_.find(p + "k_b"));
    Var v = nn::linear(hm, params_.find(p + "v_w"), params_.find(p + "v_b"));
    const double sc = 1.0 / std::sqrt(static_cast<double>(c));
    Var attn = nn::softmax_lastdim(nn::scale(nn::bmm(q, nn::transpose(k, 1, 2)), sc));
    Var ctx = nn::linear(nn::bmm(attn, v), params_.find(p + "o_w"), params_.find(p + "o_b"));
    // back to [n,c,h,w]
    Var out = nn::reshape(nn::transpose(nn::transpose(ctx, 1, 2), 0, 2), {n, c, h, w});
    return nn::add(x, out);
}

Var DenoiserModel::forward_graph(const Var& z, int t, const Var& source,
                                 const Var& cond) const {
    if (t < 0 || t > cfg_.T_max) throw TimestepError("t=" + std::to_string(t));
    const auto& zs = z->value.shape();
    if (zs.size() != 4 || zs[1] != cfg_.c_latent)
        throw ShapeError("latent must be [n,c,h,w] with c=" + std::to_string(cfg_.c_latent));
    if (!source->value.same_shape(z->value))
        throw ShapeError("source latent shape must match noisy latent");
    if (cond->value.ndim() != 3 || cond->value.dim(0) != zs[0] ||
        cond->value.dim(2) != cfg_.d_cond)
        throw ShapeError("condition must be [n,m,d_cond] with matching frame count");

    Var temb = nn::constant(sinusoid_vec(t, cfg_.base_width).reshaped({1, cfg_.base_width}));
    temb = nn::linear(temb, params_.find("unet/temb/w1"), params_.find("unet/temb/b1"));
    temb = nn::linear(nn::silu(temb), params_.find("unet/temb/w2"), params_.find("unet/temb/b2"));

    Var x = nn::conv2d(nn::concat({z, source}, 1), params_.find("unet/conv_in/w"),
                       params_.find("unet/conv_in/b"), 1, 1);
    const int L = cfg_.levels();
    std::vector<Var> skips;
    for (int l = 0; l < L; ++l) {
        for (int r = 0; r < cfg_.res_blocks; ++r)
            x = res_block("unet/down" + std::to_string(l) + "/res" + std::to_string(r) + "/", x, temb);
        if (cfg_.attn_at(l)) x = attn_block("unet/down" + std::to_string(l) + "/attn/", x, cond);
        skips.push_back(x);
        if (l < L - 1)
            x = nn::conv2d(x, params_.find("unet/down" + std::to_string(l) + "/down/w"),
                           params_.find("unet/down" + std::to_string(l) + "/down/b"), 2, 1);
    }
    x = res_block("unet/mid/res0/", x, temb);
    x = attn_block("unet/mid/attn/", x, cond);
    x = res_block("unet/mid/res1/", x, temb);
    for (int l = L - 1; l >= 0; --l) {
        x = nn::concat({x, skips[static_cast<size_t>(l)]}, 1);
        x = res_block("unet/up" + std::to_string(l) + "/res0/", x, temb);
        if (cfg_.attn_at(l)) x = attn_block("unet/up" + std::to_string(l) + "/attn/", x, cond);
        if (l > 0)
            x = nn::conv2d(nn::upsample_nearest2(x),
                           params_.find("unet/up" + std::to_string(l) + "/upconv/w"),
                           params_.find("unet/up" + std::to_string(l) + "/upconv/b"), 1, 1);
    }
    x = nn::group_norm(x, norm_groups_for(x->value.dim(1), cfg_.norm_groups),
                       params_.find("unet/out/gn_g"), params_.find("unet/out/gn_b"));
    Var v_hat = nn::conv2d(nn::silu(x), params_.find("unet/out/conv_w"),
                           params_.find("unet/out/conv_b"), 1, 1);
    const double abar = (t == 0) ? 1.0 : sched_.alpha_bar(t);
    return nn::add(nn::scale(z, std::sqrt(1.0 - abar)), nn::scale(v_hat, std::sqrt(abar)));
}

Tensor DenoiserModel::predict_noise(const LatentVolume& z, const Tensor& source_latent,
                                    const Tensor& cond) const {
    return forward_graph(nn::constant(z.data), z.t, nn::constant(source_latent),
                         nn::constant(cond))
        ->value;
}

DenoiserModel DenoiserModel::inflated(Rng& init_rng) const {
    if (mode_ == DenoiserMode::video3d) throw AlreadyInflated("model is already video3d");
    DenoiserModel out(cfg_, DenoiserMode::video3d);
    for (const auto& p : params_.all()) out.params_.add(p.name, p.var->value, p.trainable);
    const int L = cfg_.levels();
    for (int l = 0; l < L; ++l)
        if (cfg_.attn_at(l)) {
            out.add_temporal_params("unet/down" + std::to_string(l) + "/attn/", init_rng);
            out.add_temporal_params("unet/up" + std::to_string(l) + "/attn/", init_rng);
        }
    out.add_temporal_params("unet/mid/attn/", init_rng);
    out.params_.sync_requires_grad();
    return out;
}

DenoiserModel DenoiserModel::from_state(UNetConfig cfg, DenoiserMode mode,
                                        const std::map<std::string, Tensor>& state) {
    Rng rng(0);
    DenoiserModel m(cfg, rng);
    if (mode == DenoiserMode::video3d) m = m.inflated(rng);
    m.params_.restore(state);
    return m;
}

Tensor nhwc_to_nchw(const Tensor& frames) {
    const int n = frames.dim(0), H = frames.dim(1), W = frames.dim(2), C = frames.dim(3);
    Tensor out({n, C, H, W});
    for (int f = 0; f < n; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c)
                    out.at({f, c, y, x}) = frames.at({f, y, x, c});
    return out;
}

Tensor nchw_to_nhwc(const Tensor& latent) {
    const int n = latent.dim(0), C = latent.dim(1), H = latent.dim(2), W = latent.dim(3);
    Tensor out({n, H, W, C});
    for (int f = 0; f < n; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c)
                    out.at({f, y, x, c}) = latent.at({f, c, y, x});
    return out;
}

Tensor IdentityCodec::encode(const VideoClip& clip) const {
    Tensor lat = nhwc_to_nchw(clip.frames());
    for (std::int64_t i = 0; i < lat.numel(); ++i) lat[i] = 2.0 * lat[i] - 1.0;
    return lat;
}

VideoClip IdentityCodec::decode(const Tensor& latent, double fps) const {
    Tensor pix = nchw_to_nhwc(latent);
    for (std::int64_t i = 0; i < pix.numel(); ++i)
        pix[i] = std::clamp(0.5 * (pix[i] + 1.0), 0.0, 1.0);
    return VideoClip(std::move(pix), fps);
}

ConvAutoencoder::ConvAutoencoder(int pixel_channels, int latent_channels, Rng& rng)
    : c_pixel_(pixel_channels), c_latent_(latent_channels) {
    const int mid = 4 * latent_channels;
    auto conv_init = [&](int out, int in, int k) {
        return rng.normal_tensor({out, in, k, k}, 1.0 / std::sqrt(static_cast<double>(in) * k * k));
    };
    params_.add("enc/c1_w", conv_init(mid, c_pixel_, 3));
    params_.add("enc/c1_b", Tensor({mid}));
    params_.add("enc/c2_w", conv_init(c_latent_, mid, 3));  // stride 2
    params_.add("enc/c2_b", Tensor({c_latent_}));
    params_.add("dec/c1_w", conv_init(mid, c_latent_, 3));
    params_.add("dec/c1_b", Tensor({mid}));
    params_.add("dec/c2_w", conv_init(c_pixel_, mid, 3));
    params_.add("dec/c2_b", Tensor({c_pixel_}));
    params_.sync_requires_grad();
}

nn::Var ConvAutoencoder::encode_graph(const nn::Var& pix) const {
    Var h = nn::silu(nn::conv2d(pix, params_.find("enc/c1_w"), params_.find("enc/c1_b"), 1, 1));
    return nn::conv2d(h, params_.find("enc/c2_w"), params_.find("enc/c2_b"), 2, 1);
}

nn::Var ConvAutoencoder::decode_graph(const nn::Var& lat) const {
    Var h = nn::upsample_nearest2(lat);
    h = nn::silu(nn::conv2d(h, params_.find("dec/c1_w"), params_.find("dec/c1_b"), 1, 1));
    return nn::conv2d(h, params_.find("dec/c2_w"), params_.find("dec/c2_b"), 1, 1);
}

Tensor ConvAutoencoder::encode(const VideoClip& clip) const {
    if (clip.height() % 2 != 0 || clip.width() % 2 != 0)
        throw ShapeError("autoencoder needs even frame dimensions");
    Tensor pix = nhwc_to_nchw(clip.frames());
    for (std::int64_t i = 0; i < pix.numel(); ++i) pix[i] = 2.0 * pix[i] - 1.0;
    return encode_graph(nn::constant(std::move(pix)))->value;
}

VideoClip ConvAutoencoder::decode(const Tensor& latent, double fps) const {
    Tensor pix = decode_graph(nn::constant(latent))->value;
    pix = nchw_to_nhwc(pix);
    for (std::int64_t i = 0; i < pix.numel(); ++i)
        pix[i] = std::clamp(0.5 * (pix[i] + 1.0), 0.0, 1.0);
    return VideoClip(std::move(pix), fps);
}

double ConvAutoencoder::train_step(const std::vector<VideoClip>& batch, double lr) {
    params_.sync_requires_grad();
    params_.zero_grads();
    Var loss;
    for (const auto& clip : batch) {
        Tensor pix = nhwc_to_nchw(clip.frames());
        for (std::int64_t i = 0; i < pix.numel(); ++i) pix[i] = 2.0 * pix[i] - 1.0;
        Var x = nn::constant(pix);
        Var rec = decode_graph(encode_graph(x));
        Var l = nn::mse(rec, x);
        loss = loss ? nn::add(loss, l) : l;
    }
    loss = nn::scale(loss, 1.0 / static_cast<double>(batch.size()));
    nn::backward(loss);

    auto& ps = params_.all();
    if (adam_m_.empty()) {
        for (auto& p : ps) {
            adam_m_.emplace_back(p.var->value.shape());
            adam_v_.emplace_back(p.var->value.shape());
        }
    }
    ++adam_step_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, adam_step_), bc2 = 1.0 - std::pow(b2, adam_step_);
    for (size_t i = 0; i < ps.size(); ++i) {
        if (ps[i].var->grad.numel() == 0) continue;
        Tensor& m = adam_m_[i];
        Tensor& v = adam_v_[i];
        Tensor& w = ps[i].var->value;
        const Tensor& g = ps[i].var->grad;
        for (std::int64_t j = 0; j < w.numel(); ++j) {
            m[j] = b1 * m[j] + (1 - b1) * g[j];
            v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
            w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
        }
    }
    return loss->value[0];
}

}  // namespace veggie
