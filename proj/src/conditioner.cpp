// SPDX-License-Identifier: Apache-2.0
#include "veggie/conditioner.hpp"

#include <cmath>

#include "veggie/errors.hpp"

namespace veggie {

using nn::Var;

namespace {

constexpr int kBos = 256;
constexpr int kSep = 257;

// seg ids
enum Segment { kSegFrame = 0, kSegText = 1, kSegRef = 2, kSegQuery = 3 };

Tensor sinusoid_row(int pos, int d) {
    Tensor t({d});
    for (int i = 0; i < d; ++i) {
        const double freq = std::pow(10000.0, -2.0 * (i / 2) / d);
        t[i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
    return t;
}

}  // namespace

nlohmann::json ConditionerConfig::to_json() const {
    nlohmann::json j{{"d_model", d_model},   {"d_cond", d_cond},
                     {"layers", layers},     {"heads", heads},
                     {"m", m},               {"vocab", vocab},
                     {"patch", patch},       {"max_text_len", max_text_len},
                     {"max_patches", max_patches}, {"ffn_mult", ffn_mult}};
    if (lora)
        j["lora"] = {{"rank", lora->rank}, {"alpha", lora->alpha}, {"dropout", lora->dropout}};
    return j;
}

ConditionerConfig ConditionerConfig::from_json(const nlohmann::json& j) {
    ConditionerConfig c;
    c.d_model = j.at("d_model");
    c.d_cond = j.at("d_cond");
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.m = j.at("m");
    c.vocab = j.at("vocab");
    c.patch = j.at("patch");
    c.max_text_len = j.at("max_text_len");
    c.max_patches = j.at("max_patches");
    c.ffn_mult = j.at("ffn_mult");
    if (j.contains("lora")) {
        LoraConfig l;
        l.rank = j["lora"].at("rank");
        l.alpha = j["lora"].at("alpha");
        l.dropout = j["lora"].at("dropout");
        c.lora = l;
    }
    return c;
}

Conditioner::Conditioner(ConditionerConfig cfg, Rng& init_rng) : cfg_(cfg) {
    if (cfg_.d_model <= 0 || cfg_.d_cond <= 0 || cfg_.m <= 0 || cfg_.layers <= 0 ||
        cfg_.heads <= 0 || cfg_.d_model % cfg_.heads != 0)
        throw ConfigError("bad conditioner config");
    const int d = cfg_.d_model;
    const double s = 0.02;
    auto W = [&](std::vector<int> shape) { return init_rng.normal_tensor(std::move(shape), s); };

    params_.add("encoder/tok_emb", W({cfg_.vocab, d}));
    params_.add("encoder/patch_w", W({cfg_.patch * cfg_.patch * 3, d}));
    params_.add("encoder/patch_b", Tensor({d}));
    params_.add("encoder/pos_patch", W({cfg_.max_patches, d}));
    params_.add("encoder/pos_text", W({cfg_.max_text_len, d}));
    params_.add("encoder/seg", W({4, d}));
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "encoder/l" + std::to_string(l) + "/";
        params_.add(p + "ln1_g", Tensor::full({d}, 1.0));
        params_.add(p + "ln1_b", Tensor({d}));
        for (const char* h : {"q", "k", "v", "o"}) {
            params_.add(p + h + "/w", W({d, d}));
            params_.add(p + h + "/b", Tensor({d}));
        }
        params_.add(p + "ln2_g", Tensor::full({d}, 1.0));
        params_.add(p + "ln2_b", Tensor({d}));
        params_.add(p + "ffn_w1", W({d, cfg_.ffn_mult * d}));
        params_.add(p + "ffn_b1", Tensor({cfg_.ffn_mult * d}));
        params_.add(p + "ffn_w2", W({cfg_.ffn_mult * d, d}));
        params_.add(p + "ffn_b2", Tensor({d}));
    }
    params_.add("encoder/ln_f_g", Tensor::full({d}, 1.0));
    params_.add("encoder/ln_f_b", Tensor({d}));
    params_.add("queries/emb", W({cfg_.m, d}));
    params_.add("queries/null", W({cfg_.m, cfg_.d_cond}));
    params_.add("align/w", W({d, cfg_.d_cond}));
    params_.add("align/b", Tensor({cfg_.d_cond}));
    params_.sync_requires_grad();
}

std::vector<int> Conditioner::tokenize(const std::string& text) const {
    std::vector<int> ids{kBos};
    for (unsigned char c : text) {
        if (static_cast<int>(ids.size()) >= cfg_.max_text_len - 1) break;
        ids.push_back(static_cast<int>(c));
    }
    ids.push_back(kSep);
    return ids;
}

Var Conditioner::projection(const std::string& base, const Var& x, bool training,
                            Rng& rng) const {
    Var y = nn::linear(x, params_.find(base + "/w"), params_.find(base + "/b"));
    if (cfg_.lora) {
        const std::string lname = "lora/" + base.substr(std::string("encoder/").size());
        if (params_.contains(lname + "/A")) {
            Var h = nn::dropout(x, cfg_.lora->dropout, training, rng);
            h = nn::linear(h, params_.find(lname + "/A"), nullptr);
            h = nn::linear(h, params_.find(lname + "/B"), nullptr);
            y = nn::add(y, nn::scale(h, cfg_.lora->alpha / cfg_.lora->rank));
        }
    }
    return y;
}

Var Conditioner::encoder_forward(const Var& tokens_in, bool training, Rng& rng) const {
    const int d = cfg_.d_model;
    const int heads = cfg_.heads;
    const int dh = d / heads;
    const int S = tokens_in->value.dim(0);
    Var x = tokens_in;
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "encoder/l" + std::to_string(l) + "/";
        Var h = nn::layer_norm(x, params_.find(p + "ln1_g"), params_.find(p + "ln1_b"));
        Var q = projection(p + "q", h, training, rng);
        Var k = projection(p + "k", h, training, rng);
        Var v = projection(p + "v", h, training, rng);
        // [S,d] -> [heads,S,dh]
        auto split = [&](const Var& t) {
            return nn::transpose(nn::reshape(t, {S, heads, dh}), 0, 1);
        };
        Var qh = split(q), kh = split(k), vh = split(v);
        Var scores = nn::scale(nn::bmm(qh, nn::transpose(kh, 1, 2)), 1.0 / std::sqrt(dh));
        Var attn = nn::softmax_lastdim(scores);
        Var ctx = nn::bmm(attn, vh);                              // [heads,S,dh]
        ctx = nn::reshape(nn::transpose(ctx, 0, 1), {S, d});      // [S,d]
        Var out = projection(p + "o", ctx, training, rng);
        x = nn::add(x, out);
        Var h2 = nn::layer_norm(x, params_.find(p + "ln2_g"), params_.find(p + "ln2_b"));
        h2 = nn::linear(h2, params_.find(p + "ffn_w1"), params_.find(p + "ffn_b1"));
        h2 = nn::silu(h2);
        h2 = nn::linear(h2, params_.find(p + "ffn_w2"), params_.find(p + "ffn_b2"));
        x = nn::add(x, h2);
    }
    return nn::layer_norm(x, params_.find("encoder/ln_f_g"), params_.find("encoder/ln_f_b"));
}

namespace {

/// Flattens patch pixels of one [H,W,C] frame into rows [P, patch*patch*3];
/// single-channel input is replicated to 3 channels.
Tensor extract_patches(const double* frame, int H, int W, int C, int patch) {
    const int ph = H / patch, pw = W / patch;
    const int P = ph * pw;
    const int psz = patch * patch * 3;
    Tensor rows({P, psz});
    for (int pi = 0; pi < ph; ++pi)
        for (int pj = 0; pj < pw; ++pj) {
            double* dst = rows.data() + static_cast<std::int64_t>(pi * pw + pj) * psz;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    for (int c = 0; c < 3; ++c) {
                        const int sc = (C == 3) ? c : 0;
                        dst[(y * patch + x) * 3 + c] =
                            frame[((static_cast<std::int64_t>(pi * patch + y)) * W +
                                   (pj * patch + x)) * C + sc];
                    }
        }
    return rows;
}

}  // namespace

Var Conditioner::encode_graph(const VideoClip& source, const std::string& instruction,
                              const std::vector<Tensor>& references, bool training,
                              Rng& rng) const {
    if (instruction.empty() && references.empty())
        throw EmptyCondition("need an instruction or at least one reference image");
    const int n = source.n(), H = source.height(), W = source.width(), C = source.channels();
    const int d = cfg_.d_model;
    if (H % cfg_.patch != 0 || W % cfg_.patch != 0)
        throw ShapeError("frame size not divisible by patch size");
    const int P = (H / cfg_.patch) * (W / cfg_.patch);
    if (P > cfg_.max_patches) throw ShapeError("too many patches per frame");

    Var seg = params_.find("encoder/seg");
    Var pos_patch = params_.find("encoder/pos_patch");
    std::vector<Var> groups;

    // frame patch tokens
    {
        const std::int64_t fsz = static_cast<std::int64_t>(H) * W * C;
        std::vector<Var> rows;
        for (int f = 0; f < n; ++f) {
            Tensor patches = extract_patches(source.frames().data() + f * fsz, H, W, C, cfg_.patch);
            Var emb = nn::linear(nn::constant(std::move(patches)), params_.find("encoder/patch_w"),
                                 params_.find("encoder/patch_b"));
            emb = nn::add(emb, nn::slice(pos_patch, 0, 0, P));
            Tensor fpos({P, d});
            Tensor row = sinusoid_row(f, d);
            for (int p = 0; p < P; ++p) std::copy_n(row.data(), d, fpos.data() + static_cast<std::int64_t>(p) * d);
            emb = nn::add(emb, nn::constant(std::move(fpos)));
            rows.push_back(emb);
        }
        Var frames = (rows.size() == 1) ? rows[0] : nn::concat(rows, 0);
        Tensor segrow({n * P, d});
        for (int r = 0; r < n * P; ++r)
            std::copy_n(seg->value.data() + kSegFrame * d, d, segrow.data() + static_cast<std::int64_t>(r) * d);
        groups.push_back(nn::add(frames, nn::constant(std::move(segrow))));
    }

    // text tokens
    {
        std::vector<int> ids = tokenize(instruction);
        const int T = static_cast<int>(ids.size());
        Var emb = nn::embedding(params_.find("encoder/tok_emb"), ids);
        emb = nn::add(emb, nn::slice(params_.find("encoder/pos_text"), 0, 0, T));
        Tensor segrow({T, d});
        for (int r = 0; r < T; ++r)
            std::copy_n(seg->value.data() + kSegText * d, d, segrow.data() + static_cast<std::int64_t>(r) * d);
        groups.push_back(nn::add(emb, nn::constant(std::move(segrow))));
    }

    // reference image patch tokens
    for (size_t r = 0; r < references.size(); ++r) {
        const Tensor& img = references[r];
        if (img.ndim() != 3) throw ShapeError("reference images must be [H,W,C]");
        const int rh = img.dim(0), rw = img.dim(1), rc = img.dim(2);
        if (rh % cfg_.patch != 0 || rw % cfg_.patch != 0)
            throw ShapeError("reference size not divisible by patch size");
        const int RP = (rh / cfg_.patch) * (rw / cfg_.patch);
        if (RP > cfg_.max_patches) throw ShapeError("too many reference patches");
        Tensor patches = extract_patches(img.data(), rh, rw, rc, cfg_.patch);
        Var emb = nn::linear(nn::constant(std::move(patches)), params_.find("encoder/patch_w"),
                             params_.find("encoder/patch_b"));
        emb = nn::add(emb, nn::slice(pos_patch, 0, 0, RP));
        Tensor extra({RP, d});
        Tensor row = sinusoid_row(static_cast<int>(r), d);
        for (int p = 0; p < RP; ++p) {
            double* dst = extra.data() + static_cast<std::int64_t>(p) * d;
            for (int j = 0; j < d; ++j) dst[j] = row[j] + seg->value[kSegRef * d + j];
        }
        groups.push_back(nn::add(emb, nn::constant(std::move(extra))));
    }

    // per-frame query tokens, appended last so their states are easy to slice
    {
        std::vector<Var> rows;
        Var qemb = params_.find("queries/emb");
        for (int f = 0; f < n; ++f) {
            Tensor extra({cfg_.m, d});
            Tensor row = sinusoid_row(f, d);
            for (int p = 0; p < cfg_.m; ++p) {
                double* dst = extra.data() + static_cast<std::int64_t>(p) * d;
                for (int j = 0; j < d; ++j) dst[j] = row[j] + seg->value[kSegQuery * d + j];
            }
            rows.push_back(nn::add(qemb, nn::constant(std::move(extra))));
        }
        groups.push_back(rows.size() == 1 ? rows[0] : nn::concat(rows, 0));
    }

    Var x = nn::concat(groups, 0);
    Var states = encoder_forward(x, training, rng);
    const int S = states->value.dim(0);
    Var qstates = nn::slice(states, 0, S - n * cfg_.m, n * cfg_.m);
    Var cond = nn::linear(qstates, params_.find("align/w"), params_.find("align/b"));
    return nn::reshape(cond, {n, cfg_.m, cfg_.d_cond});
}

GroundedTaskQueries Conditioner::encode(const VideoClip& source, const std::string& instruction,
                                        const std::vector<Tensor>& references) const {
    Rng rng(0);
    Var out = encode_graph(source, instruction, references, /*training=*/false, rng);
    return GroundedTaskQueries{out->value};
}

Var Conditioner::null_condition_graph(int n) const {
    if (n < 1) throw ShapeError("null_condition: n must be >= 1");
    Var nt = nn::reshape(params_.find("queries/null"), {1, cfg_.m, cfg_.d_cond});
    if (n == 1) return nt;
    std::vector<Var> reps(static_cast<size_t>(n), nt);
    return nn::concat(reps, 0);
}

GroundedTaskQueries Conditioner::null_condition(int n) const {
    return GroundedTaskQueries{null_condition_graph(n)->value};
}

void Conditioner::apply_lora(const LoraConfig& lcfg, Rng& init_rng) {
    if (cfg_.lora) throw AlreadyAdapted("LoRA modules already inserted");
    if (lcfg.rank < 1 || lcfg.dropout < 0 || lcfg.dropout >= 1)
        throw ConfigError("bad LoRA config");
    const int d = cfg_.d_model;
    for (int l = 0; l < cfg_.layers; ++l)
        for (const char* h : {"q", "k", "v", "o"}) {
            const std::string base = "lora/l" + std::to_string(l) + "/" + h;
            params_.add(base + "/A", init_rng.normal_tensor({d, lcfg.rank}, 0.02));
            params_.add(base + "/B", Tensor({lcfg.rank, d}));  // zero init: no-op at insertion
        }
    cfg_.lora = lcfg;
    params_.set_all_trainable(false);
    params_.set_trainable_by_prefix({"lora/", "queries/", "align/"}, true);
    params_.sync_requires_grad();
}

}  // namespace veggie
