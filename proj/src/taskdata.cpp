// SPDX-License-Identifier: Apache-2.0
#include "veggie/taskdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "veggie/errors.hpp"

namespace veggie {

const char* shape_kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::square: return "square";
        case ShapeKind::circle: return "circle";
        case ShapeKind::triangle: return "triangle";
    }
    return "square";
}

const std::vector<PaletteColor>& shape_palette() {
    // every entry sits >= 96/255 from pure green on at least one channel
    static const std::vector<PaletteColor> p{
        {"red", {0.86, 0.08, 0.24}},     {"blue", {0.10, 0.20, 0.90}},
        {"yellow", {0.95, 0.80, 0.10}},  {"magenta", {0.90, 0.10, 0.85}},
        {"orange", {1.00, 0.55, 0.10}},  {"purple", {0.55, 0.15, 0.85}},
        {"white", {0.95, 0.95, 0.95}},   {"gray", {0.20, 0.20, 0.25}},
        {"brown", {0.55, 0.30, 0.10}},
    };
    return p;
}

const std::vector<PaletteColor>& background_palette() {
    static const std::vector<PaletteColor> p{
        {"black", {0.05, 0.05, 0.07}},    {"beige", {0.90, 0.85, 0.70}},
        {"dark blue", {0.10, 0.10, 0.35}}, {"maroon", {0.40, 0.10, 0.10}},
        {"slate", {0.30, 0.35, 0.40}},    {"off-white", {0.93, 0.93, 0.88}},
    };
    return p;
}

bool shape_covers(const ShapeSpec& s, int t, int x, int y) {
    const double cx = s.cx + s.vx * t, cy = s.cy + s.vy * t;
    const double dx = x - cx, dy = y - cy;
    switch (s.kind) {
        case ShapeKind::square:
            return std::fabs(dx) <= s.half && std::fabs(dy) <= s.half;
        case ShapeKind::circle:
            return dx * dx + dy * dy <= s.half * s.half;
        case ShapeKind::triangle: {
            // apex up: width grows linearly from the top vertex
            const double down = dy + s.half;  // 0 at apex, 2*half at base
            return down >= 0.0 && down <= 2.0 * s.half && std::fabs(dx) <= down / 2.0;
        }
    }
    return false;
}

namespace {

int topmost_shape(const ShapeScene& scene, int t, int x, int y) {
    for (int i = static_cast<int>(scene.shapes.size()) - 1; i >= 0; --i)
        if (shape_covers(scene.shapes[static_cast<size_t>(i)], t, x, y)) return i;
    return -1;
}

std::string replaced(std::string s, const std::string& key, const std::string& val) {
    const auto pos = s.find(key);
    if (pos != std::string::npos) s.replace(pos, key.size(), val);
    return s;
}

std::string shape_phrase(const ShapeSpec& s) {
    return std::string(shape_palette()[static_cast<size_t>(s.color_index)].name) + " " +
           shape_kind_name(s.kind);
}

const std::vector<std::string>& templates(Skill skill) {
    static const std::vector<std::string> addition{
        "add a {new} to the scene",         "place a {new} somewhere in the video",
        "insert a {new} into the clip",     "put a {new} in the frame",
        "draw a {new} in the video",        "a {new} should appear in the scene",
        "include a {new} in the footage",   "make a {new} show up in the video"};
    static const std::vector<std::string> removal{
        "remove the {shape}",               "delete the {shape}",
        "erase the {shape} from the video", "take the {shape} out of the scene",
        "get rid of the {shape}",           "make the {shape} disappear",
        "the {shape} should be gone",       "wipe the {shape} from the clip"};
    static const std::vector<std::string> object_change{
        "turn the {shape} into a {kind2}",    "replace the {shape} with a {kind2}",
        "change the {shape} into a {kind2}",  "swap the {shape} for a {kind2}",
        "morph the {shape} into a {kind2}",   "the {shape} should become a {kind2}",
        "convert the {shape} to a {kind2}",   "make the {shape} a {kind2} instead"};
    static const std::vector<std::string> env_change{
        "change the background to {bg}",      "make the backdrop {bg}",
        "recolor the background {bg}",        "the background should be {bg}",
        "set the scene background to {bg}",   "paint the backdrop {bg}",
        "switch the background color to {bg}", "give the scene a {bg} background"};
    static const std::vector<std::string> visual_feature{
        "recolor the {shape} to {color2}",  "make the {shape} {color2}",
        "paint the {shape} {color2}",       "turn the {shape} {color2}",
        "change the color of the {shape} to {color2}",
        "the {shape} should be {color2}",   "tint the {shape} {color2}",
        "give the {shape} a {color2} color"};
    static const std::vector<std::string> stylization{
        "apply a {style} style to the video", "stylize the clip in {style}",
        "render the video with a {style} look", "give the footage a {style} treatment",
        "convert the video to {style}",       "make the whole video look {style}",
        "restyle the clip as {style}",        "use a {style} filter on the video"};
    static const std::vector<std::string> grounding{
        "fill the {shape} with green",      "segment the {shape} by painting it green",
        "highlight the {shape} in green",   "mark the {shape} with solid green",
        "color the {shape} pure green",     "cover the {shape} in green",
        "paint over the {shape} with green", "flood the {shape} with green"};
    static const std::vector<std::string> reasoning{
        "which shape is moving fastest? fill it with green",
        "find the largest shape and paint it green",
        "fill the slowest shape with green",
        "which shape is smallest? color it green",
        "paint the leftmost shape green",
        "fill the rightmost shape with green",
        "the shape closest to the top should be filled with green",
        "color the shape nearest the bottom green"};
    switch (skill) {
        case Skill::addition: return addition;
        case Skill::removal: return removal;
        case Skill::object_change: return object_change;
        case Skill::env_change: return env_change;
        case Skill::visual_feature: return visual_feature;
        case Skill::stylization: return stylization;
        case Skill::grounding: return grounding;
        case Skill::reasoning: return reasoning;
    }
    return addition;
}

ShapeSpec random_shape(Rng& rng, const SceneConfig& cfg, double half) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
    s.half = half;
    for (int attempt = 0;; ++attempt) {
        if (attempt > 200) throw GenerationError("cannot place shape inside the canvas");
        s.vx = rng.uniform(-1.5, 1.5);
        s.vy = rng.uniform(-1.5, 1.5);
        const double dx = s.vx * (cfg.n - 1), dy = s.vy * (cfg.n - 1);
        const double xlo = s.half - std::min(0.0, dx), xhi = cfg.W - 1 - s.half - std::max(0.0, dx);
        const double ylo = s.half - std::min(0.0, dy), yhi = cfg.H - 1 - s.half - std::max(0.0, dy);
        if (xlo > xhi || ylo > yhi) continue;
        s.cx = rng.uniform(xlo, xhi);
        s.cy = rng.uniform(ylo, yhi);
        return s;
    }
}

VideoClip stylize(const VideoClip& src, bool invert) {
    Tensor out = src.frames();
    if (invert) {
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 - out[i];
    } else {  // sepia
        for (std::int64_t i = 0; i < out.numel(); i += 3) {
            const double r = out[i], g = out[i + 1], b = out[i + 2];
            out[i] = std::min(1.0, 0.393 * r + 0.769 * g + 0.189 * b);
            out[i + 1] = std::min(1.0, 0.349 * r + 0.686 * g + 0.168 * b);
            out[i + 2] = std::min(1.0, 0.272 * r + 0.534 * g + 0.131 * b);
        }
    }
    return VideoClip(std::move(out), src.fps());
}

}  // namespace

size_t reasoning_referent(const ShapeScene& scene, int property) {
    auto value = [&](const ShapeSpec& s) -> double {
        switch (property) {
            case 0: return std::hypot(s.vx, s.vy);   // fastest
            case 1: return s.half;                   // largest
            case 2: return -std::hypot(s.vx, s.vy);  // slowest
            case 3: return -s.half;                  // smallest
            case 4: return -s.cx;                    // leftmost
            case 5: return s.cx;                     // rightmost
            case 6: return -s.cy;                    // closest to the top
            case 7: return s.cy;                     // nearest the bottom
        }
        return 0.0;
    };
    size_t best = 0;
    for (size_t i = 1; i < scene.shapes.size(); ++i)
        if (value(scene.shapes[i]) > value(scene.shapes[best])) best = i;
    for (size_t i = 0; i < scene.shapes.size(); ++i)
        if (i != best && std::fabs(value(scene.shapes[i]) - value(scene.shapes[best])) < 1e-9)
            throw GenerationError("ambiguous reasoning referent");
    return best;
}

VideoClip render_scene(const ShapeScene& scene) {
    const auto& bg = background_palette()[static_cast<size_t>(scene.bg_index)].rgb;
    Tensor frames({scene.n, scene.H, scene.W, 3});
    for (int t = 0; t < scene.n; ++t)
        for (int y = 0; y < scene.H; ++y)
            for (int x = 0; x < scene.W; ++x) {
                const int s = topmost_shape(scene, t, x, y);
                const auto& c =
                    s >= 0 ? shape_palette()[static_cast<size_t>(
                                                 scene.shapes[static_cast<size_t>(s)].color_index)]
                                 .rgb
                           : bg;
                for (int ch = 0; ch < 3; ++ch) frames.at({t, y, x, ch}) = c[static_cast<size_t>(ch)];
            }
    return VideoClip(std::move(frames), scene.fps);
}

MaskVideo render_shape_mask(const ShapeScene& scene, size_t shape_index) {
    Tensor m({scene.n, scene.H, scene.W});
    for (int t = 0; t < scene.n; ++t)
        for (int y = 0; y < scene.H; ++y)
            for (int x = 0; x < scene.W; ++x)
                if (topmost_shape(scene, t, x, y) == static_cast<int>(shape_index))
                    m.at({t, y, x}) = 1.0;
    return MaskVideo(std::move(m));
}

ShapeScene random_scene(Rng& rng, const SceneConfig& cfg) {
    if (cfg.min_shapes < 1 || cfg.max_shapes < cfg.min_shapes)
        throw ConfigError("scene needs 1 <= min_shapes <= max_shapes");
    static const double kHalves[] = {3.0, 3.5, 4.0, 4.5, 5.0, 5.5};
    const int k = static_cast<int>(rng.uniform_int(cfg.min_shapes, cfg.max_shapes));
    if (k > 6 || k > static_cast<int>(shape_palette().size()))
        throw ConfigError("too many shapes for distinct colors/sizes");

    ShapeScene scene;
    scene.H = cfg.H;
    scene.W = cfg.W;
    scene.n = cfg.n;
    scene.fps = cfg.fps;
    scene.bg_index = static_cast<int>(
        rng.uniform_int(0, static_cast<std::int64_t>(background_palette().size()) - 1));

    // distinct colors and sizes keep referring phrases and superlatives unique
    std::vector<int> colors(shape_palette().size());
    for (size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<int>(i);
    for (size_t i = colors.size(); i > 1; --i)
        std::swap(colors[i - 1], colors[static_cast<size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    std::vector<double> halves(std::begin(kHalves), std::end(kHalves));
    for (size_t i = halves.size(); i > 1; --i)
        std::swap(halves[i - 1], halves[static_cast<size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    for (int i = 0; i < k; ++i) {
        ShapeSpec s = random_shape(rng, cfg, halves[static_cast<size_t>(i)]);
        s.color_index = colors[static_cast<size_t>(i)];
        scene.shapes.push_back(s);
    }
    return scene;
}

VideoClip mask_to_fill(const VideoClip& clip, const MaskVideo& mask, const FillSpec& spec) {
    if (clip.n() != mask.n() || clip.height() != mask.height() || clip.width() != mask.width())
        throw ShapeError("mask dimensions must match the clip");
    VideoClip out = clip;
    for (int t = 0; t < clip.n(); ++t)
        for (int y = 0; y < clip.height(); ++y)
            for (int x = 0; x < clip.width(); ++x)
                if (mask.value(t, y, x) != 0.0)
                    for (int c = 0; c < clip.channels(); ++c)
                        out.pixel(t, y, x, c) = spec.fill_color[static_cast<size_t>(c % 3)];
    return out;
}

MaskVideo fill_to_mask(const VideoClip& generated, const FillSpec& spec) {
    Tensor m({generated.n(), generated.height(), generated.width()});
    for (int t = 0; t < generated.n(); ++t)
        for (int y = 0; y < generated.height(); ++y)
            for (int x = 0; x < generated.width(); ++x) {
                bool hit = true;
                for (int c = 0; c < generated.channels(); ++c)
                    hit = hit && std::fabs(generated.pixel(t, y, x, c) -
                                           spec.fill_color[static_cast<size_t>(c % 3)]) <=
                                     spec.tolerance;
                if (hit) m.at({t, y, x}) = 1.0;
            }
    return MaskVideo(std::move(m));
}

InstructionSample generate_sample(Rng& rng, Skill skill, const SceneConfig& cfg,
                                  const FillSpec& fill) {
    const auto& tpl = templates(skill);
    const int tidx = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(tpl.size()) - 1));

    for (int attempt = 0; attempt < 64; ++attempt) {
        ShapeScene scene = random_scene(rng, cfg);
        const size_t ref = static_cast<size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(scene.shapes.size()) - 1));

        InstructionSample out;
        out.skill = skill;
        out.source = render_scene(scene);

        switch (skill) {
            case Skill::addition: {
                ShapeScene target = scene;
                ShapeSpec extra = random_shape(rng, cfg, 4.25);
                extra.color_index = static_cast<int>(
                    rng.uniform_int(0, static_cast<std::int64_t>(shape_palette().size()) - 1));
                target.shapes.push_back(extra);
                out.instruction = replaced(tpl[static_cast<size_t>(tidx)], "{new}",
                                           shape_phrase(extra));
                out.target = render_scene(target);
                return out;
            }
            case Skill::removal: {
                if (!cfg.allow_removal)
                    throw GenerationError("scene shapes are marked non-removable");
                ShapeScene target = scene;
                target.shapes.erase(target.shapes.begin() + static_cast<std::ptrdiff_t>(ref));
                out.instruction = replaced(tpl[static_cast<size_t>(tidx)], "{shape}",
                                           shape_phrase(scene.shapes[ref]));
                out.target = render_scene(target);
                return out;
            }
            case Skill::object_change: {
                ShapeScene target = scene;
                ShapeKind nk;
                do {
                    nk = static_cast<ShapeKind>(rng.uniform_int(0, 2));
                } while (nk == scene.shapes[ref].kind);
                target.shapes[ref].kind = nk;
                std::string instr = replaced(tpl[static_cast<size_t>(tidx)], "{shape}",
                                             shape_phrase(scene.shapes[ref]));
                out.instruction = replaced(std::move(instr), "{kind2}", shape_kind_name(nk));
                out.target = render_scene(target);
                return out;
            }
            case Skill::env_change: {
                ShapeScene target = scene;
                int nb;
                do {
                    nb = static_cast<int>(rng.uniform_int(
                        0, static_cast<std::int64_t>(background_palette().size()) - 1));
                } while (nb == scene.bg_index);
                target.bg_index = nb;
                out.instruction =
                    replaced(tpl[static_cast<size_t>(tidx)], "{bg}",
                             background_palette()[static_cast<size_t>(nb)].name);
                out.target = render_scene(target);
                return out;
            }
            case Skill::visual_feature: {
                ShapeScene target = scene;
                bool used[16] = {};
                for (const auto& s : scene.shapes) used[s.color_index] = true;
                int nc;
                do {
                    nc = static_cast<int>(rng.uniform_int(
                        0, static_cast<std::int64_t>(shape_palette().size()) - 1));
                } while (used[nc]);
                target.shapes[ref].color_index = nc;
                std::string instr = replaced(tpl[static_cast<size_t>(tidx)], "{shape}",
                                             shape_phrase(scene.shapes[ref]));
                out.instruction = replaced(std::move(instr), "{color2}",
                                           shape_palette()[static_cast<size_t>(nc)].name);
                out.target = render_scene(target);
                return out;
            }
            case Skill::stylization: {
                const bool invert = rng.uniform_int(0, 1) == 1;
                out.instruction = replaced(tpl[static_cast<size_t>(tidx)], "{style}",
                                           invert ? "inverted" : "sepia");
                out.target = stylize(out.source, invert);
                return out;
            }
            case Skill::grounding: {
                MaskVideo mask = render_shape_mask(scene, ref);
                out.instruction = replaced(tpl[static_cast<size_t>(tidx)], "{shape}",
                                           shape_phrase(scene.shapes[ref]));
                out.target = mask_to_fill(out.source, mask, fill);
                out.gt_mask = std::move(mask);
                return out;
            }
            case Skill::reasoning: {
                size_t target_ref;
                try {
                    target_ref = reasoning_referent(scene, tidx);
                } catch (const GenerationError&) {
                    continue;  // tie: draw a fresh scene
                }
                MaskVideo mask = render_shape_mask(scene, target_ref);
                out.instruction = tpl[static_cast<size_t>(tidx)];
                out.target = mask_to_fill(out.source, mask, fill);
                out.gt_mask = std::move(mask);
                return out;
            }
        }
    }
    throw GenerationError("could not draw an unambiguous scene");
}

Skill pick_skill(Rng& rng, const std::vector<Skill>& skills) {
    if (skills.empty()) throw ConfigError("empty skill list");
    return skills[static_cast<size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(skills.size()) - 1))];
}

DatasetManifest generate_toy_dataset(std::uint64_t seed, const std::vector<Skill>& skills,
                                     int count, const std::string& out_dir,
                                     const SceneConfig& cfg, const FillSpec& fill) {
    if (count < 1) throw ConfigError("count must be positive");
    std::filesystem::create_directories(out_dir);
    Rng rng(seed, 7);
    DatasetManifest man;
    for (int i = 0; i < count; ++i) {
        const Skill skill = pick_skill(rng, skills);
        InstructionSample s = generate_sample(rng, skill, cfg, fill);
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "s%05d_%s", i, skill_name(skill));
        ManifestRecord rec;
        rec.id = idbuf;
        rec.skill = skill;
        rec.instruction = s.instruction;
        rec.source_dir = rec.id + "/src";
        rec.target_dir = rec.id + "/tgt";
        rec.provenance = "toy-generator";
        save_clip(s.source, out_dir + "/" + rec.source_dir);
        save_clip(*s.target, out_dir + "/" + *rec.target_dir);
        if (s.gt_mask) {
            rec.mask_dir = rec.id + "/mask";
            save_mask(*s.gt_mask, out_dir + "/" + *rec.mask_dir);
        }
        man.records.push_back(std::move(rec));
    }
    man.save(out_dir + "/manifest.json");
    return man;
}

}  // namespace veggie
