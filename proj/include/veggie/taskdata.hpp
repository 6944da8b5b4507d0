// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "veggie/media.hpp"
#include "veggie/rng.hpp"

namespace veggie {

enum class ShapeKind { square, circle, triangle };

const char* shape_kind_name(ShapeKind k);

struct PaletteColor {
    const char* name;
    std::array<double, 3> rgb;
};

/// Shape colors (greens excluded so fill recovery stays unambiguous).
const std::vector<PaletteColor>& shape_palette();
const std::vector<PaletteColor>& background_palette();

/// One moving shape: linear trajectory of the center, half-extent `half`.
struct ShapeSpec {
    ShapeKind kind = ShapeKind::square;
    int color_index = 0;  // into shape_palette()
    double half = 4.0;
    double cx = 0, cy = 0;  // center at frame 0
    double vx = 0, vy = 0;  // px / frame
};

struct ShapeScene {
    std::vector<ShapeSpec> shapes;
    int bg_index = 0;  // into background_palette()
    int H = 32, W = 32, n = 8;
    double fps = 8.0;
};

struct SceneConfig {
    int H = 32, W = 32, n = 8;
    int min_shapes = 1, max_shapes = 3;
    double fps = 8.0;
    bool allow_removal = true;  // scene-level knob for the removal skill
};

/// Color-filling reformulation of grounding: paint the referred region with
/// one fixed color recoverable under a per-channel tolerance.
struct FillSpec {
    std::array<double, 3> fill_color{0.0, 1.0, 0.0};  // pure green
    double tolerance = 60.0 / 255.0;
};

/// True where shape `i` covers (x, y) at frame t (ignoring occlusion).
bool shape_covers(const ShapeSpec& s, int t, int x, int y);

/// Rasterizes the scene; shapes later in the list draw on top.
VideoClip render_scene(const ShapeScene& scene);

/// Visible footprint of one shape (occlusion-aware).
MaskVideo render_shape_mask(const ShapeScene& scene, size_t shape_index);

/// Random scene with distinct colors and sizes; every shape stays inside the
/// canvas over all n frames.
ShapeScene random_scene(Rng& rng, const SceneConfig& cfg);

/// Complete (source, instruction, target, mask) tuple for one skill, drawn
/// from >= 8 instruction paraphrases per skill.
InstructionSample generate_sample(Rng& rng, Skill skill, const SceneConfig& cfg = {},
                                  const FillSpec& fill = {});

/// Argmax resolver for the indirect reasoning templates (0=fastest, 1=largest,
/// 2=slowest, 3=smallest, 4=leftmost, 5=rightmost, 6=topmost, 7=bottommost);
/// throws GenerationError on ties.
size_t reasoning_referent(const ShapeScene& scene, int template_index);

VideoClip mask_to_fill(const VideoClip& clip, const MaskVideo& mask, const FillSpec& spec);
MaskVideo fill_to_mask(const VideoClip& generated, const FillSpec& spec);

/// Uniform skill draw (exposed so its marginals can be tested directly).
Skill pick_skill(Rng& rng, const std::vector<Skill>& skills);

/// Renders `count` samples to PNG directories under `out_dir` and writes
/// out_dir/manifest.json; returns the manifest.
DatasetManifest generate_toy_dataset(std::uint64_t seed, const std::vector<Skill>& skills,
                                     int count, const std::string& out_dir,
                                     const SceneConfig& cfg = {}, const FillSpec& fill = {});

}  // namespace veggie
