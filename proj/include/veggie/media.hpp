// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "veggie/tensor.hpp"

namespace veggie {

/// A video held as an n x H x W x C tensor of intensities in [0,1].
/// 8-bit quantization happens only at the file boundary.
class VideoClip {
public:
    VideoClip() = default;
    VideoClip(Tensor frames, double fps);

    const Tensor& frames() const { return frames_; }
    Tensor& frames() { return frames_; }
    double fps() const { return fps_; }

    int n() const { return frames_.dim(0); }
    int height() const { return frames_.dim(1); }
    int width() const { return frames_.dim(2); }
    int channels() const { return frames_.dim(3); }

    double pixel(int f, int y, int x, int c) const { return frames_.at({f, y, x, c}); }
    double& pixel(int f, int y, int x, int c) { return frames_.at({f, y, x, c}); }

private:
    Tensor frames_;  // [n,H,W,C]
    double fps_ = 8.0;
};

/// Binary per-frame masks paired with a clip (same n,H,W).
class MaskVideo {
public:
    MaskVideo() = default;
    explicit MaskVideo(Tensor masks);  // [n,H,W], values in {0,1}

    const Tensor& masks() const { return masks_; }
    int n() const { return masks_.dim(0); }
    int height() const { return masks_.dim(1); }
    int width() const { return masks_.dim(2); }

    double value(int f, int y, int x) const { return masks_.at({f, y, x}); }
    double& value(int f, int y, int x) { return masks_.at({f, y, x}); }

private:
    Tensor masks_;
};

enum class Skill {
    addition,
    removal,
    object_change,
    env_change,
    visual_feature,
    stylization,
    grounding,
    reasoning,
};

constexpr int kNumSkills = 8;

const char* skill_name(Skill s);
Skill skill_from_name(const std::string& name);
bool skill_needs_mask(Skill s);

/// One training / evaluation record.
struct InstructionSample {
    VideoClip source;
    std::string instruction;
    std::vector<Tensor> references;  // [H,W,C] images, possibly empty
    std::optional<VideoClip> target;
    std::optional<MaskVideo> gt_mask;
    Skill skill = Skill::addition;
};

struct ManifestRecord {
    std::string id;
    Skill skill = Skill::addition;
    std::string instruction;
    std::string source_dir;
    std::optional<std::string> target_dir;
    std::optional<std::string> mask_dir;
    std::string provenance;
};

struct DatasetManifest {
    std::string version = "veggie-manifest/1";
    std::vector<ManifestRecord> records;

    static DatasetManifest load(const std::string& path);
    void save(const std::string& path) const;
    /// Loads the media a record points at (relative dirs resolved against base).
    InstructionSample load_sample(const ManifestRecord& rec, const std::string& base) const;
};

/// Reads frame_00000.png ... from a directory plus its meta.json.
VideoClip load_clip(const std::string& dir_path);
void save_clip(const VideoClip& clip, const std::string& dir_path);

MaskVideo load_mask(const std::string& dir_path);
void save_mask(const MaskVideo& mask, const std::string& dir_path);

/// Frames at round(i*(n-1)/(k-1)) for i in [0,k); [0] when k=1.
VideoClip sample_frames_uniform(const VideoClip& clip, int k);
std::vector<int> uniform_frame_indices(int n, int k);

}  // namespace veggie
