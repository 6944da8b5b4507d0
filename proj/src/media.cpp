// SPDX-License-Identifier: Apache-2.0
#include "veggie/media.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "veggie/errors.hpp"
#include "veggie/png_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace veggie {

VideoClip::VideoClip(Tensor frames, double fps) : frames_(std::move(frames)), fps_(fps) {
    if (frames_.ndim() != 4) throw DimensionMismatch("VideoClip expects [n,H,W,C]");
    const int n = frames_.dim(0), C = frames_.dim(3);
    if (n < 1) throw DimensionMismatch("VideoClip needs at least one frame");
    if (C != 1 && C != 3) throw DimensionMismatch("VideoClip channels must be 1 or 3");
    if (!(fps_ > 0)) throw DimensionMismatch("VideoClip fps must be positive");
    for (std::int64_t i = 0; i < frames_.numel(); ++i)
        if (!(frames_[i] >= 0.0 && frames_[i] <= 1.0))
            throw DimensionMismatch("VideoClip intensities must lie in [0,1]");
}

MaskVideo::MaskVideo(Tensor masks) : masks_(std::move(masks)) {
    if (masks_.ndim() != 3) throw DimensionMismatch("MaskVideo expects [n,H,W]");
    for (std::int64_t i = 0; i < masks_.numel(); ++i)
        if (masks_[i] != 0.0 && masks_[i] != 1.0)
            throw DimensionMismatch("MaskVideo values must be 0 or 1");
}

namespace {

const char* kSkillNames[kNumSkills] = {
    "addition",  "removal",       "object_change", "env_change",
    "visual_feature", "stylization", "grounding",     "reasoning",
};

std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.png", i);
    return buf;
}

}  // namespace

const char* skill_name(Skill s) { return kSkillNames[static_cast<int>(s)]; }

Skill skill_from_name(const std::string& name) {
    for (int i = 0; i < kNumSkills; ++i)
        if (name == kSkillNames[i]) return static_cast<Skill>(i);
    throw ManifestError("unknown skill tag '" + name + "'");
}

bool skill_needs_mask(Skill s) { return s == Skill::grounding || s == Skill::reasoning; }

VideoClip load_clip(const std::string& dir_path) {
    if (!fs::is_directory(dir_path)) throw IoError("not a directory: " + dir_path);
    // Count available frames, then insist the indices are gapless from 0.
    int max_idx = -1;
    for (const auto& e : fs::directory_iterator(dir_path)) {
        const std::string name = e.path().filename().string();
        int idx = 0;
        if (std::sscanf(name.c_str(), "frame_%5d.png", &idx) == 1) max_idx = std::max(max_idx, idx);
    }
    if (max_idx < 0) throw MissingFrame("no frames in " + dir_path);
    const int n = max_idx + 1;
    Tensor frames;
    int H = 0, W = 0, C = 0;
    for (int i = 0; i < n; ++i) {
        const fs::path p = fs::path(dir_path) / frame_name(i);
        if (!fs::exists(p)) throw MissingFrame("index=" + std::to_string(i) + " in " + dir_path);
        png::Image img = png::read_file(p.string());
        if (i == 0) {
            H = img.height;
            W = img.width;
            C = img.channels;
            frames = Tensor({n, H, W, C});
        } else if (img.height != H || img.width != W || img.channels != C) {
            throw DimensionMismatch("frame " + std::to_string(i) + " differs in size");
        }
        double* dst = frames.data() + static_cast<std::int64_t>(i) * H * W * C;
        for (size_t k = 0; k < img.pixels.size(); ++k) dst[k] = img.pixels[k] / 255.0;
    }
    double fps = 8.0;
    const fs::path meta = fs::path(dir_path) / "meta.json";
    if (fs::exists(meta)) {
        std::ifstream f(meta);
        json j = json::parse(f);
        fps = j.value("fps", 8.0);
    }
    return VideoClip(std::move(frames), fps);
}

void save_clip(const VideoClip& clip, const std::string& dir_path) {
    std::error_code ec;
    fs::create_directories(dir_path, ec);
    if (ec) throw IoError("cannot create " + dir_path);
    const int n = clip.n(), H = clip.height(), W = clip.width(), C = clip.channels();
    for (int i = 0; i < n; ++i) {
        png::Image img;
        img.height = H;
        img.width = W;
        img.channels = C;
        img.pixels.resize(static_cast<size_t>(H) * W * C);
        const double* src = clip.frames().data() + static_cast<std::int64_t>(i) * H * W * C;
        for (size_t k = 0; k < img.pixels.size(); ++k)
            img.pixels[k] = static_cast<std::uint8_t>(std::lround(src[k] * 255.0));
        png::write_file((fs::path(dir_path) / frame_name(i)).string(), img);
    }
    json meta{{"n", n}, {"H", H}, {"W", W}, {"C", C}, {"fps", clip.fps()}};
    std::ofstream f(fs::path(dir_path) / "meta.json", std::ios::trunc);
    if (!f) throw IoError("cannot write meta.json in " + dir_path);
    f << meta.dump(2) << "\n";
}

MaskVideo load_mask(const std::string& dir_path) {
    VideoClip clip = load_clip(dir_path);
    Tensor m({clip.n(), clip.height(), clip.width()});
    for (int f = 0; f < clip.n(); ++f)
        for (int y = 0; y < clip.height(); ++y)
            for (int x = 0; x < clip.width(); ++x)
                m.at({f, y, x}) = clip.pixel(f, y, x, 0) > 0.5 ? 1.0 : 0.0;
    return MaskVideo(std::move(m));
}

void save_mask(const MaskVideo& mask, const std::string& dir_path) {
    Tensor frames({mask.n(), mask.height(), mask.width(), 1});
    for (std::int64_t i = 0; i < mask.masks().numel(); ++i) frames[i] = mask.masks()[i];
    save_clip(VideoClip(std::move(frames), 8.0), dir_path);
}

std::vector<int> uniform_frame_indices(int n, int k) {
    if (k < 1 || k > n) throw InvalidSampleCount("k=" + std::to_string(k) + " n=" + std::to_string(n));
    std::vector<int> idx;
    if (k == 1) return {0};
    idx.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i)
        idx.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (n - 1) / (k - 1))));
    return idx;
}

VideoClip sample_frames_uniform(const VideoClip& clip, int k) {
    std::vector<int> idx = uniform_frame_indices(clip.n(), k);
    const int H = clip.height(), W = clip.width(), C = clip.channels();
    const std::int64_t fsz = static_cast<std::int64_t>(H) * W * C;
    Tensor out({k, H, W, C});
    for (int i = 0; i < k; ++i)
        std::copy_n(clip.frames().data() + idx[static_cast<size_t>(i)] * fsz, fsz,
                    out.data() + i * fsz);
    return VideoClip(std::move(out), clip.fps());
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ManifestError(std::string("bad manifest json: ") + e.what());
    }
    DatasetManifest m;
    m.version = j.value("version", "");
    if (m.version != "veggie-manifest/1")
        throw ManifestError("unsupported manifest version '" + m.version + "'");
    std::vector<std::string> seen;
    const std::string base = fs::path(path).parent_path().string();
    for (const auto& r : j.at("records")) {
        ManifestRecord rec;
        rec.id = r.at("id").get<std::string>();
        rec.skill = skill_from_name(r.at("skill").get<std::string>());
        rec.instruction = r.at("instruction").get<std::string>();
        rec.source_dir = r.at("source_dir").get<std::string>();
        if (r.contains("target_dir")) rec.target_dir = r.at("target_dir").get<std::string>();
        if (r.contains("mask_dir")) rec.mask_dir = r.at("mask_dir").get<std::string>();
        rec.provenance = r.value("provenance", "");
        for (const auto& id : seen)
            if (id == rec.id) throw ManifestError("duplicate record id '" + rec.id + "'");
        seen.push_back(rec.id);
        auto resolve = [&](const std::string& d) {
            return fs::path(d).is_absolute() ? d : (fs::path(base) / d).string();
        };
        if (!fs::is_directory(resolve(rec.source_dir)))
            throw ManifestError("missing source_dir for '" + rec.id + "'");
        if (rec.target_dir && !fs::is_directory(resolve(*rec.target_dir)))
            throw ManifestError("missing target_dir for '" + rec.id + "'");
        if (rec.mask_dir && !fs::is_directory(resolve(*rec.mask_dir)))
            throw ManifestError("missing mask_dir for '" + rec.id + "'");
        m.records.push_back(std::move(rec));
    }
    return m;
}

void DatasetManifest::save(const std::string& path) const {
    json j;
    j["version"] = version;
    j["records"] = json::array();
    for (const auto& r : records) {
        json rec{{"id", r.id},
                 {"skill", skill_name(r.skill)},
                 {"instruction", r.instruction},
                 {"source_dir", r.source_dir},
                 {"provenance", r.provenance}};
        if (r.target_dir) rec["target_dir"] = *r.target_dir;
        if (r.mask_dir) rec["mask_dir"] = *r.mask_dir;
        j["records"].push_back(std::move(rec));
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write manifest " + path);
    f << j.dump(2) << "\n";
}

InstructionSample DatasetManifest::load_sample(const ManifestRecord& rec,
                                               const std::string& base) const {
    auto resolve = [&](const std::string& d) {
        return fs::path(d).is_absolute() ? d : (fs::path(base) / d).string();
    };
    InstructionSample s;
    s.skill = rec.skill;
    s.instruction = rec.instruction;
    s.source = load_clip(resolve(rec.source_dir));
    if (rec.target_dir) s.target = load_clip(resolve(*rec.target_dir));
    if (rec.mask_dir) s.gt_mask = load_mask(resolve(*rec.mask_dir));
    return s;
}

}  // namespace veggie
