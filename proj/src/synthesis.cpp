// SPDX-License-Identifier: Apache-2.0
#include "veggie/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "veggie/errors.hpp"

namespace veggie {

nlohmann::json QualityReport::to_json() const {
    return {{"aesthetic", aesthetic},
            {"imaging", imaging},
            {"motion_smoothness", motion_smoothness},
            {"subject_consistency", subject_consistency},
            {"background_consistency", background_consistency}};
}

QualityReport QualityReport::from_json(const nlohmann::json& j) {
    QualityReport r;
    r.aesthetic = j.at("aesthetic");
    r.imaging = j.at("imaging");
    r.motion_smoothness = j.at("motion_smoothness");
    r.subject_consistency = j.at("subject_consistency");
    r.background_consistency = j.at("background_consistency");
    return r;
}

std::string caption_prompt() {
    return
        "Please describe this image shortly, try to capture main details in the image.\n"
        "Here are some examples of image caption styles:\n"
        "\n"
        "1. A Couple In A Public Display Of Affection\n"
        "2. A kitten turning its head on a wooden floor\n"
        "3. An Old Man Doing Exercises For The Body And Mind\n"
        "4. Man Walking\n"
        "\n"
        "Now, please describe the given image briefly in one sentence, please do not say "
        "something like 'The image shows...' or 'The image depicts...'.\n";
}

std::string animation_prompt() {
    return
        "I want to animate this image using an Image-Text-to-Video model. Your task is to "
        "generate a detailed and reasonable text prompt that describes how the image should "
        "be animated.\n"
        "\n"
        "Guidelines:\n"
        "\n"
        "1. Clarity & Realism - The animation description should be logical based on the "
        "given image, ensuring the movement makes sense for the scene.\n"
        "\n"
        "2. Short & Vivid Description - Use expressive language to guide the animation model "
        "effectively, ensuring high-quality and visually engaging results.\n"
        "\n"
        "Ensure that your animation prompt aligns with the content of the provided image and "
        "describes a visually compelling motion sequence.\n"
        "\n"
        "Do not output animation prompts that contain objects/scenes not included in the "
        "given image.\n"
        "\n"
        "Make sure the prompt is short in 1-2 sentences.\n";
}

namespace {

void check_image(const Tensor& img, const char* what) {
    if (img.ndim() != 3 || img.dim(2) < 1) throw ShapeError(std::string(what) + " must be [H,W,C]");
}

double mean_brightness(const Tensor& img) {
    double s = 0;
    for (std::int64_t i = 0; i < img.numel(); ++i) s += img[i];
    return img.numel() > 0 ? s / static_cast<double>(img.numel()) : 0.0;
}

const char* dominant_channel(const Tensor& img) {
    if (img.dim(2) < 3) return "gray";
    double s[3] = {0, 0, 0};
    for (std::int64_t i = 0; i + 2 < img.numel(); i += img.dim(2)) {
        s[0] += img[i];
        s[1] += img[i + 1];
        s[2] += img[i + 2];
    }
    const int k = static_cast<int>(std::max_element(s, s + 3) - s);
    return k == 0 ? "warm" : (k == 1 ? "green" : "cool");
}

}  // namespace

std::string MockCaptioner::caption(const Tensor& image) const {
    check_image(image, "image");
    char buf[128];
    std::snprintf(buf, sizeof buf, "A synthetic scene in %s tones at brightness %.2f",
                  dominant_channel(image), mean_brightness(image));
    return buf;
}

std::string MockAnimationPrompter::animation(const Tensor& image) const {
    check_image(image, "image");
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "The %s-toned scene drifts slowly sideways while every element keeps its "
                  "shape and color.",
                  dominant_channel(image));
    return buf;
}

VideoClip MockAnimator::animate(const Tensor& image, const std::string& prompt,
                                std::uint64_t seed) const {
    check_image(image, "image");
    (void)prompt;  // the mock pans regardless of the text
    Rng rng(seed, 11);
    double dx = 0, dy = 0;
    while (dx == 0 && dy == 0) {
        dx = static_cast<double>(rng.uniform_int(-2, 2)) / 2.0;
        dy = static_cast<double>(rng.uniform_int(-2, 2)) / 2.0;
    }
    const int H = image.dim(0), W = image.dim(1), C = image.dim(2);
    Tensor frames({frames_, H, W, C});
    for (int t = 0; t < frames_; ++t)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int sy = std::clamp(static_cast<int>(std::lround(y - dy * t)), 0, H - 1);
                const int sx = std::clamp(static_cast<int>(std::lround(x - dx * t)), 0, W - 1);
                for (int c = 0; c < C; ++c)
                    frames.at({t, y, x, c}) = image.at({sy, sx, c});
            }
    return VideoClip(std::move(frames), fps_);
}

VideoClip MockEditPropagator::propagate(const VideoClip& source, const Tensor& edited_first) const {
    check_image(edited_first, "edited frame");
    if (edited_first.dim(0) != source.height() || edited_first.dim(1) != source.width() ||
        edited_first.dim(2) != source.channels())
        throw ShapeError("edited frame must match the source dimensions");
    Tensor out = source.frames();
    const std::int64_t fsz = edited_first.numel();
    std::copy_n(edited_first.data(), fsz, out.data());  // frame 0 verbatim
    for (int t = 1; t < source.n(); ++t)
        for (std::int64_t i = 0; i < fsz; ++i) {
            const double delta = edited_first[i] - source.frames()[i];  // frame 0 delta
            out[t * fsz + i] = std::clamp(out[t * fsz + i] + delta, 0.0, 1.0);
        }
    return VideoClip(std::move(out), source.fps());
}

namespace {

double cosine(const double* a, const double* b, std::int64_t n) {
    double dot = 0, na = 0, nb = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 && nb == 0.0) return 1.0;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

QualityReport MockQualityScorer::score(const VideoClip& clip) const {
    const int n = clip.n(), H = clip.height(), W = clip.width(), C = clip.channels();
    const std::int64_t fsz = static_cast<std::int64_t>(H) * W * C;
    const double* px = clip.frames().data();
    QualityReport r;

    // smoothness / subject consistency from flattened-pixel cosines
    double smooth = 1.0, subject = 1.0;
    if (n > 1) {
        smooth = subject = 0.0;
        for (int t = 1; t < n; ++t) {
            smooth += (1.0 + cosine(px + (t - 1) * fsz, px + t * fsz, fsz)) / 2.0;
            subject += (1.0 + cosine(px, px + t * fsz, fsz)) / 2.0;
        }
        smooth /= n - 1;
        subject /= n - 1;
    }
    r.motion_smoothness = smooth;
    r.subject_consistency = subject;

    // background consistency: stability of the per-frame mean color
    double overall = 0;
    std::vector<double> fmean(static_cast<size_t>(n), 0.0);
    for (int t = 0; t < n; ++t) {
        for (std::int64_t i = 0; i < fsz; ++i) fmean[static_cast<size_t>(t)] += px[t * fsz + i];
        fmean[static_cast<size_t>(t)] /= static_cast<double>(fsz);
        overall += fmean[static_cast<size_t>(t)] / n;
    }
    double drift = 0;
    for (int t = 0; t < n; ++t) drift += std::fabs(fmean[static_cast<size_t>(t)] - overall) / n;
    r.background_consistency = std::clamp(1.0 - 4.0 * drift, 0.0, 1.0);

    // aesthetic: calibrated contrast + saturation proxy
    double gmean = 0, gsq = 0, sat = 0;
    const std::int64_t npx = static_cast<std::int64_t>(n) * H * W;
    for (std::int64_t p = 0; p < npx; ++p) {
        double lo = 1.0, hi = 0.0, g = 0.0;
        for (int c = 0; c < C; ++c) {
            const double v = px[p * C + c];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            g += v / C;
        }
        gmean += g;
        gsq += g * g;
        sat += hi - lo;
    }
    gmean /= static_cast<double>(npx);
    gsq /= static_cast<double>(npx);
    sat /= static_cast<double>(npx);
    const double contrast = std::sqrt(std::max(gsq - gmean * gmean, 0.0));
    r.aesthetic = std::clamp(0.5 + 1.5 * contrast + 0.5 * sat, 0.0, 1.0);

    // imaging: 100 * (1 - mean 4-neighborhood Laplacian of the luma)
    double noise = 0;
    std::int64_t count = 0;
    for (int t = 0; t < n; ++t)
        for (int y = 1; y + 1 < H; ++y)
            for (int x = 1; x + 1 < W; ++x) {
                auto luma = [&](int yy, int xx) {
                    double g = 0;
                    for (int c = 0; c < C; ++c) g += clip.pixel(t, yy, xx, c) / C;
                    return g;
                };
                noise += std::fabs(4.0 * luma(y, x) - luma(y - 1, x) - luma(y + 1, x) -
                                   luma(y, x - 1) - luma(y, x + 1)) /
                         4.0;
                ++count;
            }
    if (count > 0) noise /= static_cast<double>(count);
    r.imaging = 100.0 * (1.0 - std::clamp(noise, 0.0, 1.0));
    return r;
}

SynthesisBackends SynthesisBackends::mock() {
    SynthesisBackends b;
    b.captioner = std::make_shared<MockCaptioner>();
    b.prompter = std::make_shared<MockAnimationPrompter>();
    b.animator = std::make_shared<MockAnimator>();
    b.propagator = std::make_shared<MockEditPropagator>();
    b.scorer = std::make_shared<MockQualityScorer>();
    return b;
}

PairResult synthesize_pair(const Tensor& image, const Tensor& edited_image,
                           const std::string& instruction, const SynthesisBackends& backends,
                           std::uint64_t seed) {
    check_image(image, "image");
    check_image(edited_image, "edited image");
    if (!image.same_shape(edited_image))
        throw ShapeError("image and edited image must share dimensions");
    if (!backends.captioner || !backends.prompter || !backends.animator ||
        !backends.propagator || !backends.scorer)
        throw ConfigError("incomplete backend set");
    (void)instruction;  // carried through to the manifest by callers

    auto stage = [](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            throw StageError(std::string(name) + ": " + e.what());
        }
    };

    PairResult out;
    out.caption = stage("caption", [&] { return backends.captioner->caption(image); });
    out.anim_prompt =
        stage("animation-prompt", [&] { return backends.prompter->animation(image); });
    out.source = stage("animate",
                       [&] { return backends.animator->animate(image, out.anim_prompt, seed); });
    out.target = stage("propagate",
                       [&] { return backends.propagator->propagate(out.source, edited_image); });
    out.source_report = stage("score-source", [&] { return backends.scorer->score(out.source); });
    out.target_report = stage("score-target", [&] { return backends.scorer->score(out.target); });
    return out;
}

FilterDecision filter_pair(const QualityReport& source, const QualityReport& target,
                           const FilterThresholds& th) {
    FilterDecision d;
    d.accept = true;
    auto check = [&](const char* clip, const char* metric, double value, double min) {
        if (value >= min) return;
        d.accept = false;
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s: %s %.4g < %.4g", clip, metric, value, min);
        d.reasons.emplace_back(buf);
    };
    const QualityReport* reports[2] = {&source, &target};
    const char* names[2] = {"source", "target"};
    for (int i = 0; i < 2; ++i) {
        check(names[i], "aesthetic", reports[i]->aesthetic, th.aesthetic_min);
        check(names[i], "imaging", reports[i]->imaging, th.imaging_min);
        check(names[i], "motion_smoothness", reports[i]->motion_smoothness, th.smoothness_min);
        check(names[i], "subject_consistency", reports[i]->subject_consistency, th.subject_min);
        check(names[i], "background_consistency", reports[i]->background_consistency,
              th.background_min);
    }
    return d;
}

}  // namespace veggie
