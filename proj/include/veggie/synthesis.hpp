// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "veggie/media.hpp"
#include "veggie/rng.hpp"

namespace veggie {

/// VBench-style clip scores produced by a QualityScorer.
struct QualityReport {
    double aesthetic = 0.0;             // [0,1]
    double imaging = 0.0;               // [0,100]
    double motion_smoothness = 0.0;     // [0,1]
    double subject_consistency = 0.0;   // [0,1]
    double background_consistency = 0.0;  // [0,1]

    nlohmann::json to_json() const;
    static QualityReport from_json(const nlohmann::json& j);
};

struct FilterThresholds {
    double aesthetic_min = 0.6;
    double imaging_min = 65.0;
    double smoothness_min = 0.9;
    double subject_min = 0.9;
    double background_min = 0.9;
};

struct FilterDecision {
    bool accept = false;
    std::vector<std::string> reasons;  // one entry per failing (clip, metric, value)
};

// ---- stage backends (deterministic mocks ship for all five) ----

class Captioner {
public:
    virtual ~Captioner() = default;
    virtual std::string caption(const Tensor& image) const = 0;  // [H,W,C]
};

class AnimationPrompter {
public:
    virtual ~AnimationPrompter() = default;
    virtual std::string animation(const Tensor& image) const = 0;
};

class Animator {
public:
    virtual ~Animator() = default;
    virtual VideoClip animate(const Tensor& image, const std::string& prompt,
                              std::uint64_t seed) const = 0;
};

class EditPropagator {
public:
    virtual ~EditPropagator() = default;
    virtual VideoClip propagate(const VideoClip& source, const Tensor& edited_first) const = 0;
};

class QualityScorer {
public:
    virtual ~QualityScorer() = default;
    virtual QualityReport score(const VideoClip& clip) const = 0;
};

struct SynthesisBackends {
    std::shared_ptr<Captioner> captioner;
    std::shared_ptr<AnimationPrompter> prompter;
    std::shared_ptr<Animator> animator;
    std::shared_ptr<EditPropagator> propagator;
    std::shared_ptr<QualityScorer> scorer;

    static SynthesisBackends mock();
};

// mock implementations, exported for direct testing
class MockCaptioner : public Captioner {
public:
    std::string caption(const Tensor& image) const override;
};
class MockAnimationPrompter : public AnimationPrompter {
public:
    std::string animation(const Tensor& image) const override;
};
/// Linear global pan over `frames` frames; frame 0 is the input verbatim.
class MockAnimator : public Animator {
public:
    explicit MockAnimator(int frames = 8, double fps = 8.0) : frames_(frames), fps_(fps) {}
    VideoClip animate(const Tensor& image, const std::string& prompt,
                      std::uint64_t seed) const override;

private:
    int frames_;
    double fps_;
};
/// Applies the edited-minus-original first-frame delta to every frame.
class MockEditPropagator : public EditPropagator {
public:
    VideoClip propagate(const VideoClip& source, const Tensor& edited_first) const override;
};
class MockQualityScorer : public QualityScorer {
public:
    QualityReport score(const VideoClip& clip) const override;
};

/// Prompt templates sent to promptable caption/animation backends.
std::string caption_prompt();
std::string animation_prompt();

struct PairResult {
    VideoClip source;
    VideoClip target;
    std::string caption;
    std::string anim_prompt;
    QualityReport source_report;
    QualityReport target_report;
};

/// caption -> animation prompt -> animate -> propagate edit -> score both.
PairResult synthesize_pair(const Tensor& image, const Tensor& edited_image,
                           const std::string& instruction, const SynthesisBackends& backends,
                           std::uint64_t seed);

/// Accept iff every metric >= its threshold on BOTH clips.
FilterDecision filter_pair(const QualityReport& source, const QualityReport& target,
                           const FilterThresholds& thresholds = {});

}  // namespace veggie
