// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "veggie/media.hpp"

namespace veggie {

// ---- pluggable scoring backends (deterministic mocks ship for all) ----

/// Maps frames and text into one shared embedding space.
class EmbedderClient {
public:
    virtual ~EmbedderClient() = default;
    virtual Tensor embed_image(const Tensor& frame) const = 0;  // [H,W,C] -> [D]
    virtual Tensor embed_text(const std::string& text) const = 0;  // -> [D]
};

/// Open-vocabulary phrase detector: frame + phrase -> confidence in [0,1].
class DetectorClient {
public:
    virtual ~DetectorClient() = default;
    virtual double confidence(const Tensor& frame, const std::string& phrase) const = 0;
};

/// Instruction-conditioned holistic judge answering the evaluation prompt.
class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    virtual std::string evaluate(const std::string& prompt, const VideoClip& original,
                                 const VideoClip& edited) const = 0;
};

/// No-reference image-quality backend (MUSIQ role), scores in [0,100].
class QualityClient {
public:
    virtual ~QualityClient() = default;
    virtual double quality(const VideoClip& clip) const = 0;
};

// mock implementations, exported for direct testing

/// Shared 64-d space: image = luma histogram + channel means, text = hashed
/// byte bag. Nonnegative features, so cosines stay in [0,1].
class MockEmbedder : public EmbedderClient {
public:
    Tensor embed_image(const Tensor& frame) const override;
    Tensor embed_text(const std::string& text) const override;
};

/// Exact color matcher over the shape palette: returns 1 when the frame
/// contains a pixel near the first palette color named in the phrase,
/// 0 otherwise (and 0 when the phrase names none).
class MockDetector : public DetectorClient {
public:
    double confidence(const Tensor& frame, const std::string& phrase) const override;
};

/// Answers the judge prompt with a fixed-format reply; the overall score is
/// a deterministic hash of the prompt into [low, high].
class MockJudge : public JudgeClient {
public:
    explicit MockJudge(int low = 6, int high = 9) : low_(low), high_(high) {}
    std::string evaluate(const std::string& prompt, const VideoClip& original,
                         const VideoClip& edited) const override;

private:
    int low_, high_;
};

/// Wraps the synthesis mock scorer's imaging-quality channel.
class MockQuality : public QualityClient {
public:
    double quality(const VideoClip& clip) const override;
};

struct EvalClients {
    std::shared_ptr<EmbedderClient> embedder;
    std::shared_ptr<DetectorClient> detector;
    std::shared_ptr<JudgeClient> judge;
    std::shared_ptr<QualityClient> quality;

    static EvalClients mock();
};

// ---- metrics (all reported x100 unless noted; judge is on its native 1-10) ----

/// Mean per-frame IoU; a frame where both masks are empty scores 1.
double jaccard(const MaskVideo& pred, const MaskVideo& gt);

/// Mean per-frame boundary F-measure with match radius
/// ceil(0.008 * sqrt(H^2 + W^2)) over 4-neighborhood boundaries.
double boundary_f(const MaskVideo& pred, const MaskVideo& gt);

/// SSIM between `generated` and the original repainted by the GT mask
/// (grayscale, 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03, range 1).
double ssim_masked(const VideoClip& generated, const VideoClip& original,
                   const MaskVideo& gt_mask);

/// Mean cosine similarity of consecutive-frame embeddings.
double smoothness(const VideoClip& clip, const EmbedderClient& embedder);

/// Mean text-frame embedding cosine.
double alignment(const VideoClip& clip, const std::string& text,
                 const EmbedderClient& embedder);

/// Mean detector confidence; `invert` (removal skill) reports 100 - value.
double detection_score(const VideoClip& clip, const std::string& phrase,
                       const DetectorClient& detector, bool invert = false);

/// The evaluation prompt template ("[user instruction]" placeholder intact).
std::string judge_prompt();

/// Prompt with the instruction substituted; exactly 5 client calls, each
/// retried at most twice on unparseable replies; returns the mean of the
/// parsed "Overall score (1-10):" values.
double judge(const VideoClip& original, const VideoClip& edited,
             const std::string& instruction, const JudgeClient& client);

/// Parses the overall score from one judge reply (JudgeParseError if absent).
double parse_overall_score(const std::string& reply);

// ---- benchmark harness ----

struct SampleMetrics {
    std::string id;
    Skill skill = Skill::addition;
    std::map<std::string, double> values;  // metric name -> value
};

struct MetricReport {
    std::vector<SampleMetrics> samples;
    // skill name -> metric name -> mean over that skill's samples
    std::map<std::string, std::map<std::string, double>> per_skill;
    int frame_count = 0;

    nlohmann::json to_json() const;
    std::string table() const;
};

/// Scores `outputs_dir/<record id>` against the manifest, routing metrics by
/// skill: addition/removal get judge+alignment+smoothness+quality+detection
/// (detection inverted for removal); the other editing skills drop detection;
/// grounding/reasoning get ssim+J+F+JF.
MetricReport run_bench(const DatasetManifest& manifest, const std::string& data_root,
                       const std::string& outputs_dir, const EvalClients& clients);

}  // namespace veggie
