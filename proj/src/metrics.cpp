// SPDX-License-Identifier: Apache-2.0
#include "veggie/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "veggie/errors.hpp"
#include "veggie/synthesis.hpp"
#include "veggie/taskdata.hpp"

namespace veggie {
namespace {

void check_mask_shapes(const MaskVideo& a, const MaskVideo& b) {
    if (a.masks().shape() != b.masks().shape())
        throw ShapeError("mask shapes differ");
}

Tensor frame_of(const VideoClip& clip, int t) {
    const int H = clip.height(), W = clip.width(), C = clip.channels();
    Tensor img({H, W, C});
    std::copy_n(clip.frames().data() + static_cast<std::int64_t>(t) * img.numel(),
                img.numel(), img.data());
    return img;
}

double cosine(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw ShapeError("embedding dims differ");
    double dot = 0, na = 0, nb = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 && nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

template <class F>
auto backend_guard(const char* what, F&& f) {
    try {
        return f();
    } catch (const DomainError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError(std::string(what) + ": " + e.what());
    }
}

/// Boundary pixels under the 4-neighborhood convention: a set pixel whose
/// left/right/up/down neighbor (or the image border) is unset.
std::vector<std::pair<int, int>> boundary_pixels(const MaskVideo& m, int t) {
    const int H = m.height(), W = m.width();
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (m.value(t, y, x) < 0.5) continue;
            const bool interior = y > 0 && m.value(t, y - 1, x) >= 0.5 &&
                                  y < H - 1 && m.value(t, y + 1, x) >= 0.5 &&
                                  x > 0 && m.value(t, y, x - 1) >= 0.5 &&
                                  x < W - 1 && m.value(t, y, x + 1) >= 0.5;
            if (!interior) out.emplace_back(y, x);
        }
    return out;
}

double matched_fraction(const std::vector<std::pair<int, int>>& from,
                        const std::vector<std::pair<int, int>>& to, double r2) {
    int hit = 0;
    for (const auto& [y, x] : from) {
        bool ok = false;
        for (const auto& [gy, gx] : to) {
            const double dy = y - gy, dx = x - gx;
            if (dy * dy + dx * dx <= r2) {
                ok = true;
                break;
            }
        }
        hit += ok;
    }
    return static_cast<double>(hit) / static_cast<double>(from.size());
}

Tensor luma_frame(const VideoClip& clip, int t) {
    const int H = clip.height(), W = clip.width(), C = clip.channels();
    Tensor g({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (C >= 3)
                g.at({y, x}) = 0.299 * clip.pixel(t, y, x, 0) + 0.587 * clip.pixel(t, y, x, 1) +
                               0.114 * clip.pixel(t, y, x, 2);
            else
                g.at({y, x}) = clip.pixel(t, y, x, 0);
        }
    return g;
}

std::vector<double> gaussian_kernel_11() {
    std::vector<double> k(11);
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Valid-mode separable 11x11 filter; output is (H-10) x (W-10).
Tensor filter_valid(const Tensor& img) {
    static const std::vector<double> k = gaussian_kernel_11();
    const int H = img.dim(0), W = img.dim(1);
    Tensor rows({H, W - 10});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x + 10 < W; ++x) {
            double s = 0;
            for (int i = 0; i < 11; ++i) s += k[i] * img.at({y, x + i});
            rows.at({y, x}) = s;
        }
    Tensor out({H - 10, W - 10});
    for (int y = 0; y + 10 < H; ++y)
        for (int x = 0; x < W - 10; ++x) {
            double s = 0;
            for (int i = 0; i < 11; ++i) s += k[i] * rows.at({y + i, x});
            out.at({y, x}) = s;
        }
    return out;
}

double ssim_frame(const Tensor& x, const Tensor& y) {
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;  // dynamic range 1
    Tensor x2 = x, y2 = y, xy = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        x2[i] = x[i] * x[i];
        y2[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    Tensor mx = filter_valid(x), my = filter_valid(y);
    Tensor mxx = filter_valid(x2), myy = filter_valid(y2), mxy = filter_valid(xy);
    double acc = 0;
    for (std::int64_t i = 0; i < mx.numel(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cov = mxy[i] - mx[i] * my[i];
        acc += ((2 * mx[i] * my[i] + C1) * (2 * cov + C2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    return acc / static_cast<double>(mx.numel());
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

// ---- region and boundary metrics ----

double jaccard(const MaskVideo& pred, const MaskVideo& gt) {
    check_mask_shapes(pred, gt);
    const int n = pred.n(), H = pred.height(), W = pred.width();
    double acc = 0;
    for (int t = 0; t < n; ++t) {
        std::int64_t inter = 0, uni = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const bool p = pred.value(t, y, x) >= 0.5, g = gt.value(t, y, x) >= 0.5;
                inter += p && g;
                uni += p || g;
            }
        acc += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return 100.0 * acc / static_cast<double>(n);
}

double boundary_f(const MaskVideo& pred, const MaskVideo& gt) {
    check_mask_shapes(pred, gt);
    const int n = pred.n(), H = pred.height(), W = pred.width();
    const double r = std::ceil(0.008 * std::sqrt(double(H) * H + double(W) * W));
    const double r2 = r * r;
    double acc = 0;
    for (int t = 0; t < n; ++t) {
        const auto pb = boundary_pixels(pred, t);
        const auto gb = boundary_pixels(gt, t);
        if (pb.empty() && gb.empty()) {
            acc += 1.0;
            continue;
        }
        if (pb.empty() || gb.empty()) continue;  // F = 0
        const double P = matched_fraction(pb, gb, r2);
        const double R = matched_fraction(gb, pb, r2);
        if (P + R > 0) acc += 2.0 * P * R / (P + R);
    }
    return 100.0 * acc / static_cast<double>(n);
}

double ssim_masked(const VideoClip& generated, const VideoClip& original,
                   const MaskVideo& gt_mask) {
    if (generated.frames().shape() != original.frames().shape())
        throw ShapeError("clip shapes differ");
    if (gt_mask.n() != original.n() || gt_mask.height() != original.height() ||
        gt_mask.width() != original.width())
        throw ShapeError("mask does not match clip");
    if (original.height() < 11 || original.width() < 11)
        throw ShapeError("frames smaller than the 11x11 SSIM window");
    const VideoClip reference = mask_to_fill(original, gt_mask, FillSpec{});
    double acc = 0;
    for (int t = 0; t < generated.n(); ++t)
        acc += ssim_frame(luma_frame(generated, t), luma_frame(reference, t));
    return 100.0 * acc / static_cast<double>(generated.n());
}

// ---- embedding and detector metrics ----

double smoothness(const VideoClip& clip, const EmbedderClient& embedder) {
    if (clip.n() < 2) return 100.0;
    return backend_guard("embedder", [&] {
        Tensor prev = embedder.embed_image(frame_of(clip, 0));
        double acc = 0;
        for (int t = 1; t < clip.n(); ++t) {
            Tensor cur = embedder.embed_image(frame_of(clip, t));
            acc += cosine(prev, cur);
            prev = std::move(cur);
        }
        return 100.0 * acc / static_cast<double>(clip.n() - 1);
    });
}

double alignment(const VideoClip& clip, const std::string& text,
                 const EmbedderClient& embedder) {
    return backend_guard("embedder", [&] {
        const Tensor te = embedder.embed_text(text);
        double acc = 0;
        for (int t = 0; t < clip.n(); ++t) acc += cosine(te, embedder.embed_image(frame_of(clip, t)));
        return 100.0 * acc / static_cast<double>(clip.n());
    });
}

double detection_score(const VideoClip& clip, const std::string& phrase,
                       const DetectorClient& detector, bool invert) {
    const double raw = backend_guard("detector", [&] {
        double acc = 0;
        for (int t = 0; t < clip.n(); ++t) acc += detector.confidence(frame_of(clip, t), phrase);
        return 100.0 * acc / static_cast<double>(clip.n());
    });
    return invert ? 100.0 - raw : raw;
}

// ---- judge ----

std::string judge_prompt() {
    return
        "You are an evaluator for instructional video editing tasks. Your job is to assess "
        "how well the edited video fulfills the user's specific instructions.\n"
        "I will provide:\n"
        "1. The original video (first GIF)\n"
        "2. The edited video (second GIF)\n"
        "3. The user's instruction: [user instruction]\n"
        "Please evaluate the editing result using the following format:\n"
        "INSTRUCTION: [Repeat the user's instruction]\n"
        "EVALUATION:\n"
        "- Accuracy score (1-10): [Your score]\n"
        "- Quality score (1-10): [Your score]\n"
        "- Appropriateness score (1-10): [Your score]\n"
        "- Overall score (1-10): [Your final score]\n"
        "\n"
        "EXPLANATION: [Provide a brief justification for your scores, highlighting specific "
        "strengths and weaknesses of the edit]\n"
        "RECOMMENDATION: [Optional suggestions for improvement]\n"
        "\n"
        "When scoring, consider:\n"
        "- Accuracy: Does the edit precisely follow the given instruction?\n"
        "- Quality: Is the edit visually seamless and natural-looking?\n"
        "- Appropriateness: Does the edit maintain coherence with the original video context?\n"
        "\n"
        "The overall scale is:\n"
        "1-3: Poor - Major issues with the edit\n"
        "4-6: Acceptable - Follows instruction but with noticeable flaws\n"
        "7-8: Good - Clear, effective edit with minor issues\n"
        "9-10: Excellent - Flawless execution of the instruction\n";
}

double parse_overall_score(const std::string& reply) {
    static const std::string key = "Overall score (1-10):";
    const auto pos = reply.find(key);
    if (pos == std::string::npos) throw JudgeParseError("reply lacks an overall score line");
    size_t i = pos + key.size();
    while (i < reply.size() && (reply[i] == ' ' || reply[i] == '[' || reply[i] == '*')) ++i;
    char* end = nullptr;
    const double v = std::strtod(reply.c_str() + i, &end);
    if (end == reply.c_str() + i) throw JudgeParseError("overall score is not a number");
    if (v < 1.0 || v > 10.0) throw JudgeParseError("overall score outside 1-10");
    return v;
}

double judge(const VideoClip& original, const VideoClip& edited,
             const std::string& instruction, const JudgeClient& client) {
    std::string prompt = judge_prompt();
    const std::string placeholder = "[user instruction]";
    prompt.replace(prompt.find(placeholder), placeholder.size(), instruction);
    double acc = 0;
    for (int call = 0; call < 5; ++call) {
        double score = 0;
        bool ok = false;
        std::string last_err;
        for (int attempt = 0; attempt < 3 && !ok; ++attempt) {  // 2 retries per call
            const std::string reply = backend_guard(
                "judge", [&] { return client.evaluate(prompt, original, edited); });
            try {
                score = parse_overall_score(reply);
                ok = true;
            } catch (const JudgeParseError& e) {
                last_err = e.what();
            }
        }
        if (!ok) throw JudgeParseError(last_err);
        acc += score;
    }
    return acc / 5.0;
}

// ---- mocks ----

Tensor MockEmbedder::embed_image(const Tensor& frame) const {
    if (frame.ndim() != 3) throw ShapeError("embed_image expects [H,W,C]");
    const int H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
    Tensor e = Tensor({64});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double luma = 0;
            for (int c = 0; c < C; ++c) {
                const double v = frame.at({y, x, c});
                luma += v / C;
                if (c < 3) e[60 + c] += v / (H * W);
            }
            const int bin = std::min(59, static_cast<int>(luma * 60.0));
            e[bin] += 1.0 / (H * W);
        }
    e[63] = 1.0;
    return e;
}

Tensor MockEmbedder::embed_text(const std::string& text) const {
    Tensor e = Tensor({64});
    std::istringstream ss(text);
    std::string word;
    int count = 0;
    while (ss >> word) {
        e[fnv1a(word) % 63] += 1.0;
        ++count;
    }
    if (count > 0)
        for (int i = 0; i < 63; ++i) e[i] /= count;
    e[63] = 1.0;
    return e;
}

double MockDetector::confidence(const Tensor& frame, const std::string& phrase) const {
    if (frame.ndim() != 3 || frame.dim(2) < 3) throw ShapeError("detector expects [H,W,3+]");
    const PaletteColor* target = nullptr;
    for (const auto& pc : shape_palette())
        if (phrase.find(pc.name) != std::string::npos) {
            target = &pc;
            break;
        }
    if (!target) return 0.0;
    const int H = frame.dim(0), W = frame.dim(1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            bool match = true;
            for (int c = 0; c < 3 && match; ++c)
                match = std::fabs(frame.at({y, x, c}) - target->rgb[c]) <= 30.0 / 255.0;
            if (match) return 1.0;
        }
    return 0.0;
}

std::string MockJudge::evaluate(const std::string& prompt, const VideoClip&,
                                const VideoClip&) const {
    const int span = high_ - low_ + 1;
    const int overall = low_ + static_cast<int>(fnv1a(prompt) % static_cast<std::uint64_t>(span));
    std::ostringstream ss;
    ss << "INSTRUCTION: (echoed)\n"
       << "EVALUATION:\n"
       << "- Accuracy score (1-10): " << overall << "\n"
       << "- Quality score (1-10): " << overall << "\n"
       << "- Appropriateness score (1-10): " << overall << "\n"
       << "- Overall score (1-10): " << overall << "\n\n"
       << "EXPLANATION: deterministic mock reply.\n"
       << "RECOMMENDATION: none.\n";
    return ss.str();
}

double MockQuality::quality(const VideoClip& clip) const {
    return MockQualityScorer().score(clip).imaging;
}

EvalClients EvalClients::mock() {
    EvalClients c;
    c.embedder = std::make_shared<MockEmbedder>();
    c.detector = std::make_shared<MockDetector>();
    c.judge = std::make_shared<MockJudge>();
    c.quality = std::make_shared<MockQuality>();
    return c;
}

// ---- benchmark harness ----

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j;
    j["frame_count"] = frame_count;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json row;
        row["id"] = s.id;
        row["skill"] = skill_name(s.skill);
        row["values"] = s.values;
        j["samples"].push_back(row);
    }
    j["per_skill"] = per_skill;
    return j;
}

std::string MetricReport::table() const {
    std::ostringstream ss;
    ss << "skill            n  metrics\n";
    for (const auto& [skill, values] : per_skill) {
        int n = 0;
        for (const auto& s : samples) n += skill_name(s.skill) == skill;
        char head[64];
        std::snprintf(head, sizeof(head), "%-15s %2d  ", skill.c_str(), n);
        ss << head;
        bool first = true;
        for (const auto& [name, v] : values) {
            char cell[64];
            std::snprintf(cell, sizeof(cell), "%s%s=%.2f", first ? "" : "  ", name.c_str(), v);
            ss << cell;
            first = false;
        }
        ss << "\n";
    }
    return ss.str();
}

MetricReport run_bench(const DatasetManifest& manifest, const std::string& data_root,
                       const std::string& outputs_dir, const EvalClients& clients) {
    MetricReport report;
    std::map<std::string, std::map<std::string, std::pair<double, int>>> sums;
    for (const auto& rec : manifest.records) {
        const std::filesystem::path out_dir = std::filesystem::path(outputs_dir) / rec.id;
        if (!std::filesystem::exists(out_dir / "meta.json"))
            throw MissingOutput(rec.id);
        const InstructionSample sample = manifest.load_sample(rec, data_root);
        const VideoClip output = load_clip(out_dir.string());
        report.frame_count += output.n();

        SampleMetrics sm;
        sm.id = rec.id;
        sm.skill = rec.skill;
        if (rec.skill == Skill::grounding || rec.skill == Skill::reasoning) {
            if (!sample.gt_mask) throw ManifestError("record " + rec.id + " lacks a GT mask");
            const MaskVideo pred = fill_to_mask(output, FillSpec{});
            const double J = jaccard(pred, *sample.gt_mask);
            const double F = boundary_f(pred, *sample.gt_mask);
            sm.values["ssim"] = ssim_masked(output, sample.source, *sample.gt_mask);
            sm.values["J"] = J;
            sm.values["F"] = F;
            sm.values["JF"] = (J + F) / 2.0;
        } else {
            sm.values["judge"] = judge(sample.source, output, rec.instruction, *clients.judge);
            sm.values["alignment"] = alignment(output, rec.instruction, *clients.embedder);
            sm.values["smoothness"] = smoothness(output, *clients.embedder);
            sm.values["quality"] = clients.quality->quality(output);
            if (rec.skill == Skill::addition || rec.skill == Skill::removal)
                sm.values["detection"] = detection_score(output, rec.instruction, *clients.detector,
                                                         rec.skill == Skill::removal);
        }
        for (const auto& [name, v] : sm.values) {
            auto& cell = sums[skill_name(rec.skill)][name];
            cell.first += v;
            cell.second += 1;
        }
        report.samples.push_back(std::move(sm));
    }
    for (const auto& [skill, values] : sums)
        for (const auto& [name, cell] : values)
            report.per_skill[skill][name] = cell.first / cell.second;
    return report;
}

}  // namespace veggie
