// SPDX-License-Identifier: Apache-2.0
//
// veggie: toy-data synthesis, two-stage training, editing, benchmark
// evaluation, pair synthesis, and query-projection analysis.
//
// Exit codes: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "veggie/errors.hpp"
#include "veggie/metrics.hpp"
#include "veggie/pca.hpp"
#include "veggie/png_io.hpp"
#include "veggie/sampler.hpp"
#include "veggie/synthesis.hpp"
#include "veggie/taskdata.hpp"
#include "veggie/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace veggie;

namespace {

// Desk-scale defaults; override with --model-config.
ConditionerConfig small_conditioner() {
    ConditionerConfig c;
    c.d_model = 128;
    c.d_cond = 64;
    c.layers = 2;
    c.heads = 4;
    c.m = 8;
    return c;
}

UNetConfig small_unet() {
    UNetConfig u;
    u.base_width = 32;
    u.channel_multipliers = {1, 2};
    u.attn_levels = {1};
    u.d_cond = 64;
    u.T_max = 200;
    u.beta_end = 0.045;
    return u;
}

void write_json(const fs::path& path, const json& j) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    return json::parse(f);
}

void append_log(const fs::path& out_dir, const json& event) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "run.log.jsonl", std::ios::binary | std::ios::app);
    f << event.dump() << "\n";
}

std::vector<Skill> parse_skills(const std::vector<std::string>& names) {
    std::vector<Skill> out;
    for (const auto& n : names) {
        if (n == "all") {
            for (int i = 0; i < kNumSkills; ++i) out.push_back(static_cast<Skill>(i));
        } else {
            out.push_back(skill_from_name(n));
        }
    }
    return out;
}

Tensor load_image(const std::string& path) {
    const png::Image img = png::read_file(path);
    Tensor t({img.height, img.width, img.channels});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = img.pixels[i] / 255.0;
    return t;
}

struct ModelConfigs {
    ConditionerConfig cond;
    UNetConfig unet;
};

ModelConfigs resolve_model_configs(const std::string& model_config_path) {
    ModelConfigs m{small_conditioner(), small_unet()};
    if (!model_config_path.empty()) {
        const json j = read_json(model_config_path);
        if (j.contains("conditioner")) m.cond = ConditionerConfig::from_json(j["conditioner"]);
        if (j.contains("unet")) m.unet = UNetConfig::from_json(j["unet"]);
    }
    if (m.cond.d_cond != m.unet.d_cond)
        throw ConfigError("conditioner and unet disagree on d_cond");
    return m;
}

// ---- subcommand bodies ----

int cmd_synth_toy(const std::vector<std::string>& skill_names, int count, std::uint64_t seed,
                  const std::string& out, int H, int W, int frames) {
    SceneConfig cfg;
    cfg.H = H;
    cfg.W = W;
    cfg.n = frames;
    const std::vector<Skill> skills = parse_skills(skill_names);
    json resolved{{"subcommand", "synth-toy"}, {"count", count}, {"seed", seed},
                  {"height", H},               {"width", W},     {"frames", frames}};
    resolved["skills"] = json::array();
    for (Skill s : skills) resolved["skills"].push_back(skill_name(s));
    write_json(fs::path(out) / "resolved_config.json", resolved);

    const DatasetManifest man = generate_toy_dataset(seed, skills, count, out, cfg);
    append_log(out, {{"event", "synth-toy"}, {"records", man.records.size()}, {"seed", seed}});
    std::cout << "wrote " << man.records.size() << " samples to " << out << "\n";
    return 0;
}

int cmd_train(int stage, const std::string& data_path, const std::string& out,
              std::uint64_t seed, const std::string& init_ckpt, const std::string& config_path,
              const std::string& model_config_path, const CLI::App& sub) {
    StagePlan plan = config_path.empty() ? StagePlan::defaults(stage)
                                         : StagePlan::from_json(read_json(config_path));
    plan.stage = stage;
    // CLI flags override both the config file and the defaults
    auto over_i = [&](const char* flag, int& field) {
        if (sub.count(flag)) field = sub.get_option(flag)->as<int>();
    };
    over_i("--steps", plan.steps);
    over_i("--batch", plan.batch);
    over_i("--frames", plan.frames_per_sample);
    over_i("--checkpoint-every", plan.checkpoint_every);
    if (sub.count("--lr")) plan.lr = sub.get_option("--lr")->as<double>();

    const ModelConfigs models = resolve_model_configs(model_config_path);
    const DatasetManifest data = DatasetManifest::load(data_path);
    const std::string data_base = fs::path(data_path).parent_path().string();

    TrainState state = [&] {
        if (!init_ckpt.empty()) return load_train_state(init_ckpt);
        Rng crng(seed, 10), urng(seed, 20);
        return TrainState{Conditioner(models.cond, crng), DenoiserModel(models.unet, urng), 0};
    }();

    json resolved{{"subcommand", "train"},      {"seed", seed},
                  {"data", data_path},          {"init", init_ckpt},
                  {"plan", plan.to_json()},     {"conditioner", state.conditioner.config().to_json()},
                  {"unet", state.denoiser.config().to_json()}};
    write_json(fs::path(out) / "resolved_config.json", resolved);

    const IdentityCodec codec;
    const UNetConfig& ucfg = state.denoiser.config();
    const NoiseSchedule sched = NoiseSchedule::linear(ucfg.T_max, ucfg.beta_start, ucfg.beta_end);
    const TrainReport report = run_stage(plan, data, data_base, state, codec, sched, seed, out);

    json rj{{"seed", report.seed},
            {"steps", report.losses.size()},
            {"ema_loss", report.ema_loss},
            {"first_loss", report.losses.empty() ? 0.0 : report.losses.front()},
            {"last_loss", report.losses.empty() ? 0.0 : report.losses.back()}};
    write_json(fs::path(out) / "train_report.json", rj);
    append_log(out, {{"event", "train"}, {"stage", stage}, {"ema_loss", report.ema_loss}});
    std::cout << "stage " << stage << " done, ema loss " << report.ema_loss << "\n";
    return 0;
}

int cmd_edit(const std::string& ckpt, const std::string& src, const std::string& instruction,
             const std::vector<std::string>& refs, const std::string& skill_str, const CLI::App& sub,
             double gt, double gv, int steps, double eta, const std::string& sampler,
             std::uint64_t seed, const std::string& out) {
    const TrainState state = load_train_state(ckpt);
    const VideoClip source = load_clip(src);
    std::vector<Tensor> ref_images;
    for (const auto& r : refs) ref_images.push_back(load_image(r));
    std::optional<Skill> skill;
    if (!skill_str.empty()) skill = skill_from_name(skill_str);

    const bool explicit_cfg = sub.count("--gt") || sub.count("--gv") || sub.count("--steps") ||
                              sub.count("--eta") || sub.count("--sampler") || sub.count("--seed");
    std::optional<GuidanceConfig> cfg;
    if (explicit_cfg) {
        GuidanceConfig g;
        const auto table = SkillGuidanceTable::defaults();
        std::tie(g.g_T, g.g_V) = table.lookup(skill.value_or(Skill::addition));
        if (sub.count("--gt")) g.g_T = gt;
        if (sub.count("--gv")) g.g_V = gv;
        g.steps = steps;
        g.eta = eta;
        g.sampler = sampler == "ddpm" ? SamplerKind::ddpm : SamplerKind::ddim;
        g.seed = seed;
        cfg = g;
    }

    const IdentityCodec codec;
    const UNetConfig& ucfg = state.denoiser.config();
    const NoiseSchedule sched = NoiseSchedule::linear(ucfg.T_max, ucfg.beta_start, ucfg.beta_end);
    EditResult res = edit(state, codec, sched, source, instruction, ref_images, skill, cfg);

    save_clip(res.video, (fs::path(out) / "edited").string());
    json resolved{{"subcommand", "edit"}, {"ckpt", ckpt},   {"src", src},
                  {"instruction", instruction}, {"skill", skill_str.empty() ? "unspecified" : skill_str}};
    write_json(fs::path(out) / "resolved_config.json", resolved);
    write_json(fs::path(out) / "run_log.json", res.run_log);
    append_log(out, res.run_log);
    std::cout << "resolved scales gt=" << res.run_log["g_T"].get<double>()
              << " gv=" << res.run_log["g_V"].get<double>() << "\n";
    return 0;
}

int cmd_eval(const std::string& bench, const std::string& outputs, const std::string& clients_kind,
             const std::string& report_path) {
    if (clients_kind != "mock")
        throw ConfigError("only mock clients ship with this build (got '" + clients_kind + "')");
    const DatasetManifest man = DatasetManifest::load(bench);
    const std::string base = fs::path(bench).parent_path().string();
    const MetricReport report = run_bench(man, base, outputs, EvalClients::mock());
    json j = report.to_json();
    j["clients"] = clients_kind;
    write_json(report_path, j);
    std::cout << report.table();
    return 0;
}

int cmd_synth(const std::string& pairs_path, const std::string& backends_kind,
              const std::string& out, std::uint64_t seed) {
    if (backends_kind != "mock")
        throw ConfigError("only mock backends ship with this build (got '" + backends_kind + "')");
    const DatasetManifest in = DatasetManifest::load(pairs_path);
    const std::string base = fs::path(pairs_path).parent_path().string();
    const SynthesisBackends backends = SynthesisBackends::mock();

    json resolved{{"subcommand", "synth"}, {"pairs", pairs_path}, {"backends", backends_kind},
                  {"seed", seed}};
    write_json(fs::path(out) / "resolved_config.json", resolved);

    DatasetManifest accepted;
    json report = json::array();
    std::uint64_t idx = 0;
    for (const auto& rec : in.records) {
        const std::uint64_t rec_seed = seed + idx++;
        const InstructionSample s = in.load_sample(rec, base);
        if (!s.target) {
            report.push_back({{"id", rec.id}, {"status", "skipped"}, {"why", "no target"}});
            continue;
        }
        const Tensor src_img = [&] {
            Tensor img({s.source.height(), s.source.width(), s.source.channels()});
            std::copy_n(s.source.frames().data(), img.numel(), img.data());
            return img;
        }();
        const Tensor tgt_img = [&] {
            Tensor img({s.target->height(), s.target->width(), s.target->channels()});
            std::copy_n(s.target->frames().data(), img.numel(), img.data());
            return img;
        }();
        const PairResult pr =
            synthesize_pair(src_img, tgt_img, rec.instruction, backends, rec_seed);
        const FilterDecision d = filter_pair(pr.source_report, pr.target_report);
        json row{{"id", rec.id}, {"status", d.accept ? "accepted" : "rejected"},
                 {"caption", pr.caption}, {"reasons", d.reasons}};
        report.push_back(row);
        if (!d.accept) continue;

        ManifestRecord out_rec = rec;
        out_rec.source_dir = rec.id + "/src";
        out_rec.target_dir = rec.id + "/tgt";
        out_rec.mask_dir.reset();
        out_rec.provenance = "synth-mock";
        save_clip(pr.source, (fs::path(out) / rec.id / "src").string());
        save_clip(pr.target, (fs::path(out) / rec.id / "tgt").string());
        accepted.records.push_back(std::move(out_rec));
    }
    accepted.save((fs::path(out) / "manifest.json").string());
    write_json(fs::path(out) / "synth_report.json", report);
    std::cout << "accepted " << accepted.records.size() << " of " << in.records.size()
              << " pairs\n";
    return 0;
}

int cmd_analyze(const std::string& ckpt, const std::string& data_path, const std::string& out) {
    const TrainState state = load_train_state(ckpt);
    const DatasetManifest man = DatasetManifest::load(data_path);
    const std::string base = fs::path(data_path).parent_path().string();
    std::vector<InstructionSample> samples;
    for (const auto& rec : man.records) samples.push_back(man.load_sample(rec, base));

    const auto rows = export_query_projection(state.conditioner, samples);
    fs::create_directories(out);
    write_projection_csv(rows, (fs::path(out) / "queries.csv").string());

    // static scatter, one palette color per skill
    const int S = 256, margin = 12;
    png::Image img;
    img.height = S;
    img.width = S;
    img.channels = 3;
    img.pixels.assign(static_cast<size_t>(S) * S * 3, 255);
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& r : rows) {
        xmin = std::min(xmin, r.x);
        xmax = std::max(xmax, r.x);
        ymin = std::min(ymin, r.y);
        ymax = std::max(ymax, r.y);
    }
    const double xs = xmax > xmin ? xmax - xmin : 1.0, ys = ymax > ymin ? ymax - ymin : 1.0;
    for (const auto& r : rows) {
        const int px = margin + static_cast<int>((r.x - xmin) / xs * (S - 2 * margin));
        const int py = margin + static_cast<int>((r.y - ymin) / ys * (S - 2 * margin));
        const auto& rgb = shape_palette()[static_cast<size_t>(skill_from_name(r.skill)) %
                                          shape_palette().size()]
                              .rgb;
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                const int y = py + dy, x = px + dx;
                if (y < 0 || y >= S || x < 0 || x >= S || dx * dx + dy * dy > 4) continue;
                for (int c = 0; c < 3; ++c)
                    img.pixels[(static_cast<size_t>(y) * S + x) * 3 + c] =
                        static_cast<std::uint8_t>(rgb[c] * 255.0 + 0.5);
            }
    }
    png::write_file((fs::path(out) / "queries.png").string(), img);

    json resolved{{"subcommand", "analyze"}, {"ckpt", ckpt}, {"data", data_path},
                  {"rows", rows.size()}};
    write_json(fs::path(out) / "resolved_config.json", resolved);
    std::cout << "projected " << rows.size() << " samples\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"veggie: instruction-driven toy video editing toolkit"};
    app.require_subcommand(1);

    // synth-toy
    auto* st = app.add_subcommand("synth-toy", "generate the procedural moving-shapes dataset");
    std::vector<std::string> st_skills{"all"};
    int st_count = 64, st_H = 32, st_W = 32, st_n = 8;
    std::uint64_t st_seed = 0;
    std::string st_out;
    st->add_option("--skills", st_skills, "skill names or 'all'");
    st->add_option("--count", st_count, "number of samples");
    st->add_option("--seed", st_seed, "generator seed");
    st->add_option("--height", st_H);
    st->add_option("--width", st_W);
    st->add_option("--frames", st_n);
    st->add_option("--out", st_out, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "run one curriculum stage");
    int tr_stage = 1, tr_steps = 0, tr_batch = 0, tr_frames = 0, tr_ckpt_every = 0;
    double tr_lr = 0.0;
    std::uint64_t tr_seed = 0;
    std::string tr_data, tr_out, tr_init, tr_config, tr_model_config;
    tr->add_option("--stage", tr_stage)->check(CLI::Range(1, 2));
    tr->add_option("--data", tr_data, "dataset manifest.json")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--seed", tr_seed);
    tr->add_option("--init", tr_init, "checkpoint to start from");
    tr->add_option("--config", tr_config, "stage-plan JSON file");
    tr->add_option("--model-config", tr_model_config, "model hyperparameter JSON file");
    tr->add_option("--steps", tr_steps);
    tr->add_option("--lr", tr_lr);
    tr->add_option("--batch", tr_batch);
    tr->add_option("--frames", tr_frames);
    tr->add_option("--checkpoint-every", tr_ckpt_every);

    // edit
    auto* ed = app.add_subcommand("edit", "apply an instruction to a source clip");
    std::string ed_ckpt, ed_src, ed_instruction, ed_skill, ed_sampler = "ddim", ed_out;
    std::vector<std::string> ed_refs;
    double ed_gt = 0, ed_gv = 0, ed_eta = 0;
    int ed_steps = 50;
    std::uint64_t ed_seed = 0;
    ed->add_option("--ckpt", ed_ckpt)->required();
    ed->add_option("--src", ed_src, "source clip directory")->required();
    ed->add_option("--instruction", ed_instruction)->required();
    ed->add_option("--ref", ed_refs, "reference image PNGs");
    ed->add_option("--skill", ed_skill, "skill hint for guidance scales");
    ed->add_option("--gt", ed_gt, "task guidance scale");
    ed->add_option("--gv", ed_gv, "video guidance scale");
    ed->add_option("--steps", ed_steps);
    ed->add_option("--eta", ed_eta);
    ed->add_option("--sampler", ed_sampler)->check(CLI::IsMember({"ddim", "ddpm"}));
    ed->add_option("--seed", ed_seed);
    ed->add_option("--out", ed_out)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "score model outputs against a benchmark manifest");
    std::string ev_bench, ev_outputs, ev_clients = "mock", ev_report;
    ev->add_option("--bench", ev_bench)->required();
    ev->add_option("--outputs", ev_outputs)->required();
    ev->add_option("--clients", ev_clients)->check(CLI::IsMember({"mock", "remote"}));
    ev->add_option("--report", ev_report)->required();

    // synth
    auto* sy = app.add_subcommand("synth", "build and filter video pairs from image pairs");
    std::string sy_pairs, sy_backends = "mock", sy_out;
    std::uint64_t sy_seed = 0;
    sy->add_option("--pairs", sy_pairs, "input manifest.json")->required();
    sy->add_option("--backends", sy_backends)->check(CLI::IsMember({"mock", "remote"}));
    sy->add_option("--seed", sy_seed);
    sy->add_option("--out", sy_out)->required();

    // analyze
    auto* an = app.add_subcommand("analyze", "project grounded task queries to 2D");
    std::string an_ckpt, an_data, an_out;
    an->add_option("--ckpt", an_ckpt)->required();
    an->add_option("--data", an_data, "manifest.json with >=2 skills")->required();
    an->add_option("--out", an_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (st->parsed())
            return cmd_synth_toy(st_skills, st_count, st_seed, st_out, st_H, st_W, st_n);
        if (tr->parsed())
            return cmd_train(tr_stage, tr_data, tr_out, tr_seed, tr_init, tr_config,
                             tr_model_config, *tr);
        if (ed->parsed())
            return cmd_edit(ed_ckpt, ed_src, ed_instruction, ed_refs, ed_skill, *ed, ed_gt, ed_gv,
                            ed_steps, ed_eta, ed_sampler, ed_seed, ed_out);
        if (ev->parsed()) return cmd_eval(ev_bench, ev_outputs, ev_clients, ev_report);
        if (sy->parsed()) return cmd_synth(sy_pairs, sy_backends, sy_out, sy_seed);
        if (an->parsed()) return cmd_analyze(an_ckpt, an_data, an_out);
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
