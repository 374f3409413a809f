#include "vctrl/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vctrl/config.hpp"
#include "vctrl/error.hpp"
#include "vctrl/latent_codec.hpp"
#include "vctrl/metrics.hpp"
#include "vctrl/pipeline.hpp"
#include "vctrl/tensor_io.hpp"

namespace vctrl {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Context {
    RunConfig config;
    std::string config_hash;
    std::ostream& log;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigurationError("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("missing " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_curve(const fs::path& path, const std::vector<LossPoint>& curve) {
    std::string s = "step,loss,grad_norm,clipped_norm\n";
    for (const auto& p : curve)
        s += std::to_string(p.step) + "," + num(p.loss) + "," + num(p.grad_norm) + "," + num(p.clipped_norm) + "\n";
    write_text(path, s);
}

StepCallback progress(std::ostream& log, const char* what, int steps) {
    const int every = std::max(1, steps / 10);
    return [&log, what, every](const LossPoint& p) {
        if (p.step % every == 0) log << what << " step " << p.step << " loss " << num(p.loss) << "\n";
    };
}

std::vector<TrainingExample> examples(const std::vector<NamedClip>& clips, const RunConfig& c, bool with_control) {
    std::vector<TrainingExample> out;
    for (const auto& nc : clips) {
        const auto& v = nc.clip.video;
        if (v.frames() != std::size_t(c.data.F) || v.height() != std::size_t(c.data.H) || v.width() != std::size_t(c.data.W))
            throw ConfigurationError("clip " + nc.name + " does not match data F/H/W of the config");
        out.push_back(make_example(nc.clip, c, with_control));
    }
    return out;
}

// ---- checkpoints ---------------------------------------------------------------------

BaseParams load_base(const RunConfig& c) {
    const fs::path path = c.paths.ckpt_dir / "base.vcnt";
    if (!fs::exists(path)) throw ConfigurationError("no base checkpoint at " + path.string() + "; run pretrain first");
    return base_from_named_tensors(c.base_config(), load_archive(path));
}

struct AdapterCheckpoint {
    VCtrlParams params;
    NetworkSpec spec;
};

AdapterCheckpoint load_adapter(const RunConfig& c) {
    const fs::path path = c.paths.ckpt_dir / "adapter.vcnt";
    if (!fs::exists(path)) throw ConfigurationError("no adapter checkpoint at " + path.string() + "; run train-control first");
    const json meta = read_json(c.paths.ckpt_dir / "adapter.json");
    AdapterCheckpoint a;
    a.spec = spec_from_json(meta.at("spec"));
    a.params = adapter_from_named_tensors(c.adapter_config(), c.model.d_b, a.spec.control_blocks, load_archive(path));
    return a;
}

// ---- preprocess --------------------------------------------------------------------------

ClipRecord slice_frames(const ClipRecord& c, std::size_t start, std::size_t count) {
    ClipRecord out = c;
    const std::size_t H = c.video.height(), W = c.video.width();
    out.video.data = Tensor4(count, H, W, 3);
    std::copy_n(c.video.data.data.begin() + long(start * H * W * 3), count * H * W * 3, out.video.data.data.begin());
    auto slice = [&](const BinaryVolume& v) {
        BinaryVolume r(count, H, W);
        std::copy_n(v.data.begin() + long(start * H * W), count * H * W, r.data.begin());
        return r;
    };
    out.masks = slice(c.masks);
    out.edges = slice(c.edges);
    if (!c.keypoints.empty())
        out.keypoints.assign(c.keypoints.begin() + long(start), c.keypoints.begin() + long(start + count));
    return out;
}

ClipRecord crop_clip(const ClipRecord& c, const CropBox& box) {
    ClipRecord out = c;
    out.video = apply_crop(c.video, box);
    out.masks = apply_crop(c.masks, box);
    out.edges = apply_crop(c.edges, box);
    for (auto& kf : out.keypoints) {
        for (std::size_t k = 0; k < kf.points.size(); ++k) {
            kf.points[k][0] -= double(box.left);
            kf.points[k][1] -= double(box.top);
            const auto& p = kf.points[k];
            kf.visible[k] = kf.visible[k] && p[0] >= 0 && p[1] >= 0 && p[0] < double(box.right - box.left) &&
                            p[1] < double(box.bottom - box.top);
        }
    }
    return out;
}

struct Processed {
    ordered_json entry;
    std::vector<ClipRecord> outputs;
};

Processed process_source(const std::string& source, const ClipRecord& raw, std::size_t index, const RunConfig& c) {
    Processed r;
    r.entry["source"] = source;
    const auto segments = segment_scenes(raw.video, c.data.hamming_threshold);
    ordered_json segs = ordered_json::array(), outs = ordered_json::array(), dropped = ordered_json::array();
    for (const auto& [s, e] : segments) segs.push_back({s, e});
    const std::size_t F = std::size_t(c.data.F), H = std::size_t(c.data.H), W = std::size_t(c.data.W);
    std::mt19937_64 rng(sample_seed(c.data.seed, index));
    for (const auto& [s, e] : segments) {
        auto drop = [&](const std::string& reason) { dropped.push_back({{"segment", {s, e}}, {"reason", reason}}); };
        if (e - s < F) {
            drop("segment shorter than F");
            continue;
        }
        ClipRecord clip = slice_frames(raw, s, F);
        CropBox box;
        try {
            box = detect_borders(clip.video, c.data.border_std);
        } catch (const DegenerateInputError&) {
            drop("whole frame is border");
            continue;
        }
        clip = crop_clip(clip, box);
        if (clip.video.height() < H || clip.video.width() < W) {
            drop("smaller than H x W after border removal");
            continue;
        }
        const auto [dy, dx] = crop_offsets(clip.video.height(), clip.video.width(), H, W, rng);
        clip = crop_clip(clip, CropBox{std::size_t(dy), std::size_t(dy) + H, std::size_t(dx), std::size_t(dx) + W});
        clip.canny = c.data.canny;
        clip.edges = canny_volume(clip.video, c.data.canny);
        bool kept = true;
        for (const auto& f : default_filters())
            if (!f.keep(clip)) {
                drop("filter " + f.name);
                kept = false;
                break;
            }
        if (!kept) continue;
        outs.push_back({{"segment", {s, e}},
                        {"border_crop", {box.top, box.bottom, box.left, box.right}},
                        {"crop_offset", {dy, dx}}});
        r.outputs.push_back(std::move(clip));
    }
    r.entry["segments"] = segs;
    r.entry["outputs"] = outs;
    r.entry["dropped"] = dropped;
    return r;
}

int cmd_preprocess(Context& ctx) {
    const RunConfig& c = ctx.config;
    std::vector<std::pair<std::string, ClipRecord>> sources;
    if (!c.data.raw_dir.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(c.data.raw_dir))
            if (e.path().extension() == ".vclt") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ConfigurationError("no .vclt videos in " + c.data.raw_dir);
        for (const auto& f : files) {
            ClipRecord clip;
            clip.video = load_video(f);
            clip.masks = BinaryVolume(clip.video.frames(), clip.video.height(), clip.video.width());
            clip.edges = clip.masks;
            sources.emplace_back("raw:" + f.filename().string(), std::move(clip));
        }
    } else {
        // rendered at the target size; the pipeline still runs scene and border checks on them
        const auto clips = synth_dataset(std::size_t(c.data.n_clips), std::size_t(c.data.F), std::size_t(c.data.H),
                                         std::size_t(c.data.W), c.data.seed, c.data.canny);
        for (const auto& clip : clips) sources.emplace_back("synthetic:" + std::to_string(clip.seed), clip);
    }

    std::vector<Processed> done(sources.size());
    parallel_for(sources.size(), [&](std::size_t i) { done[i] = process_source(sources[i].first, sources[i].second, i, c); });

    ordered_json manifest;
    manifest["config_hash"] = ctx.config_hash;
    ordered_json names = ordered_json::array(), entries = ordered_json::array();
    std::vector<std::pair<std::string, const ClipRecord*>> to_write;
    for (auto& p : done) {
        for (std::size_t k = 0; k < p.outputs.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "clip_%04zu", to_write.size());
            p.entry["outputs"][k]["name"] = name;
            names.push_back(name);
            to_write.emplace_back(name, &p.outputs[k]);
        }
        entries.push_back(p.entry);
    }
    if (to_write.empty()) throw ConfigurationError("preprocessing kept no clips");
    fs::create_directories(c.paths.dataset_dir);
    parallel_for(to_write.size(), [&](std::size_t i) { write_clip(c.paths.dataset_dir / to_write[i].first, *to_write[i].second); });
    manifest["clips"] = names;
    manifest["sources"] = entries;
    write_json(c.paths.dataset_dir / "manifest.json", manifest);
    ctx.log << "preprocess: " << sources.size() << " sources -> " << to_write.size() << " clips in "
            << c.paths.dataset_dir.string() << "\n";
    return exit_ok;
}

// ---- training ------------------------------------------------------------------------------

int cmd_pretrain(Context& ctx) {
    const RunConfig& c = ctx.config;
    const auto clips = load_dataset(c.paths.dataset_dir);
    const auto data = examples(clips, c, false);
    auto result = pretrain_base(data, c.base_config(), c.schedule(), c.train, progress(ctx.log, "pretrain", c.train.steps));
    fs::create_directories(c.paths.ckpt_dir);
    save_archive(c.paths.ckpt_dir / "base.vcnt", to_named_tensors(result.params));
    const BaseParams stored = load_base(c);
    ordered_json meta;
    meta["config_hash"] = ctx.config_hash;
    meta["steps"] = c.train.steps;
    meta["final_loss"] = result.curve.empty() ? 0.0 : result.curve.back().loss;
    meta["params_hash"] = params_hash(stored);
    write_json(c.paths.ckpt_dir / "base.json", meta);
    write_curve(c.paths.ckpt_dir / "base_curve.csv", result.curve);
    ctx.log << "pretrain: wrote " << (c.paths.ckpt_dir / "base.vcnt").string() << "\n";
    return exit_ok;
}

int cmd_train_control(Context& ctx) {
    const RunConfig& c = ctx.config;
    const BaseParams base = load_base(c);
    const std::string before = params_hash(base);
    const auto clips = load_dataset(c.paths.dataset_dir);
    const auto data = examples(clips, c, true);
    const NetworkSpec spec = c.network_spec();
    auto result = train_vctrl(data, base, spec, c.adapter_config(), c.schedule(), c.control_train,
                              progress(ctx.log, "train-control", c.control_train.steps));
    if (params_hash(base) != before) throw Error("base parameters changed during adapter training");
    fs::create_directories(c.paths.ckpt_dir);
    save_archive(c.paths.ckpt_dir / "adapter.vcnt", to_named_tensors(result.params));
    ordered_json meta;
    meta["config_hash"] = ctx.config_hash;
    meta["spec"] = spec_to_json(spec, c.model.d_c);
    meta["control"] = to_string(c.data.control);
    meta["steps"] = c.control_train.steps;
    meta["final_loss"] = result.curve.empty() ? 0.0 : result.curve.back().loss;
    meta["base_hash"] = before;
    write_json(c.paths.ckpt_dir / "adapter.json", meta);
    write_curve(c.paths.ckpt_dir / "adapter_curve.csv", result.curve);
    ctx.log << "train-control: wrote " << (c.paths.ckpt_dir / "adapter.vcnt").string() << "\n";
    return exit_ok;
}

// ---- sampling / evaluation ----------------------------------------------------------------

int cmd_sample(Context& ctx) {
    const RunConfig& c = ctx.config;
    const BaseParams base = load_base(c);
    const AdapterCheckpoint adapter = load_adapter(c);
    const auto clips = load_dataset(c.paths.dataset_dir);
    const std::size_t n = std::min(std::size_t(c.sample.count), clips.size());
    const auto videos = sample_videos(clips, n, base, &adapter.params, &adapter.spec, c);
    const fs::path dir = c.samples_dir();
    ordered_json names = ordered_json::array(), entries = ordered_json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const fs::path file = dir / clips[i].name / "video.vclt";
        fs::create_directories(file.parent_path());
        save_video(file, videos[i], TensorKind::sample);
        names.push_back(clips[i].name);
        entries.push_back({{"name", clips[i].name},
                           {"seed", sample_seed(c.control_train.seed, i)},
                           {"prompt", clips[i].clip.caption_class},
                           {"hash", file_hash(file)}});
    }
    write_json(dir / "manifest.json", ordered_json{{"config_hash", ctx.config_hash}, {"clips", names}, {"samples", entries}});
    ctx.log << "sample: wrote " << n << " videos to " << dir.string() << "\n";
    return exit_ok;
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

int cmd_evaluate(Context& ctx) {
    const RunConfig& c = ctx.config;
    const auto gt = load_dataset(c.paths.dataset_dir);
    const fs::path dir = c.samples_dir();
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < gt.size(); ++i)
        if (fs::exists(dir / gt[i].name / "video.vclt")) present.push_back(i);
    if (present.empty()) throw ConfigurationError("no generated videos under " + dir.string() + "; run sample first");

    std::vector<ordered_json> per_clip(present.size());
    std::vector<double> cm(present.size()), ms(present.size(), -1), ps(present.size(), -1);
    parallel_for(present.size(), [&](std::size_t k) {
        const NamedClip& g = gt[present[k]];
        const VideoTensor pred = load_video(dir / g.name / "video.vclt");
        ordered_json reports = ordered_json::array();
        ordered_json notes = ordered_json::array();
        const MetricReport edge = canny_matching(canny_volume(pred, g.clip.canny), g.clip.edges);
        cm[k] = edge.score;
        reports.push_back(edge.to_json());
        try {
            const MetricReport r = ms_consistency(pred, g.clip.video, g.clip.masks);
            ms[k] = r.score;
            reports.push_back(r.to_json());
        } catch (const DegenerateInputError& e) {
            notes.push_back(std::string("ms_consistency skipped: ") + e.what());
        }
        const fs::path kp = dir / g.name / "keypoints.json";
        if (!g.clip.keypoints.empty() && fs::exists(kp)) {
            const auto pred_kp = keypoints_from_json(read_json(kp));
            if (!pred_kp.empty()) {
                const MetricReport r = pose_similarity(pred_kp, g.clip.keypoints);
                ps[k] = r.score;
                reports.push_back(r.to_json());
            }
        }
        per_clip[k] = {{"clip", g.name}, {"reports", reports}, {"notes", notes}};
    });
    auto valid = [](const std::vector<double>& v) {
        std::vector<double> out;
        for (double x : v)
            if (x >= 0) out.push_back(x);
        return out;
    };
    const auto ms_ok = valid(ms), ps_ok = valid(ps);
    ordered_json summary;
    summary["clips"] = present.size();
    summary["canny_matching"] = mean(cm);
    summary["ms_consistency"] = ms_ok.empty() ? ordered_json(nullptr) : ordered_json(mean(ms_ok));
    summary["ms_consistency_clips"] = ms_ok.size();
    summary["pose_similarity"] = ps_ok.empty() ? ordered_json(nullptr) : ordered_json(mean(ps_ok));
    summary["pose_similarity_clips"] = ps_ok.size();
    ordered_json out;
    out["summary"] = summary;
    out["clips"] = per_clip;
    write_json(c.paths.report_dir / "metrics.json", out);
    ctx.log << "evaluate: canny_matching " << num(mean(cm)) << " over " << present.size() << " clips\n";
    return exit_ok;
}

// ---- layout ablation --------------------------------------------------------------------------

int cmd_ablate_layout(Context& ctx) {
    const RunConfig& c = ctx.config;
    if (c.sample.count < 2) throw ConfigurationError("ablate-layout needs sample.count >= 2 for the Frechet statistics");
    const BaseParams base = load_base(c);
    const auto clips = load_dataset(c.paths.dataset_dir);
    const auto data = examples(clips, c, true);
    const std::size_t n = std::min(std::size_t(c.sample.count), clips.size());
    std::vector<VideoTensor> real;
    for (std::size_t i = 0; i < n; ++i) real.push_back(clips[i].clip.video);

    ordered_json rows = ordered_json::array();
    std::string csv = "layout,N,indices,final_loss,canny_matching,frechet\n";
    for (Layout layout : {Layout::even, Layout::end, Layout::space}) {
        const NetworkSpec spec = make_network_spec(c.model.M, layout, c.model.ratio);
        const auto trained = train_vctrl(data, base, spec, c.adapter_config(), c.schedule(), c.control_train,
                                         progress(ctx.log, ("ablate " + to_string(layout)).c_str(), c.control_train.steps));
        const auto videos = sample_videos(clips, n, base, &trained.params, &spec, c);
        std::vector<double> cm(n);
        for (std::size_t i = 0; i < n; ++i)
            cm[i] = canny_matching(canny_volume(videos[i], clips[i].clip.canny), clips[i].clip.edges).score;
        const double fd = frechet_video_distance(videos, real);
        const double loss = trained.curve.empty() ? 0.0 : trained.curve.back().loss;
        std::string idx;
        for (int i : spec.indices) idx += (idx.empty() ? "" : " ") + std::to_string(i);
        rows.push_back({{"layout", to_string(layout)},
                        {"N", spec.control_blocks},
                        {"indices", spec.indices},
                        {"final_loss", loss},
                        {"canny_matching", mean(cm)},
                        {"frechet", fd}});
        csv += to_string(layout) + "," + std::to_string(spec.control_blocks) + "," + idx + "," + num(loss) + "," +
               num(mean(cm)) + "," + num(fd) + "\n";
        ctx.log << "ablate " << to_string(layout) << ": canny_matching " << num(mean(cm)) << " frechet " << num(fd) << "\n";
    }
    ordered_json out;
    out["config_hash"] = ctx.config_hash;
    out["steps"] = c.control_train.steps;
    out["seed"] = c.control_train.seed;
    out["samples"] = n;
    out["rows"] = rows;
    write_json(c.paths.report_dir / "ablation.json", out);
    write_text(c.paths.report_dir / "ablation.csv", csv);
    return exit_ok;
}

}  // namespace

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"preprocess", "pretrain", "train-control", "sample", "evaluate", "ablate-layout"};
    return names;
}

int run_command(const std::string& command, const CommandOptions& options, std::ostream& log, std::ostream& err) {
    try {
        RunConfig config = load_config(options.config);
        if (options.seed) override_seed(config, *options.seed);
        const std::string hash = fnv1a_hex(std::span<const char>(config_to_json(config).dump()));
        resolve_paths(config, options.out ? *options.out : fs::absolute(options.config).parent_path());
        Context ctx{config, hash, log};
        if (command == "preprocess") return cmd_preprocess(ctx);
        if (command == "pretrain") return cmd_pretrain(ctx);
        if (command == "train-control") return cmd_train_control(ctx);
        if (command == "sample") return cmd_sample(ctx);
        if (command == "evaluate") return cmd_evaluate(ctx);
        if (command == "ablate-layout") return cmd_ablate_layout(ctx);
        err << "vctrl: unknown command '" << command << "'\n";
        return exit_usage;
    } catch (const NumericError& e) {
        err << "vctrl " << command << ": numeric failure: " << e.what() << "\n";
        return exit_numeric;
    } catch (const Error& e) {
        err << "vctrl " << command << ": " << e.what() << "\n";
        return exit_usage;
    } catch (const fs::filesystem_error& e) {
        err << "vctrl " << command << ": " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        err << "vctrl " << command << ": internal error: " << e.what() << "\n";
        return exit_internal;
    }
}

int cli_main(int argc, char** argv) {
    CLI::App app{"Controllable video diffusion toolkit"};
    app.require_subcommand(1);
    CommandOptions options;
    std::uint64_t seed = 0;
    std::string out;
    std::string chosen;
    for (const auto& name : command_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", options.config, "run configuration (JSON)")->required();
        sub->add_option("--seed", seed, "override every seed in the config");
        sub->add_option("--out", out, "root directory for relative paths");
        sub->callback([&chosen, name] { chosen = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }
    for (auto* sub : app.get_subcommands()) {
        if (sub->count("--seed")) options.seed = seed;
        if (sub->count("--out")) options.out = fs::path(out);
    }
    return run_command(chosen, options, std::cout, std::cerr);
}

}  // namespace vctrl
