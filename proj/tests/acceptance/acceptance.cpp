// Acceptance harness: one PASS/FAIL line per criterion.
//
//   acceptance [--work DIR] [--only 1,3,9]
//
// Criteria 2, 9 and 12 share one desk-scale run under <work>/desk.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vctrl/cli.hpp"
#include "vctrl/config.hpp"
#include "vctrl/control_extractors.hpp"
#include "vctrl/latent_codec.hpp"
#include "vctrl/metrics.hpp"
#include "vctrl/pipeline.hpp"
#include "vctrl/tensor_io.hpp"

#ifndef VCTRL_SOURCE_DIR
#define VCTRL_SOURCE_DIR "."
#endif

using namespace vctrl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void report(int id, const char* name, const Outcome& o) {
    std::printf("%s %2d %-26s %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

void progress(const std::string& s) {
    std::fprintf(stderr, "  .. %s\n", s.c_str());
    std::fflush(stderr);
}

// ---- 1 ----------------------------------------------------------------------------

Outcome zero_init_noop() {
    BaseConfig bc;
    bc.latent_channels = 12;
    bc.grid = {1, 2, 2};
    bc.width = 16;
    bc.heads = 2;
    bc.blocks = 12;
    bc.mlp_ratio = 2;
    bc.classes = 4;
    const BaseParams base = init_base(bc, 1);
    VCtrlConfig ac;
    ac.control_channels = 13;
    ac.width = 8;
    ac.heads = 2;
    ac.mlp_ratio = 2;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> t_pick(1, 50), c_pick(0, 3);
    int configs = 0, draws = 0, mismatches = 0;
    for (Layout layout : {Layout::even, Layout::end, Layout::space}) {
        for (SizeRatio ratio : {SizeRatio::small, SizeRatio::medium, SizeRatio::large}) {
            const NetworkSpec spec = make_network_spec(12, layout, ratio);
            const VCtrlParams adapter = init_adapter(ac, bc.width, spec.control_blocks, 3 + configs);
            ++configs;
            for (int i = 0; i < 100; ++i) {
                const LatentTensor z{standard_normal({1, 2, 2, 12}, rng), {1, 2}};
                ControlBundle b{Tensor4(1, 2, 2, 13), {1, 2}};
                for (auto& x : b.z_m.data) x = u(rng);
                const int t = t_pick(rng), c = c_pick(rng);
                const auto ctrl = controlled_forward(z, t, c, b, base, adapter, spec);
                const auto plain = base_forward(base, z, t, c);
                const auto& a = ctrl.eps_hat.data.data;
                const auto& p = plain.eps_hat.data.data;
                if (a.size() != p.size() || std::memcmp(a.data(), p.data(), a.size() * sizeof(double)) != 0) ++mismatches;
                ++draws;
            }
        }
    }
    return {mismatches == 0, fmt("%d layout/ratio configs, %d draws, %d not bit-exact", configs, draws, mismatches)};
}

// ---- 3 ----------------------------------------------------------------------------

Outcome index_oracle() {
    int pairs = 0, bad = 0;
    for (int m = 1; m <= 64; ++m) {
        for (int n = 1; n <= m; ++n) {
            std::vector<int> expect;
            for (int k = 1; k <= n; ++k) expect.push_back((k - 1) * (m / n) + 1);
            if (control_indices(m, n, Layout::space) != expect) ++bad;
            ++pairs;
        }
    }
    const bool spot = control_indices(30, 6, Layout::space) == std::vector<int>{1, 6, 11, 16, 21, 26} &&
                      control_indices(42, 5, Layout::space) == std::vector<int>{1, 9, 17, 25, 33};
    return {bad == 0 && spot, fmt("%d (M,N) pairs, %d mismatches, spot values %s", pairs, bad, spot ? "ok" : "wrong")};
}

// ---- 4 ----------------------------------------------------------------------------

Outcome pool_oracle() {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 1);
    double worst = 0;
    bool identity = true;
    for (int dc = 1; dc <= 32; ++dc) {
        for (int db = 1; db <= 32; ++db) {
            Mat x(3, dc);
            for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
            const Mat y = adaptive_avg_pool(x, db);
            for (Eigen::Index r = 0; r < x.rows(); ++r) {
                for (int j = 0; j < db; ++j) {
                    const int lo = static_cast<int>(std::floor(double(j) * dc / db));
                    const int hi = static_cast<int>(std::ceil(double(j + 1) * dc / db));
                    double s = 0;
                    for (int i = lo; i < hi; ++i) s += x(r, i);
                    worst = std::max(worst, std::abs(y(r, j) - s / (hi - lo)));
                }
            }
            if (dc == db && y != x) identity = false;
        }
    }
    return {worst < 1e-12 && identity, fmt("1024 width pairs, max abs error %.2e, identity %s", worst, identity ? "exact" : "broken")};
}

// ---- 5 ----------------------------------------------------------------------------

Outcome gradient_check() {
    const auto t0 = Clock::now();
    const auto r = testing::run_gradient_check(7, 1e-5, 1e-4);
    const double secs = seconds_since(t0);
    std::set<std::string> tensors(r.tensor_classes.begin(), r.tensor_classes.end());
    return {r.failures.empty() && r.worst_rel_error < 1e-4 && secs < 300,
            fmt("%zu entries over %zu tensors, worst rel %.2e (%s), %.1fs", r.checked, tensors.size(), r.worst_rel_error,
                r.worst_tensor.c_str(), secs)};
}

// ---- 6 ----------------------------------------------------------------------------

Outcome metric_oracles() {
    std::mt19937_64 rng(6);
    double worst = 0;
    int instances = 0;
    for (int i = 0; i < 100; ++i) {
        const auto p = oracle::random_volume(3, 6, 7, 0.3, rng), g = oracle::random_volume(3, 6, 7, 0.3, rng);
        worst = std::max(worst, std::abs(canny_matching(p, g).score - oracle::dice_oracle(p, g)));

        const auto a = oracle::random_video(3, 5, 5, rng), b = oracle::random_video(3, 5, 5, rng);
        auto m = oracle::random_volume(3, 5, 5, 0.5, rng);
        for (std::size_t t = 0; t < 3; ++t) m.at(t, 0, 0) = 1;
        worst = std::max(worst, std::abs(ms_consistency(a, b, m).score - oracle::ms_oracle(a, b, m)));

        std::vector<KeypointFrame> pk, gk;
        std::bernoulli_distribution vis(0.8);
        for (int t = 0; t < 3; ++t) {
            gk.push_back(oracle::random_pose(rng));
            pk.push_back(oracle::random_pose(rng));
            for (std::size_t k = 1; k < kKeypointCount; ++k) gk.back().visible[k] = vis(rng);
        }
        worst = std::max(worst, std::abs(pose_similarity(pk, gk).score - oracle::oks_oracle(pk, gk, coco_sigmas())));

        const int d = 1 + i % 6;
        std::normal_distribution<double> nd(0, 1);
        GaussianStats x{Eigen::VectorXd::NullaryExpr(d, [&] { return nd(rng); }), oracle::random_spd(d, rng)};
        GaussianStats y{Eigen::VectorXd::NullaryExpr(d, [&] { return nd(rng); }), oracle::random_spd(d, rng)};
        worst = std::max(worst, std::abs(frechet_distance(x, y) - oracle::frechet_oracle(x, y)));
        ++instances;
    }

    BinaryVolume p(1, 4, 4), g(1, 4, 4);
    for (int i = 0; i < 3; ++i) p.data[i] = 1;
    for (int i = 8; i < 13; ++i) g.data[i] = 1;
    const double dice = canny_matching(p, g).score;

    KeypointFrame gt;
    gt.bbox_area = 100;
    for (std::size_t k = 0; k < kKeypointCount; ++k) {
        gt.points.push_back({10, 10});
        gt.visible.push_back(true);
    }
    KeypointFrame moved = gt;
    // d^2 = 2 s^2 area gives exp(-1) per keypoint
    const auto sig = coco_sigmas();
    for (std::size_t k = 0; k < kKeypointCount; ++k) moved.points[k][0] += std::sqrt(2 * sig[k] * sig[k] * gt.bbox_area);
    const double oks = pose_similarity({moved}, {gt}).score;

    const double fd = frechet_distance({Eigen::VectorXd::Constant(1, 0.0), Eigen::MatrixXd::Constant(1, 1, 1.0)},
                                       {Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Constant(1, 1, 4.0)});

    const bool spots = std::abs(dice - 2.5e-6) < 1e-9 && std::abs(oks - std::exp(-1.0)) < 1e-12 && std::abs(fd - 2.0) < 1e-12;
    return {worst < 1e-9 && spots,
            fmt("%d instances x 4 metrics, max dev %.2e; dice %.4e, oks %.6f, fd1d %.6f", instances, worst, dice, oks, fd)};
}

// ---- 7 ----------------------------------------------------------------------------

Outcome codec_identity() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0, 1);
    int videos = 0, bad = 0;
    for (PatchSpec p : {PatchSpec{1, 2}, PatchSpec{2, 4}, PatchSpec{4, 4}}) {
        for (int i = 0; i < 100; ++i) {
            VideoTensor v{Tensor4(8, 16, 16, 3)};
            for (auto& x : v.data.data) x = u(rng);
            const auto back = decode(encode(v, p));
            if (back.data.dims != v.data.dims ||
                std::memcmp(back.data.data.data(), v.data.data.data(), v.data.size() * sizeof(double)) != 0)
                ++bad;
            ++videos;
        }
    }
    return {bad == 0, fmt("%d videos over patch specs (1,2),(2,4),(4,4), %d differ", videos, bad)};
}

// ---- 8 ----------------------------------------------------------------------------

Outcome sampler_oracle(const RunConfig& desk) {
    const NoiseSchedule s = desk.schedule();
    std::mt19937_64 rng(8);
    const Tensor4 target = standard_normal({4, 4, 4, 96}, rng);
    const DenoiseFn oracle = [&](const Tensor4& z, int t, const Conditioning&) {
        Tensor4 e = z;
        const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
        for (std::size_t i = 0; i < e.size(); ++i) e.data[i] = (z.data[i] - a * target.data[i]) / b;
        return e;
    };
    const Tensor4 out = sample(oracle, s, target.dims, {}, 9);
    double sq = 0;
    for (std::size_t i = 0; i < out.size(); ++i) sq += (out.data[i] - target.data[i]) * (out.data[i] - target.data[i]);
    const double rms = std::sqrt(sq / double(out.size()));
    return {rms < 0.05, fmt("T=%d, RMS error %.3e", s.steps, rms)};
}

// ---- 10 ---------------------------------------------------------------------------

BinaryImage read_golden(const fs::path& path) {
    std::ifstream in(path);
    std::vector<std::string> rows;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) rows.push_back(line);
    if (rows.empty()) return {};
    BinaryImage im(rows.size(), rows.front().size());
    for (std::size_t y = 0; y < rows.size(); ++y)
        for (std::size_t x = 0; x < rows[y].size(); ++x) im.at(y, x) = rows[y][x] == '1';
    return im;
}

VideoTensor concat(const VideoTensor& a, const VideoTensor& b) {
    VideoTensor v{Tensor4(a.frames() + b.frames(), a.height(), a.width(), 3)};
    std::copy(a.data.data.begin(), a.data.data.end(), v.data.data.begin());
    std::copy(b.data.data.begin(), b.data.data.end(), v.data.data.begin() + long(a.data.size()));
    return v;
}

Outcome pipeline_fixtures() {
    // hard cut: a synthetic clip followed by its negative, cut at every interior frame
    const auto clip = synth_dataset(1, 16, 16, 16, 10).front().video;
    VideoTensor neg = clip;
    for (auto& x : neg.data.data) x = 1.0 - x;
    int cuts = 0, exact = 0;
    for (std::size_t k = 2; k <= 14; k += 3) {
        VideoTensor head{Tensor4(k, 16, 16, 3)}, tail{Tensor4(16 - k, 16, 16, 3)};
        std::copy_n(clip.data.data.begin(), head.data.size(), head.data.data.begin());
        std::copy_n(neg.data.data.begin() + long(head.data.size()), tail.data.size(), tail.data.data.begin());
        ++cuts;
        exact += segment_scenes(concat(head, tail)) == std::vector<FrameRange>{{0, k}, {k, 16}};
    }

    // 2-pixel letterbox around a synthetic clip
    const auto inner = synth_dataset(1, 8, 16, 16, 11).front().video;
    VideoTensor boxed{Tensor4(8, 20, 16, 3)};
    for (std::size_t t = 0; t < 8; ++t)
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x)
                for (std::size_t c = 0; c < 3; ++c) boxed.data.at(t, y + 2, x, c) = inner.data.at(t, y, x, c);
    const CropBox box = detect_borders(boxed);
    const bool letterbox = box == CropBox{2, 18, 0, 16} && apply_crop(boxed, box).data == inner.data;

    Image square(16, 16, 0.0);
    for (std::size_t y = 4; y < 12; ++y)
        for (std::size_t x = 4; x < 12; ++x) square.at(y, x) = 1.0;
    const BinaryImage golden = read_golden(fs::path(VCTRL_SOURCE_DIR) / "tests" / "golden" / "canny_square_16x16.txt");
    const BinaryImage edges = canny_edges(square, 0.3, 0.6);
    const bool ring = golden.height == 16 && edges.height == 16 && edges.data == golden.data;

    return {exact == cuts && letterbox && ring,
            fmt("hard cut exact %d/%d, letterbox (%zu,%zu,%zu,%zu), golden ring %s (%zu px)", exact, cuts, box.top,
                box.bottom, box.left, box.right, ring ? "bit-exact" : "differs", edges.count())};
}

// ---- 11 ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome reproducibility(const fs::path& work) {
    const fs::path config = fs::path(VCTRL_SOURCE_DIR) / "configs" / "smoke.json";
    const fs::path a = work / "repro_a", b = work / "repro_b";
    fs::remove_all(a);
    fs::remove_all(b);
    std::ostringstream log, err;
    for (const fs::path& dir : {a, b}) {
        for (const auto& cmd : command_names()) {
            const int code = run_command(cmd, {config, 11, dir}, log, err);
            if (code != exit_ok) return {false, fmt("%s exited with %d: %s", cmd.c_str(), code, err.str().c_str())};
        }
    }
    int files = 0, differ = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        ++files;
        const fs::path twin = b / fs::relative(e.path(), a);
        if (!fs::exists(twin) || slurp(e.path()) != slurp(twin)) ++differ;
    }
    return {files > 0 && differ == 0, fmt("6 commands run twice, %d artifacts, %d differ", files, differ)};
}

// ---- 2, 9, 12 ---------------------------------------------------------------------

struct DeskRun {
    RunConfig config;
    fs::path root;
};

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

void desk_experiment(const fs::path& work, bool want2, bool want9, DeskRun& run) {
    const auto t0 = Clock::now();
    const fs::path config = fs::path(VCTRL_SOURCE_DIR) / "configs" / "desk.json";
    run.root = work / "desk";
    fs::remove_all(run.root);
    std::ostringstream log, err;
    for (const char* cmd : {"preprocess", "pretrain"}) {
        progress(std::string("desk ") + cmd);
        const int code = run_command(cmd, {config, std::nullopt, run.root}, log, err);
        if (code != exit_ok) {
            const Outcome o{false, fmt("%s exited with %d: %s", cmd, code, err.str().c_str())};
            if (want2) report(2, "frozen base", o);
            if (want9) report(9, "control effectiveness", o);
            return;
        }
    }
    run.config = load_config(config);
    resolve_paths(run.config, run.root);
    const RunConfig& c = run.config;
    const fs::path archive = c.paths.ckpt_dir / "base.vcnt";
    const std::string archive_hash = file_hash(archive);
    const BaseParams base = base_from_named_tensors(c.base_config(), load_archive(archive));
    const std::string mem_hash = params_hash(base);
    const auto clips = load_dataset(c.paths.dataset_dir);
    std::vector<TrainingExample> train;
    for (const auto& nc : clips) train.push_back(make_example(nc.clip, c, true));

    const NetworkSpec spec = c.network_spec();
    bool frozen_at_1000 = false, checked = false;
    std::string after_hash;
    progress(fmt("adapter training, %d steps", c.control_train.steps));
    const auto adapter = train_vctrl(train, base, spec, c.adapter_config(), c.schedule(), c.control_train, [&](const LossPoint& p) {
        if (p.step % 500 == 0) progress(fmt("adapter step %d loss %.4f", p.step, p.loss));
        if (p.step == 1000) {
            const fs::path copy = work / "base_after_1000.vcnt";
            save_archive(copy, to_named_tensors(base));
            after_hash = file_hash(copy);
            frozen_at_1000 = params_hash(base) == mem_hash && after_hash == archive_hash;
            checked = true;
        }
    });
    if (want2) {
        report(2, "frozen base",
               {checked && frozen_at_1000 && params_hash(base) == mem_hash,
                checked ? fmt("archive %s before, %s after 1000 adapter steps", archive_hash.c_str(), after_hash.c_str())
                        : std::string("adapter budget below 1000 steps")});
    }
    if (!want9) return;

    // held-out clips from a different data seed
    const auto held = synth_dataset(16, std::size_t(c.data.F), std::size_t(c.data.H), std::size_t(c.data.W),
                                    c.data.seed + 1000, c.data.canny);
    std::vector<NamedClip> val_clips;
    std::vector<TrainingExample> val, shuffled;
    for (std::size_t i = 0; i < held.size(); ++i) {
        val_clips.push_back({fmt("val_%02zu", i), held[i]});
        val.push_back(make_example(held[i], c, true));
    }
    shuffled = val;
    for (std::size_t i = 0; i < val.size(); ++i) shuffled[i].control = val[(i + 1) % val.size()].control;
    progress("validation loss");
    double l_true = 0, l_shuf = 0;
    for (std::uint64_t r = 0; r < 8; ++r) {
        l_true += validation_loss(val, base, &adapter.params, &spec, c.schedule(), 900 + r) / 8;
        l_shuf += validation_loss(shuffled, base, &adapter.params, &spec, c.schedule(), 900 + r) / 8;
    }
    const double rel = (l_shuf - l_true) / l_shuf;

    progress("sampling 16 controlled and 16 unconditioned videos");
    const auto controlled = sample_videos(val_clips, 16, base, &adapter.params, &spec, c);
    const auto plain = sample_videos(val_clips, 16, base, nullptr, nullptr, c);
    std::vector<double> cm_c, cm_b;
    for (std::size_t i = 0; i < 16; ++i) {
        cm_c.push_back(canny_matching(canny_volume(controlled[i], c.data.canny), held[i].edges).score);
        cm_b.push_back(canny_matching(canny_volume(plain[i], c.data.canny), held[i].edges).score);
    }
    const double gain = mean_of(cm_c) - mean_of(cm_b);
    const double minutes = seconds_since(t0) / 60.0;
    report(9, "control effectiveness",
           {rel > 0.05 && gain >= 0.05 && minutes < 45.0,
            fmt("val loss true %.4f vs shuffled %.4f (rel %.1f%%); canny matching %.3f vs base %.3f (+%.3f); %.1f min",
                l_true, l_shuf, 100 * rel, mean_of(cm_c), mean_of(cm_b), gain, minutes)});
}

Outcome ablation(const DeskRun& run, const fs::path& work) {
    if (run.root.empty()) return {false, "desk run unavailable"};
    json cfg = json::parse(slurp(fs::path(VCTRL_SOURCE_DIR) / "configs" / "desk.json"));
    cfg["control_train"]["steps"] = 2000;
    cfg["paths"]["report_dir"] = "reports_ablation";
    const fs::path path = work / "ablation.json";
    std::ofstream(path) << cfg.dump(2);
    std::ostringstream log, err;
    const auto t0 = Clock::now();
    progress("ablate-layout, 3 x 2000 steps");
    const int code = run_command("ablate-layout", {path, std::nullopt, run.root}, log, err);
    if (code != exit_ok) return {false, fmt("ablate-layout exited with %d: %s", code, err.str().c_str())};
    const json r = json::parse(slurp(run.root / "reports_ablation" / "ablation.json"));
    const std::string csv = slurp(run.root / "reports_ablation" / "ablation.csv");
    bool ok = r["rows"].size() == 3 && r["steps"] == 2000 &&
              csv.rfind("layout,N,indices,final_loss,canny_matching,frechet\n", 0) == 0;
    std::string rows;
    const char* names[] = {"even", "end", "space"};
    for (std::size_t i = 0; ok && i < 3; ++i) {
        const auto& row = r["rows"][i];
        const double cm = row["canny_matching"].get<double>(), fd = row["frechet"].get<double>();
        ok = row["layout"] == names[i] && std::isfinite(cm) && std::isfinite(fd);
        rows += fmt("%s%s cm %.3f fd %.4f", i ? ", " : "", names[i], cm, fd);
    }
    return {ok, rows + fmt(" (%.1f min)", seconds_since(t0) / 60.0)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vctrl acceptance criteria"};
    std::string work = (fs::temp_directory_path() / "vctrl_acceptance").string();
    std::vector<int> only;
    app.add_option("--work", work, "scratch directory");
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);
    auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

    try {
        const RunConfig desk = load_config(fs::path(VCTRL_SOURCE_DIR) / "configs" / "desk.json");
        if (want(1)) report(1, "zero-init no-op", zero_init_noop());
        if (want(3)) report(3, "index-set oracle", index_oracle());
        if (want(4)) report(4, "adaptive-pool oracle", pool_oracle());
        if (want(5)) report(5, "gradient correctness", gradient_check());
        if (want(6)) report(6, "metric oracles", metric_oracles());
        if (want(7)) report(7, "codec exactness", codec_identity());
        if (want(8)) report(8, "sampler consistency", sampler_oracle(desk));
        if (want(10)) report(10, "pipeline fixtures", pipeline_fixtures());
        if (want(11)) report(11, "reproducibility", reproducibility(work));
        DeskRun run;
        if (want(2) || want(9) || want(12)) desk_experiment(work, want(2), want(9), run);
        if (want(12)) report(12, "ablation harness", ablation(run, work));
    } catch (const std::exception& e) {
        std::printf("FAIL    harness error: %s\n", e.what());
        return 1;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
