#include "vctrl/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "vctrl/error.hpp"
#include "vctrl/latent_codec.hpp"

namespace vctrl {

namespace fs = std::filesystem;

std::size_t worker_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VCTRL_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) n = static_cast<std::size_t>(v);
    }
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(worker_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex lock;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> g(lock);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::vector<NamedClip> load_dataset(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("no dataset manifest at " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("dataset manifest: " + std::string(e.what()));
    }
    if (!manifest.contains("clips") || !manifest["clips"].is_array())
        throw FormatError("dataset manifest has no clip list");
    std::vector<NamedClip> out;
    for (const auto& name : manifest["clips"]) {
        const auto n = name.get<std::string>();
        out.push_back({n, read_clip(dir / n)});
    }
    if (out.empty()) throw FormatError("dataset at " + dir.string() + " is empty");
    return out;
}

ControlVideo control_video_for(const ClipRecord& clip, ControlKind kind) {
    switch (kind) {
        case ControlKind::canny: return control_video_from_binary(clip.edges, kind);
        case ControlKind::mask: return control_video_from_binary(clip.masks, kind);
        case ControlKind::pose: {
            BinaryVolume dots(clip.video.frames(), clip.video.height(), clip.video.width());
            for (std::size_t t = 0; t < clip.keypoints.size(); ++t) {
                const KeypointFrame& kf = clip.keypoints[t];
                for (std::size_t k = 0; k < kf.points.size(); ++k) {
                    if (!kf.visible[k]) continue;
                    const long cx = static_cast<long>(kf.points[k][0]), cy = static_cast<long>(kf.points[k][1]);
                    for (long y = cy - 1; y <= cy + 1; ++y)
                        for (long x = cx - 1; x <= cx + 1; ++x)
                            if (y >= 0 && x >= 0 && y < long(dots.height) && x < long(dots.width))
                                dots.at(t, std::size_t(y), std::size_t(x)) = 1;
                }
            }
            return control_video_from_binary(dots, kind);
        }
    }
    throw ParameterError("unknown control kind");
}

ControlBundle control_bundle_for(const ClipRecord& clip, ControlKind kind, PatchSpec patch) {
    const VideoShape shape{clip.video.frames(), clip.video.height(), clip.video.width()};
    TaskMask mask;
    if (kind == ControlKind::mask) {
        mask = build_task_mask(kind, shape, patch, std::nullopt, clip.masks);
    } else {
        std::vector<bool> flags(shape.frames, kind == ControlKind::canny);
        if (kind == ControlKind::pose)
            for (std::size_t t = 0; t < clip.keypoints.size() && t < shape.frames; ++t) flags[t] = true;
        mask = build_task_mask(kind, shape, patch, flags, std::nullopt);
    }
    return encode_control(control_video_for(clip, kind), mask, patch);
}

TrainingExample make_example(const ClipRecord& clip, const RunConfig& config, bool with_control) {
    TrainingExample ex;
    ex.z0 = to_model_space(encode(clip.video, config.model.patch).data);
    ex.prompt = clip.caption_class;
    if (with_control) ex.control = control_bundle_for(clip, config.data.control, config.model.patch).z_m;
    return ex;
}

std::uint64_t sample_seed(std::uint64_t run_seed, std::size_t index) {
    return run_seed * 0x100000001B3ULL + 0x5EED + index;
}

std::vector<VideoTensor> sample_videos(const std::vector<NamedClip>& clips, std::size_t count, const BaseParams& base,
                                       const VCtrlParams* adapter, const NetworkSpec* spec, const RunConfig& config) {
    count = std::min(count, clips.size());
    const NoiseSchedule schedule = config.schedule();
    const DenoiseFn model = adapter ? controlled_denoiser_fn(base, *adapter, *spec) : base_denoiser_fn(base);
    const auto& g = base.config.grid;
    const std::array<std::size_t, 4> shape{std::size_t(g.f), std::size_t(g.h), std::size_t(g.w),
                                           std::size_t(base.config.latent_channels)};
    std::vector<VideoTensor> out(count);
    parallel_for(count, [&](std::size_t i) {
        const ClipRecord& clip = clips[i].clip;
        Conditioning cond{clip.caption_class, std::nullopt};
        if (adapter) cond.control = control_bundle_for(clip, config.data.control, config.model.patch).z_m;
        const Tensor4 z = sample(model, schedule, shape, cond, sample_seed(config.control_train.seed, i));
        out[i] = decode(LatentTensor{from_model_space(z), config.model.patch}, clip.video.fps);
    });
    return out;
}

}  // namespace vctrl
