#include <fstream>

#include "vctrl/control_extractors.hpp"
#include "vctrl/error.hpp"
#include "vctrl/tensor_io.hpp"

namespace vctrl {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const char* shape_name(ShapeType s) {
    switch (s) {
        case ShapeType::square: return "square";
        case ShapeType::disc: return "disc";
        case ShapeType::stick: return "stick";
    }
    return "?";
}

ShapeType shape_from(const std::string& s) {
    if (s == "square") return ShapeType::square;
    if (s == "disc") return ShapeType::disc;
    if (s == "stick") return ShapeType::stick;
    throw FormatError("unknown shape '" + s + "'");
}

ordered_json track_json(const ShapeTrack& s) {
    ordered_json j;
    j["type"] = shape_name(s.type);
    j["color"] = s.color;
    j["motion"] = s.motion == MotionType::linear ? "linear" : "circular";
    j["size"] = s.size;
    j["start"] = s.start;
    j["velocity"] = s.velocity;
    j["pivot"] = s.pivot;
    j["radius"] = s.radius;
    j["omega"] = s.omega;
    j["phase"] = s.phase;
    return j;
}

ShapeTrack track_from(const json& j) {
    ShapeTrack s;
    s.type = shape_from(j.at("type").get<std::string>());
    s.color = j.at("color").get<int>();
    const auto motion = j.at("motion").get<std::string>();
    if (motion != "linear" && motion != "circular") throw FormatError("unknown motion '" + motion + "'");
    s.motion = motion == "linear" ? MotionType::linear : MotionType::circular;
    s.size = j.at("size").get<double>();
    s.start = j.at("start").get<std::array<double, 2>>();
    s.velocity = j.at("velocity").get<std::array<double, 2>>();
    s.pivot = j.at("pivot").get<std::array<double, 2>>();
    s.radius = j.at("radius").get<double>();
    s.omega = j.at("omega").get<double>();
    s.phase = j.at("phase").get<double>();
    return s;
}

void write_json(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace

ordered_json keypoints_to_json(const std::vector<KeypointFrame>& frames) {
    ordered_json arr = ordered_json::array();
    for (const KeypointFrame& f : frames) {
        ordered_json j;
        j["points"] = f.points;
        j["visible"] = f.visible;
        j["bbox_area"] = f.bbox_area;
        arr.push_back(std::move(j));
    }
    return ordered_json{{"frames", std::move(arr)}};
}

std::vector<KeypointFrame> keypoints_from_json(const json& j) {
    std::vector<KeypointFrame> out;
    try {
        for (const json& f : j.at("frames")) {
            KeypointFrame kf;
            kf.points = f.at("points").get<std::vector<std::array<double, 2>>>();
            kf.visible = f.at("visible").get<std::vector<bool>>();
            kf.bbox_area = f.at("bbox_area").get<double>();
            if (kf.points.size() != kf.visible.size()) throw FormatError("keypoint/visibility count mismatch");
            if (!(kf.bbox_area > 0)) throw FormatError("bbox_area must be positive");
            out.push_back(std::move(kf));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("keypoints: ") + e.what());
    }
    return out;
}

void write_clip(const fs::path& dir, const ClipRecord& clip) {
    fs::create_directories(dir);
    save_video(dir / "video.vclt", clip.video);
    save_binary_volume(dir / "edges.vclt", clip.edges, TensorKind::edges);
    save_binary_volume(dir / "masks.vclt", clip.masks, TensorKind::masks);
    write_json(dir / "keypoints.json", keypoints_to_json(clip.keypoints));

    ordered_json meta;
    meta["caption_class"] = clip.caption_class;
    meta["seed"] = clip.seed;
    meta["fps"] = clip.video.fps;
    meta["background"] = clip.background;
    meta["canny"] = {{"low", clip.canny.low}, {"high", clip.canny.high}, {"sigma", clip.canny.sigma}};
    ordered_json shapes = ordered_json::array();
    for (const ShapeTrack& s : clip.shapes) shapes.push_back(track_json(s));
    meta["shapes"] = std::move(shapes);
    write_json(dir / "meta.json", meta);
}

ClipRecord read_clip(const fs::path& dir) {
    ClipRecord clip;
    clip.video = load_video(dir / "video.vclt");
    clip.edges = load_binary_volume(dir / "edges.vclt");
    clip.masks = load_binary_volume(dir / "masks.vclt");
    clip.keypoints = keypoints_from_json(read_json(dir / "keypoints.json"));
    const json meta = read_json(dir / "meta.json");
    try {
        clip.caption_class = meta.at("caption_class").get<int>();
        clip.seed = meta.at("seed").get<std::uint64_t>();
        clip.video.fps = meta.at("fps").get<double>();
        clip.background = meta.at("background").get<std::array<double, 3>>();
        const json& c = meta.at("canny");
        clip.canny = {c.at("low").get<double>(), c.at("high").get<double>(), c.at("sigma").get<double>()};
        for (const json& s : meta.at("shapes")) clip.shapes.push_back(track_from(s));
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + "/meta.json: " + e.what());
    }
    const auto same = [&](const BinaryVolume& v) {
        return v.frames == clip.video.frames() && v.height == clip.video.height() && v.width == clip.video.width();
    };
    if (!same(clip.edges) || !same(clip.masks)) throw FormatError(dir.string() + ": annotation shape differs from video");
    if (!clip.keypoints.empty() && clip.keypoints.size() != clip.video.frames())
        throw FormatError(dir.string() + ": keypoint frame count differs from video");
    if (clip.caption_class < 0 || clip.caption_class >= kCaptionClasses)
        throw FormatError(dir.string() + ": caption_class out of range");
    return clip;
}

}  // namespace vctrl
