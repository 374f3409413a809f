#include "vctrl/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vctrl/error.hpp"

namespace vctrl {

namespace {

constexpr char kTensorMagic[4] = {'V', 'C', 'L', 'T'};
constexpr char kArchiveMagic[4] = {'V', 'C', 'N', 'T'};

template <class T>
void put_le(std::ostream& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::istream& in) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw FormatError("unexpected end of stream");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

void put_f32(std::ostream& out, double value) {
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

double get_f32(std::istream& in) { return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in))); }

void check_magic(std::istream& in, const char (&magic)[4]) {
    char buf[4];
    if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
        throw FormatError(std::string("bad magic, expected ") + std::string(magic, 4));
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return in;
}

}  // namespace

void write_tensor_file(std::ostream& out, const TensorFile& file) {
    const bool tagged = file.kind != TensorKind::latent;
    out.write(kTensorMagic, 4);
    put_le<std::uint16_t>(out, tagged ? 2 : 1);
    for (auto d : file.tensor.dims) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(file.patch.temporal));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(file.patch.spatial));
    if (tagged) put_le<std::uint16_t>(out, static_cast<std::uint16_t>(file.kind));
    for (double v : file.tensor.data) put_f32(out, v);
}

TensorFile read_tensor_file(std::istream& in) {
    check_magic(in, kTensorMagic);
    const auto version = get_le<std::uint16_t>(in);
    if (version != 1 && version != 2) throw FormatError("unsupported VCLT version " + std::to_string(version));
    TensorFile file;
    std::array<std::size_t, 4> dims{};
    for (auto& d : dims) d = get_le<std::uint32_t>(in);
    file.patch.temporal = get_le<std::uint16_t>(in);
    file.patch.spatial = get_le<std::uint16_t>(in);
    file.kind = version == 2 ? static_cast<TensorKind>(get_le<std::uint16_t>(in)) : TensorKind::latent;
    file.tensor = Tensor4(dims[0], dims[1], dims[2], dims[3]);
    for (auto& v : file.tensor.data) v = get_f32(in);
    return file;
}

void save_latent(const std::filesystem::path& path, const LatentTensor& latent) {
    auto out = open_out(path);
    write_tensor_file(out, {latent.data, latent.patch, TensorKind::latent});
}

LatentTensor load_latent(const std::filesystem::path& path) {
    auto in = open_in(path);
    auto file = read_tensor_file(in);
    if (file.kind != TensorKind::latent) throw FormatError(path.string() + " does not hold a latent");
    return {std::move(file.tensor), file.patch};
}

void save_video(const std::filesystem::path& path, const VideoTensor& video, TensorKind kind) {
    auto out = open_out(path);
    write_tensor_file(out, {video.data, {1, 1}, kind});
}

VideoTensor load_video(const std::filesystem::path& path) {
    auto in = open_in(path);
    auto file = read_tensor_file(in);
    if (file.tensor.dims[3] != 3) throw FormatError(path.string() + " is not a 3-channel video");
    VideoTensor v;
    v.data = std::move(file.tensor);
    return v;
}

void save_binary_volume(const std::filesystem::path& path, const BinaryVolume& volume, TensorKind kind) {
    Tensor4 t(volume.frames, volume.height, volume.width, 1);
    for (std::size_t i = 0; i < volume.data.size(); ++i) t.data[i] = volume.data[i];
    auto out = open_out(path);
    write_tensor_file(out, {t, {1, 1}, kind});
}

BinaryVolume load_binary_volume(const std::filesystem::path& path) {
    auto in = open_in(path);
    auto file = read_tensor_file(in);
    const auto& t = file.tensor;
    if (t.dims[3] != 1) throw FormatError(path.string() + " is not a single-channel volume");
    BinaryVolume v(t.dims[0], t.dims[1], t.dims[2]);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (t.data[i] != 0.0 && t.data[i] != 1.0) throw FormatError(path.string() + " holds non-binary values");
        v.data[i] = t.data[i] != 0.0 ? 1 : 0;
    }
    return v;
}

void write_archive(std::ostream& out, const std::vector<NamedTensor>& tensors) {
    out.write(kArchiveMagic, 4);
    put_le<std::uint16_t>(out, 1);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        std::size_t n = 1;
        for (auto d : t.shape) {
            put_le<std::uint32_t>(out, d);
            n *= d;
        }
        if (n != t.values.size()) throw FormatError("tensor " + t.name + " shape disagrees with its payload");
        for (double v : t.values) put_f32(out, v);
    }
}

std::vector<NamedTensor> read_archive(std::istream& in) {
    check_magic(in, kArchiveMagic);
    if (get_le<std::uint16_t>(in) != 1) throw FormatError("unsupported archive version");
    const auto count = get_le<std::uint32_t>(in);
    std::vector<NamedTensor> tensors(count);
    for (auto& t : tensors) {
        const auto len = get_le<std::uint32_t>(in);
        t.name.resize(len);
        if (!in.read(t.name.data(), len)) throw FormatError("truncated tensor name");
        const auto rank = get_le<std::uint32_t>(in);
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            t.shape.push_back(get_le<std::uint32_t>(in));
            n *= t.shape.back();
        }
        t.values.resize(n);
        for (auto& v : t.values) v = get_f32(in);
    }
    return tensors;
}

void save_archive(const std::filesystem::path& archive_path, const std::vector<NamedTensor>& tensors) {
    {
        auto out = open_out(archive_path);
        write_archive(out, tensors);
    }
    nlohmann::ordered_json manifest;
    manifest["tensors"] = nlohmann::ordered_json::array();
    for (const auto& t : tensors) manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    auto manifest_path = archive_path;
    manifest_path.replace_extension(".manifest.json");
    auto out = open_out(manifest_path);
    out << manifest.dump(2) << '\n';
}

std::vector<NamedTensor> load_archive(const std::filesystem::path& archive_path) {
    auto in = open_in(archive_path);
    return read_archive(in);
}

std::string fnv1a_hex(std::span<const char> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string file_hash(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a_hex(bytes);
}

}  // namespace vctrl
