#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vctrl/tensor.hpp"

namespace vctrl {

// What a VCLT container holds. Latents use the original version-1 header;
// every other kind is written as version 2 with a trailing kind tag.
enum class TensorKind : std::uint16_t {
    latent = 0,
    video = 1,
    edges = 2,
    masks = 3,
    sample = 4,
};

struct TensorFile {
    Tensor4 tensor;
    PatchSpec patch{1, 1};
    TensorKind kind = TensorKind::latent;
};

// VCLT layout: "VCLT", u16 version, u32 f,h,w,ch, u16 p_t,p_s,
// [u16 kind when version 2], then float32 little-endian row-major payload.
void write_tensor_file(std::ostream& out, const TensorFile& file);
TensorFile read_tensor_file(std::istream& in);

void save_latent(const std::filesystem::path& path, const LatentTensor& latent);
LatentTensor load_latent(const std::filesystem::path& path);

void save_video(const std::filesystem::path& path, const VideoTensor& video, TensorKind kind = TensorKind::video);
VideoTensor load_video(const std::filesystem::path& path);

void save_binary_volume(const std::filesystem::path& path, const BinaryVolume& volume, TensorKind kind);
BinaryVolume load_binary_volume(const std::filesystem::path& path);

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<double> values;
};

// Named-tensor archive: "VCNT", u16 version, u32 count, then per tensor
// u32 name length, name bytes, u32 rank, u32 dims, float32 LE payload.
void write_archive(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_archive(std::istream& in);

// Writes `<stem>.vcnt` and a `<stem>.manifest.json` listing names and shapes.
void save_archive(const std::filesystem::path& archive_path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_archive(const std::filesystem::path& archive_path);

// FNV-1a 64-bit, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::span<const char> bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace vctrl
