#pragma once

#include <cstdint>
#include <filesystem>

#include "tgmatch/modalities.hpp"

namespace tgmatch::video_io {

/// Packed frame-array file:
///
///   bytes 0..7   magic "TGVFRM01"
///   u32 LE       T, H, W, C
///   u32 LE       dtype code (see DType)
///   ...          row-major [T, H, W, C] data, little-endian
enum class DType : std::uint32_t { UInt8 = 0, Float32 = 1, Float64 = 2 };

inline constexpr char kPackedMagic[8] = {'T', 'G', 'V', 'F', 'R', 'M', '0', '1'};

void write_packed(const std::filesystem::path& path, const torch::Tensor& frames,
                  DType dtype = DType::UInt8);
torch::Tensor read_packed(const std::filesystem::path& path);

/// Writes frames as binary PPM images named 000000.ppm, 000001.ppm, ... (values rounded
/// and clamped to [0, 255]).
void write_frame_directory(const std::filesystem::path& dir, const torch::Tensor& frames);
/// Reads every *.ppm in numeric order into a uint8 [T, H, W, 3] tensor.
torch::Tensor read_frame_directory(const std::filesystem::path& dir);

/// Loads either representation (directory or packed file) as a Video.
modalities::Video load_video(const std::filesystem::path& path, std::string id = {});

}  // namespace tgmatch::video_io
