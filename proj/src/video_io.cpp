#include "tgmatch/video_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "tgmatch/errors.hpp"

namespace fs = std::filesystem;

namespace tgmatch::video_io {

static_assert(std::endian::native == std::endian::little, "packed format assumes little-endian");

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("truncated packed video header");
  return v;
}

torch::ScalarType scalar_type(DType d) {
  switch (d) {
    case DType::UInt8: return torch::kUInt8;
    case DType::Float32: return torch::kFloat32;
    case DType::Float64: return torch::kFloat64;
  }
  throw IoError("unknown dtype code");
}

std::size_t element_size(DType d) {
  switch (d) {
    case DType::UInt8: return 1;
    case DType::Float32: return 4;
    case DType::Float64: return 8;
  }
  throw IoError("unknown dtype code");
}

torch::Tensor to_pixels(const torch::Tensor& frames) {
  if (frames.scalar_type() == torch::kUInt8) return frames.contiguous();
  return frames.to(torch::kFloat64).round().clamp(0.0, 255.0).to(torch::kUInt8).contiguous();
}

}  // namespace

void write_packed(const fs::path& path, const torch::Tensor& frames, DType dtype) {
  if (frames.dim() != 4) throw ShapeError("packed video expects [T, H, W, C] frames");
  torch::Tensor data = dtype == DType::UInt8 ? to_pixels(frames)
                                             : frames.to(scalar_type(dtype)).contiguous();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kPackedMagic, sizeof kPackedMagic);
  for (int d = 0; d < 4; ++d) write_u32(os, static_cast<std::uint32_t>(data.size(d)));
  write_u32(os, static_cast<std::uint32_t>(dtype));
  os.write(static_cast<const char*>(data.data_ptr()),
           static_cast<std::streamsize>(data.numel() * element_size(dtype)));
  if (!os) throw IoError("failed writing " + path.string());
}

torch::Tensor read_packed(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open packed video " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kPackedMagic, sizeof magic) != 0)
    throw IoError(path.string() + " is not a packed video (bad magic)");
  std::array<std::int64_t, 4> shape{};
  for (auto& s : shape) s = read_u32(is);
  const auto code = read_u32(is);
  if (code > 2) throw IoError("unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  auto out = torch::empty({shape[0], shape[1], shape[2], shape[3]}, scalar_type(dtype));
  const auto bytes = static_cast<std::streamsize>(out.numel() * element_size(dtype));
  is.read(static_cast<char*>(out.data_ptr()), bytes);
  if (is.gcount() != bytes) throw IoError("truncated packed video " + path.string());
  return out;
}

void write_frame_directory(const fs::path& dir, const torch::Tensor& frames) {
  if (frames.dim() != 4 || frames.size(3) != 3)
    throw ShapeError("frame directory expects [T, H, W, 3] frames");
  fs::create_directories(dir);
  auto pixels = to_pixels(frames);
  const auto h = pixels.size(1), w = pixels.size(2);
  for (std::int64_t t = 0; t < pixels.size(0); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "%06lld.ppm", static_cast<long long>(t));
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw IoError("cannot write frame " + (dir / name).string());
    os << "P6\n" << w << " " << h << "\n255\n";
    auto frame = pixels[t].contiguous();
    os.write(static_cast<const char*>(frame.data_ptr()), static_cast<std::streamsize>(h * w * 3));
  }
}

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string ppm_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

torch::Tensor read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open frame " + path.string());
  if (ppm_token(is) != "P6") throw IoError(path.string() + " is not a binary PPM");
  const auto w = std::stoll(ppm_token(is));
  const auto h = std::stoll(ppm_token(is));
  const auto maxval = std::stoll(ppm_token(is));
  if (maxval != 255) throw IoError(path.string() + ": only 8-bit PPM is supported");
  auto out = torch::empty({h, w, 3}, torch::kUInt8);
  is.read(static_cast<char*>(out.data_ptr()), static_cast<std::streamsize>(h * w * 3));
  if (is.gcount() != h * w * 3) throw IoError("truncated frame " + path.string());
  return out;
}

}  // namespace

torch::Tensor read_frame_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a frame directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  if (files.empty()) throw IoError("no .ppm frames in " + dir.string());
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto sa = a.stem().string(), sb = b.stem().string();
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    return sa < sb;
  });
  std::vector<torch::Tensor> frames;
  frames.reserve(files.size());
  for (const auto& f : files) {
    frames.push_back(read_ppm(f));
    if (frames.back().sizes() != frames.front().sizes())
      throw ShapeError("frame " + f.string() + " differs in size from the first frame");
  }
  return torch::stack(frames);
}

modalities::Video load_video(const fs::path& path, std::string id) {
  modalities::Video v;
  v.id = id.empty() ? path.stem().string() : std::move(id);
  v.frames = fs::is_directory(path) ? read_frame_directory(path) : read_packed(path);
  if (v.frames.dim() != 4 || v.frames.size(3) != 3)
    throw ShapeError("video " + path.string() + " is not [T, H, W, 3]");
  return v;
}

}  // namespace tgmatch::video_io
