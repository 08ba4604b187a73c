#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dad/grid.hpp"

namespace dad {

namespace fs = std::filesystem;
using json = nlohmann::json;

// --- raw little-endian float32 files (depth.f32, density.f32, ...) ---

void write_f32(const fs::path& path, const std::vector<float>& data);
std::vector<float> read_f32(const fs::path& path);

void write_grid_f32(const fs::path& path, const Grid& g);
Grid read_grid_f32(const fs::path& path, int h, int w);

void write_tensor_f32(const fs::path& path, const Tensor& t); // planar c*h*w
Tensor read_tensor_f32(const fs::path& path, int c, int h, int w);

// --- PNG ---

void write_png_rgb8(const fs::path& path, const ImageU8& img);
ImageU8 read_png_rgb8(const fs::path& path);

/// Masks are stored as 1-bit grayscale PNGs.
void write_png_mask(const fs::path& path, const Mask& m);
/// Reads any grayscale/RGB PNG as a mask; pixels above half intensity are true.
Mask read_png_mask(const fs::path& path);

// --- JSON ---

json load_json(const fs::path& path);
/// Deterministic rendering (sorted keys, fixed indent), written via a
/// temp-file-then-rename so concurrent readers never see partial output.
void save_json(const fs::path& path, const json& j);

// --- misc ---

void write_text(const fs::path& path, const std::string& text); // atomic like save_json
std::string read_text(const fs::path& path);

/// FNV-1a over file bytes; used for pipeline stage skipping and run records.
uint64_t hash_file(const fs::path& path);
uint64_t hash_bytes(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);
std::string hash_hex(uint64_t h);

} // namespace dad
