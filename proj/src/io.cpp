#include "dad/io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "f32 artifact files are little-endian; big-endian hosts are not supported");

namespace dad {

namespace {

void rename_over(const fs::path& tmp, const fs::path& path) {
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("rename failed for " + path.string() + ": " + ec.message());
    }
}

void write_bytes_atomic(const fs::path& path, const void* data, size_t n) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for write: " + tmp.string());
        f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    rename_over(tmp, path);
}

} // namespace

void write_f32(const fs::path& path, const std::vector<float>& data) {
    write_bytes_atomic(path, data.data(), data.size() * sizeof(float));
}

std::vector<float> read_f32(const fs::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    const std::streamsize bytes = f.tellg();
    if (bytes % sizeof(float) != 0)
        throw std::runtime_error("not a float32 file (size " + std::to_string(bytes) + "): " + path.string());
    std::vector<float> data(static_cast<size_t>(bytes) / sizeof(float));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(data.data()), bytes);
    if (!f) throw std::runtime_error("read failed: " + path.string());
    return data;
}

void write_grid_f32(const fs::path& path, const Grid& g) {
    std::vector<float> data(g.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(g.v[i]);
    write_f32(path, data);
}

Grid read_grid_f32(const fs::path& path, int h, int w) {
    std::vector<float> data = read_f32(path);
    if (data.size() != static_cast<size_t>(h) * w)
        throw std::runtime_error("unexpected element count in " + path.string() + ": got " +
                                 std::to_string(data.size()) + ", want " + std::to_string(static_cast<size_t>(h) * w));
    Grid g(h, w);
    for (size_t i = 0; i < data.size(); ++i) g.v[i] = data[i];
    return g;
}

void write_tensor_f32(const fs::path& path, const Tensor& t) {
    std::vector<float> data(t.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(t.v[i]);
    write_f32(path, data);
}

Tensor read_tensor_f32(const fs::path& path, int c, int h, int w) {
    std::vector<float> data = read_f32(path);
    if (data.size() != static_cast<size_t>(c) * h * w)
        throw std::runtime_error("unexpected element count in " + path.string());
    Tensor t(c, h, w);
    for (size_t i = 0; i < data.size(); ++i) t.v[i] = data[i];
    return t;
}

// --- PNG via libpng ---

namespace {

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* f = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (f) std::fclose(f);
    }
};

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* f = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (f) std::fclose(f);
    }
};

void png_write_common(const fs::path& path, int h, int w, int bit_depth, int color_type,
                      const std::vector<png_bytep>& rows) {
    fs::path tmp = path;
    tmp += ".tmp";
    PngWriter ctx;
    ctx.f = std::fopen(tmp.string().c_str(), "wb");
    if (!ctx.f) throw std::runtime_error("cannot open for write: " + tmp.string());
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw std::runtime_error("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw std::runtime_error("libpng write error: " + path.string());
    png_init_io(ctx.png, ctx.f);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    png_write_image(ctx.png, const_cast<png_bytepp>(rows.data()));
    png_write_end(ctx.png, nullptr);
    std::fclose(ctx.f);
    ctx.f = nullptr;
    rename_over(tmp, path);
}

} // namespace

void write_png_rgb8(const fs::path& path, const ImageU8& img) {
    std::vector<png_bytep> rows(img.h);
    for (int y = 0; y < img.h; ++y)
        rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y) * img.w * 3);
    png_write_common(path, img.h, img.w, 8, PNG_COLOR_TYPE_RGB, rows);
}

void write_png_mask(const fs::path& path, const Mask& m) {
    const int stride = (m.w + 7) / 8;
    std::vector<uint8_t> packed(static_cast<size_t>(stride) * m.h, 0);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (m.at(y, x)) packed[static_cast<size_t>(y) * stride + x / 8] |= static_cast<uint8_t>(0x80 >> (x % 8));
    std::vector<png_bytep> rows(m.h);
    for (int y = 0; y < m.h; ++y) rows[y] = packed.data() + static_cast<size_t>(y) * stride;
    png_write_common(path, m.h, m.w, 1, PNG_COLOR_TYPE_GRAY, rows);
}

namespace {

/// Decodes any PNG to 8-bit interleaved with `channels` channels (3 = RGB, 1 = gray).
std::vector<uint8_t> png_read_common(const fs::path& path, int channels, int& h, int& w) {
    PngReader ctx;
    ctx.f = std::fopen(path.string().c_str(), "rb");
    if (!ctx.f) throw std::runtime_error("cannot open: " + path.string());
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.png || !ctx.info) throw std::runtime_error("libpng init failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw std::runtime_error("libpng read error: " + path.string());
    png_init_io(ctx.png, ctx.f);
    png_read_info(ctx.png, ctx.info);

    png_set_expand(ctx.png);                 // palettes, 1/2/4-bit grays, tRNS
    png_set_strip_16(ctx.png);
    png_set_strip_alpha(ctx.png);
    if (channels == 3)
        png_set_gray_to_rgb(ctx.png);
    else
        png_set_rgb_to_gray(ctx.png, 1, -1.0, -1.0);
    png_read_update_info(ctx.png, ctx.info);

    h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
    w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
    const size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
    if (rowbytes != static_cast<size_t>(w) * channels)
        throw std::runtime_error("unexpected decoded row size in " + path.string());

    std::vector<uint8_t> out(static_cast<size_t>(h) * w * channels);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = out.data() + static_cast<size_t>(y) * rowbytes;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);
    return out;
}

} // namespace

ImageU8 read_png_rgb8(const fs::path& path) {
    ImageU8 img;
    img.rgb = png_read_common(path, 3, img.h, img.w);
    return img;
}

Mask read_png_mask(const fs::path& path) {
    int h = 0, w = 0;
    std::vector<uint8_t> gray = png_read_common(path, 1, h, w);
    Mask m(h, w);
    for (size_t i = 0; i < gray.size(); ++i) m.v[i] = gray[i] > 127 ? 1 : 0;
    return m;
}

// --- JSON ---

json load_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

void save_json(const fs::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
    write_bytes_atomic(path, text.data(), text.size());
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

uint64_t hash_bytes(const void* data, size_t n, uint64_t seed) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t hash_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        h = hash_bytes(buf, static_cast<size_t>(f.gcount()), h);
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace dad
