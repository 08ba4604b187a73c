#include "doctest.h"

#include <filesystem>

#include "dad/io.hpp"
#include "dad/rng.hpp"

using namespace dad;

namespace {

fs::path tmp_dir() {
    const fs::path p = fs::temp_directory_path() / "dad_test_io";
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("f32 grid round trip") {
    const fs::path p = tmp_dir() / "grid.f32";
    Grid g(5, 7);
    Rng rng(3);
    for (double& v : g.v) v = rng.uniform(-10.0, 10.0);
    write_grid_f32(p, g);
    const Grid back = read_grid_f32(p, 5, 7);
    for (size_t i = 0; i < g.size(); ++i)
        CHECK(back.v[i] == static_cast<double>(static_cast<float>(g.v[i])));
    CHECK_THROWS(read_grid_f32(p, 5, 8)); // element count mismatch
    CHECK_THROWS(read_grid_f32(tmp_dir() / "missing.f32", 5, 7));
}

TEST_CASE("png rgb round trip is exact") {
    const fs::path p = tmp_dir() / "img.png";
    ImageU8 img(9, 13);
    Rng rng(5);
    for (uint8_t& b : img.rgb) b = static_cast<uint8_t>(rng.below(256));
    write_png_rgb8(p, img);
    const ImageU8 back = read_png_rgb8(p);
    CHECK(back.h == 9);
    CHECK(back.w == 13);
    CHECK(back.rgb == img.rgb);
}

TEST_CASE("png 1-bit mask round trip is exact") {
    const fs::path p = tmp_dir() / "mask.png";
    Mask m(6, 11);
    Rng rng(9);
    for (uint8_t& b : m.v) b = rng.uniform() < 0.3 ? 1 : 0;
    write_png_mask(p, m);
    const Mask back = read_png_mask(p);
    CHECK(back.v == m.v);
}

TEST_CASE("json save/load and atomic write") {
    const fs::path p = tmp_dir() / "doc.json";
    const json j{{"a", 1}, {"b", {1, 2, 3}}, {"c", "text"}};
    save_json(p, j);
    CHECK(load_json(p) == j);
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));
    CHECK_THROWS(load_json(tmp_dir() / "missing.json"));
    write_text(tmp_dir() / "bad.json", "{not json");
    CHECK_THROWS_WITH_AS(load_json(tmp_dir() / "bad.json"), doctest::Contains("invalid JSON"),
                         std::runtime_error);
}

TEST_CASE("file hashing is stable and content sensitive") {
    const fs::path a = tmp_dir() / "a.bin";
    const fs::path b = tmp_dir() / "b.bin";
    write_text(a, "same bytes");
    write_text(b, "same bytes");
    CHECK(hash_file(a) == hash_file(b));
    write_text(b, "other bytes");
    CHECK(hash_file(a) != hash_file(b));
    CHECK(hash_hex(hash_file(a)).size() == 16);
}
