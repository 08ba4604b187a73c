#include "dad/dataset.hpp"

#include <cstdio>

#include "dad/rng.hpp"
#include "dad/version.hpp"

namespace dad {

namespace {

std::string frame_id(const std::string& split, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04d", split.c_str(), index);
    return buf;
}

void write_frame(const fs::path& dir, const std::string& id, const SceneSample& sample) {
    fs::create_directories(dir);
    write_png_rgb8(dir / "image.png", sample.image);
    write_grid_f32(dir / "depth.f32", sample.depth_gt);
    write_grid_f32(dir / "density.f32", sample.density_gt);
    json heads = json::array();
    for (const HeadAnnotation& h : sample.heads) heads.push_back({h.x, h.y, h.depth_m});
    save_json(dir / "meta.json", json{{"id", id},
                                      {"width", sample.density_gt.w},
                                      {"height", sample.density_gt.h},
                                      {"count", sample.count()},
                                      {"heads", heads}});
}

} // namespace

void generate_dataset(uint64_t seed, int n_train, int n_test, SceneSpec spec,
                      const fs::path& root) {
    if (n_train <= 0) throw std::invalid_argument("generate_dataset: empty training set");
    if (n_test < 0) throw std::invalid_argument("generate_dataset: negative test count");
    spec.sequence_seed = seed;
    spec.validate();

    std::error_code ec;
    fs::create_directories(root / "frames", ec);
    if (ec)
        throw std::runtime_error("generate_dataset: cannot create " + root.string() + ": " +
                                 ec.message());

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.spec = spec;
    for (int i = 0; i < n_train; ++i) {
        const std::string id = frame_id("train", i);
        write_frame(root / "frames" / id, id,
                    generate_scene(mix_seed(mix_seed(seed, "train"), i), spec));
        manifest.train_ids.push_back(id);
    }
    for (int i = 0; i < n_test; ++i) {
        const std::string id = frame_id("test", i);
        write_frame(root / "frames" / id, id,
                    generate_scene(mix_seed(mix_seed(seed, "test"), i), spec));
        manifest.test_ids.push_back(id);
    }

    write_grid_f32(root / "background_depth.f32", background_depth(spec));
    save_json(root / "manifest.json", json{{"version", kVersion},
                                           {"seed", seed},
                                           {"spec", spec.to_json()},
                                           {"train", manifest.train_ids},
                                           {"test", manifest.test_ids}});
}

Dataset Dataset::open(const fs::path& root) {
    Dataset ds;
    ds.root_ = root;
    const json j = load_json(root / "manifest.json");
    ds.manifest_.seed = j.at("seed").get<uint64_t>();
    ds.manifest_.spec = SceneSpec::from_json(j.at("spec"));
    ds.manifest_.train_ids = j.at("train").get<std::vector<std::string>>();
    ds.manifest_.test_ids = j.at("test").get<std::vector<std::string>>();
    return ds;
}

const std::vector<std::string>& Dataset::ids(const std::string& split) const {
    if (split == "train") return manifest_.train_ids;
    if (split == "test") return manifest_.test_ids;
    throw std::invalid_argument("Dataset: unknown split '" + split + "'");
}

std::vector<std::string> Dataset::all_ids() const {
    std::vector<std::string> out = manifest_.train_ids;
    out.insert(out.end(), manifest_.test_ids.begin(), manifest_.test_ids.end());
    return out;
}

FrameData Dataset::load_frame(const std::string& id) const {
    const fs::path dir = frame_dir(id);
    FrameData f;
    f.id = id;
    f.image = read_png_rgb8(dir / "image.png");
    const json meta = load_json(dir / "meta.json");
    const int h = meta.at("height").get<int>();
    const int w = meta.at("width").get<int>();
    f.density_gt = read_grid_f32(dir / "density.f32", h, w);
    f.depth_gt = read_grid_f32(dir / "depth.f32", h, w);
    f.count = meta.at("count").get<int>();
    for (const auto& head : meta.at("heads"))
        f.heads.push_back({head.at(0).get<double>(), head.at(1).get<double>(),
                           head.at(2).get<double>()});
    return f;
}

Grid Dataset::load_depth(const std::string& id) const {
    return read_grid_f32(frame_dir(id) / "depth.f32", manifest_.spec.height,
                         manifest_.spec.width);
}

Grid Dataset::background_depth() const {
    return read_grid_f32(root_ / "background_depth.f32", manifest_.spec.height,
                         manifest_.spec.width);
}

} // namespace dad
