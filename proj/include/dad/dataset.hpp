#pragma once

#include <string>
#include <vector>

#include "dad/io.hpp"
#include "dad/scenegen.hpp"

namespace dad {

/// Frame directories live under <root>/frames/<id>/ with image.png,
/// depth.f32, density.f32 and meta.json; manifest.json at the root lists
/// the split membership and echoes the generating spec.
struct DatasetManifest {
    uint64_t seed = 0;
    SceneSpec spec;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

void generate_dataset(uint64_t seed, int n_train, int n_test, SceneSpec spec,
                      const fs::path& root);

struct FrameData {
    std::string id;
    ImageU8 image;
    Grid density_gt;
    Grid depth_gt;
    std::vector<HeadAnnotation> heads;
    int count = 0;
};

class Dataset {
  public:
    static Dataset open(const fs::path& root);

    const fs::path& root() const { return root_; }
    const DatasetManifest& manifest() const { return manifest_; }
    const std::vector<std::string>& ids(const std::string& split) const; // "train" | "test"
    std::vector<std::string> all_ids() const;

    fs::path frame_dir(const std::string& id) const { return root_ / "frames" / id; }
    FrameData load_frame(const std::string& id) const;
    Grid load_depth(const std::string& id) const;

    /// The people-free depth field of the fixed camera (geometry reference).
    Grid background_depth() const;

  private:
    fs::path root_;
    DatasetManifest manifest_;
};

} // namespace dad
