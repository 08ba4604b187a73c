#include "dad/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dad/rng.hpp"

namespace dad {

void DensityConfig::validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("DensityConfig: sigma must be > 0");
    if (truncation_radius < 3.0 * sigma)
        throw std::invalid_argument("DensityConfig: truncation_radius must be >= 3*sigma");
}

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("SceneSpec: non-positive frame size");
    if (count_min < 0 || count_max < count_min)
        throw std::invalid_argument("SceneSpec: invalid crowd count range");
    density.validate();
    if (!(depth_norm_m > 0.0)) throw std::invalid_argument("SceneSpec: depth_norm_m must be > 0");
    if (!(people_depth_min_m > 0.0) || people_depth_max_m < people_depth_min_m)
        throw std::invalid_argument("SceneSpec: invalid people depth range");
    if (people_depth_max_m > depth_norm_m || background_far_m > depth_norm_m)
        throw std::invalid_argument("SceneSpec: depths exceed normalization range");
}

json SceneSpec::to_json() const {
    return json{{"width", width},
                {"height", height},
                {"count_min", count_min},
                {"count_max", count_max},
                {"sigma", density.sigma},
                {"truncation_radius", density.truncation_radius},
                {"depth_norm_m", depth_norm_m},
                {"people_depth_min_m", people_depth_min_m},
                {"people_depth_max_m", people_depth_max_m},
                {"background_near_m", background_near_m},
                {"background_far_m", background_far_m},
                {"person_height_scale", person_height_scale},
                {"min_head_separation_px", min_head_separation_px},
                {"frame_noise", frame_noise},
                {"max_place_attempts", max_place_attempts},
                {"sequence_seed", sequence_seed}};
}

SceneSpec SceneSpec::from_json(const json& j) {
    SceneSpec s;
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.count_min = j.at("count_min").get<int>();
    s.count_max = j.at("count_max").get<int>();
    s.density.sigma = j.at("sigma").get<double>();
    s.density.truncation_radius = j.at("truncation_radius").get<double>();
    s.depth_norm_m = j.at("depth_norm_m").get<double>();
    s.people_depth_min_m = j.at("people_depth_min_m").get<double>();
    s.people_depth_max_m = j.at("people_depth_max_m").get<double>();
    s.background_near_m = j.at("background_near_m").get<double>();
    s.background_far_m = j.at("background_far_m").get<double>();
    s.person_height_scale = j.at("person_height_scale").get<double>();
    s.min_head_separation_px = j.at("min_head_separation_px").get<double>();
    s.frame_noise = j.at("frame_noise").get<double>();
    s.max_place_attempts = j.at("max_place_attempts").get<int>();
    s.sequence_seed = j.at("sequence_seed").get<uint64_t>();
    s.validate();
    return s;
}

Grid make_density_map(const std::vector<HeadAnnotation>& heads, int h, int w,
                      const DensityConfig& cfg) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("make_density_map: non-positive shape");
    cfg.validate();
    Grid density(h, w);
    const double r = cfg.truncation_radius;
    const double r2 = r * r;
    const double inv2s2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    for (const HeadAnnotation& head : heads) {
        if (!(head.x >= 0.0 && head.x < w && head.y >= 0.0 && head.y < h))
            throw std::invalid_argument("make_density_map: head at (" + std::to_string(head.x) +
                                        ", " + std::to_string(head.y) + ") lies outside the " +
                                        std::to_string(w) + "x" + std::to_string(h) + " image");
        const int x0 = static_cast<int>(std::floor(head.x - r));
        const int x1 = static_cast<int>(std::ceil(head.x + r));
        const int y0 = static_cast<int>(std::floor(head.y - r));
        const int y1 = static_cast<int>(std::ceil(head.y + r));
        // Normalize over the full truncated support so each interior head has
        // unit mass; image clipping then accounts for any boundary loss.
        double mass = 0.0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double d2 = (x - head.x) * (x - head.x) + (y - head.y) * (y - head.y);
                if (d2 <= r2) mass += std::exp(-d2 * inv2s2);
            }
        const double norm = 1.0 / mass;
        for (int y = std::max(y0, 0); y <= std::min(y1, h - 1); ++y)
            for (int x = std::max(x0, 0); x <= std::min(x1, w - 1); ++x) {
                const double d2 = (x - head.x) * (x - head.x) + (y - head.y) * (y - head.y);
                if (d2 <= r2) density.at(y, x) += std::exp(-d2 * inv2s2) * norm;
            }
    }
    return density;
}

namespace {

struct BackgroundPattern {
    double fy, fx, phase; // cosine relief of the scene surface
};

BackgroundPattern background_pattern(uint64_t sequence_seed) {
    Rng rng(mix_seed(sequence_seed, "background"));
    BackgroundPattern p;
    p.fy = rng.uniform(1.5, 3.5);
    p.fx = rng.uniform(1.5, 3.5);
    p.phase = rng.uniform(0.0, 6.283185307179586);
    return p;
}

} // namespace

Grid background_depth(const SceneSpec& spec) {
    spec.validate();
    const BackgroundPattern p = background_pattern(spec.sequence_seed);
    Grid depth(spec.height, spec.width);
    for (int y = 0; y < spec.height; ++y) {
        const double fy = spec.height > 1 ? static_cast<double>(y) / (spec.height - 1) : 0.0;
        for (int x = 0; x < spec.width; ++x) {
            const double fx = spec.width > 1 ? static_cast<double>(x) / (spec.width - 1) : 0.0;
            // Far at the top of the frame, near at the bottom, with gentle
            // fixed relief so per-pixel statistics are not degenerate.
            double d = spec.background_far_m - (spec.background_far_m - spec.background_near_m) * fy;
            d += 0.4 * std::cos(p.fy * fy * 6.283185307179586 + p.phase) *
                 std::cos(p.fx * fx * 6.283185307179586 + p.phase);
            d = std::clamp(d, 1.0, spec.depth_norm_m);
            depth.at(y, x) = d / spec.depth_norm_m;
        }
    }
    return depth;
}

namespace {

struct Person {
    double head_x, head_y; // annotation point
    double depth_m;
    double height_px;
    double albedo;     // base gray level
    double tint[3];    // per-channel multipliers
};

/// Surfaces are shaded by their depth (dimmer when near, brighter when
/// far), the way haze and overhead lighting read in surveillance footage.
/// This is what lets a translation-equivariant network recover the depth
/// field from local appearance alone.
double depth_shade(double depth_norm) { return 40.0 + 185.0 * depth_norm; }

ImageU8 render_background(const SceneSpec& spec, const Grid& depth_norm, uint64_t frame_seed) {
    Rng noise_rng(mix_seed(spec.sequence_seed, "bg-noise"));
    Grid fixed_noise(spec.height, spec.width);
    for (double& v : fixed_noise.v) v = noise_rng.uniform(-4.0, 4.0);

    Rng frame_rng(mix_seed(frame_seed, "frame-noise"));
    ImageU8 img(spec.height, spec.width);
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            double base = depth_shade(depth_norm.at(y, x));
            base += fixed_noise.at(y, x);
            base += frame_rng.uniform(-spec.frame_noise, spec.frame_noise);
            const double tint[3] = {1.02, 1.0, 0.97};
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<uint8_t>(std::clamp(base * tint[c], 0.0, 255.0));
        }
    }
    return img;
}

void render_person(const Person& person, const SceneSpec& spec, ImageU8& img, Grid& depth_norm,
                   uint64_t frame_seed, int person_index) {
    const double h = person.height_px;
    const double cy = person.head_y + 0.35 * h; // body center below the head
    const double cx = person.head_x;
    const double a = 0.5 * h;   // vertical semi-axis
    const double b = 0.22 * h;  // horizontal semi-axis
    const double head_r = 0.16 * h;
    const double head_cy = person.head_y + 0.08 * h;

    Rng texture(mix_seed(mix_seed(frame_seed, "person-texture"), static_cast<uint64_t>(person_index)));
    const double depth_value = person.depth_m / spec.depth_norm_m;

    const int y0 = std::max(0, static_cast<int>(std::floor(cy - a - head_r)));
    const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(cy + a)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - std::max(b, head_r))));
    const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(cx + std::max(b, head_r))));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double ey = (y - cy) / a;
            const double ex = (x - cx) / b;
            const double body = ey * ey + ex * ex;
            const double hy = (y - head_cy) / head_r;
            const double hx = (x - cx) / head_r;
            const double head = hy * hy + hx * hx;
            if (body > 1.0 && head > 1.0) continue;
            double shade = person.albedo;
            if (head <= 1.0) shade += 30.0; // head disc reads brighter than the torso
            shade *= 1.0 - 0.10 * std::min(body, head);
            shade += texture.uniform(-2.0, 2.0);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<uint8_t>(std::clamp(shade * person.tint[c], 0.0, 255.0));
            depth_norm.at(y, x) = depth_value;
        }
    }
}

} // namespace

SceneSample generate_scene(uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    Rng rng(mix_seed(seed, "crowd"));

    const int count = spec.count_min == spec.count_max
                          ? spec.count_min
                          : rng.uniform_int(spec.count_min, spec.count_max);

    // Heads stay a full truncation radius away from the border so every
    // ground-truth kernel keeps its entire mass inside the frame.
    const double margin = spec.density.truncation_radius;
    const double x_lo = margin, x_hi = spec.width - 1 - margin;
    const double y_lo = margin, y_hi = spec.height - 1 - margin;
    if (count > 0 && (x_hi <= x_lo || y_hi <= y_lo))
        throw std::runtime_error("generate_scene: frame too small for the density kernel margin");

    std::vector<Person> people;
    people.reserve(count);
    for (int i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_place_attempts; ++attempt) {
            const double x = rng.uniform(x_lo, x_hi);
            const double y = rng.uniform(y_lo, y_hi);
            bool ok = true;
            for (const Person& q : people) {
                const double dx = x - q.head_x, dy = y - q.head_y;
                if (dx * dx + dy * dy <
                    spec.min_head_separation_px * spec.min_head_separation_px) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            Person p;
            p.head_x = x;
            p.head_y = y;
            p.depth_m = rng.uniform(spec.people_depth_min_m, spec.people_depth_max_m);
            p.height_px = std::min(spec.person_height_scale * 1.7 / p.depth_m,
                                   0.45 * spec.height);
            // People obey the same depth shading as the scene, with a little
            // per-person clothing variation on top.
            p.albedo = depth_shade(p.depth_m / spec.depth_norm_m) + rng.uniform(-12.0, 12.0);
            for (double& t : p.tint) t = rng.uniform(0.92, 1.08);
            people.push_back(p);
            placed = true;
            break;
        }
        if (!placed)
            throw std::runtime_error("generate_scene: cannot place " + std::to_string(count) +
                                     " people in a " + std::to_string(spec.width) + "x" +
                                     std::to_string(spec.height) +
                                     " frame with the configured separation");
    }

    SceneSample sample;
    sample.depth_gt = background_depth(spec);
    sample.image = render_background(spec, sample.depth_gt, seed);

    // Far to near, so nearer people overwrite both image and depth.
    std::vector<int> order(people.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return people[a].depth_m > people[b].depth_m; });
    for (int idx : order) render_person(people[idx], spec, sample.image, sample.depth_gt, seed, idx);

    sample.heads.reserve(people.size());
    for (const Person& p : people) sample.heads.push_back({p.head_x, p.head_y, p.depth_m});
    sample.density_gt = make_density_map(sample.heads, spec.height, spec.width, spec.density);
    return sample;
}

Mask quarter_mask(int h, int w, int quadrant_index) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("quarter_mask: non-positive shape");
    if (quadrant_index < 0 || quadrant_index > 3)
        throw std::invalid_argument("quarter_mask: quadrant index must be in {0,1,2,3}, got " +
                                    std::to_string(quadrant_index));
    const int ys = (h + 1) / 2; // ceiling split
    const int xs = (w + 1) / 2;
    const bool bottom = quadrant_index >= 2;
    const bool right = quadrant_index % 2 == 1;
    Mask m(h, w);
    const int y0 = bottom ? ys : 0;
    const int y1 = bottom ? h : ys;
    const int x0 = right ? xs : 0;
    const int x1 = right ? w : xs;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
    return m;
}

} // namespace dad
