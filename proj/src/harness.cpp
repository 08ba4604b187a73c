#include "dad/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "dad/parallel.hpp"
#include "dad/rng.hpp"
#include "dad/version.hpp"

namespace dad {

namespace {

std::string num_tag(double v) {
    // 15 -> "15", 0.01 -> "0.01"
    char buf[40];
    if (v == std::floor(v) && std::abs(v) < 1e9)
        std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    else
        std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

} // namespace

std::string AttackRun::tag() const {
    std::string t = family_code(attack.family) + "_n" + std::to_string(attack.steps) + "_eps" +
                    num_tag(attack.eps);
    if (family_is_exposed(attack.family)) t += "_lam" + num_tag(attack.lambda_att);
    t += "_q" + std::to_string(quadrant);
    return t;
}

json AttackRun::to_json() const {
    json j = attack.to_json();
    j["quadrant"] = quadrant;
    return j;
}

AttackRun AttackRun::from_json(const json& j) {
    AttackRun r;
    r.attack = AttackConfig::from_json(j);
    r.quadrant = j.value("quadrant", 0);
    return r;
}

json ExperimentConfig::to_json() const {
    json attacks_json = json::array();
    for (const AttackRun& a : attacks) attacks_json.push_back(a.to_json());
    return json{{"out_root", out_root.string()},
                {"seed", seed},
                {"n_train", n_train},
                {"n_test", n_test},
                {"scene", scene.to_json()},
                {"train",
                 {{"lambda", train.lambda},
                  {"batch", train.batch},
                  {"epochs", train.epochs},
                  {"learning_rate", train.learning_rate},
                  {"seed", train.seed}}},
                {"attacks", attacks_json},
                {"provider", provider},
                {"threshold_percent", threshold_percent},
                {"eps_sweep", eps_sweep},
                {"threshold_sweep", threshold_sweep},
                {"lambda_att_sweep", lambda_att_sweep},
                {"baselines", baselines}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
    ExperimentConfig c = desk_default();
    c.out_root = fs::path(j.at("out_root").get<std::string>());
    if (c.out_root.is_relative()) c.out_root = base_dir / c.out_root;
    c.seed = j.value("seed", c.seed);
    c.n_train = j.value("n_train", c.n_train);
    c.n_test = j.value("n_test", c.n_test);
    if (j.contains("scene")) c.scene = SceneSpec::from_json(j.at("scene"));
    if (j.contains("train")) {
        const json& t = j.at("train");
        c.train.lambda = t.value("lambda", c.train.lambda);
        c.train.batch = t.value("batch", c.train.batch);
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
        c.train.seed = t.value("seed", c.seed);
    } else {
        c.train.seed = c.seed;
    }
    if (j.contains("attacks")) {
        c.attacks.clear();
        for (const json& a : j.at("attacks")) c.attacks.push_back(AttackRun::from_json(a));
    }
    c.provider = j.value("provider", c.provider);
    c.threshold_percent = j.value("threshold_percent", c.threshold_percent);
    c.eps_sweep = j.value("eps_sweep", c.eps_sweep);
    c.threshold_sweep = j.value("threshold_sweep", c.threshold_sweep);
    c.lambda_att_sweep = j.value("lambda_att_sweep", c.lambda_att_sweep);
    c.baselines = j.value("baselines", c.baselines);
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::desk_default() {
    ExperimentConfig c;
    c.seed = 1;
    c.n_train = 64;
    c.n_test = 16;
    c.scene = SceneSpec{};
    c.train.lambda = 0.01;
    c.train.batch = 8;
    c.train.epochs = 30;
    c.train.learning_rate = 0.05;
    c.train.seed = c.seed;
    for (const char* fam : {"u", "t", "ue", "te"})
        for (int n : {1, 19}) {
            AttackRun r;
            r.attack.family = family_from_code(fam);
            r.attack.eps = 15.0;
            r.attack.alpha = 1.0;
            r.attack.steps = n;
            r.attack.lambda_att = 0.01;
            r.quadrant = 0;
            c.attacks.push_back(r);
        }
    c.threshold_sweep = {1.0, 3.0, 5.0, 10.0};
    c.lambda_att_sweep = {0.01, 1.0, 100.0};
    c.eps_sweep = {1.0, 15.0, 35.0};
    return c;
}

void ExperimentConfig::validate() const {
    if (out_root.empty()) throw std::invalid_argument("config: out_root is required");
    if (n_train <= 0) throw std::invalid_argument("config: n_train must be positive");
    if (n_test <= 0) throw std::invalid_argument("config: n_test must be positive");
    scene.validate();
    train.validate();
    for (const AttackRun& a : attacks) {
        a.attack.validate();
        if (a.quadrant < 0 || a.quadrant > 3)
            throw std::invalid_argument("config: quadrant must be in {0,1,2,3}");
    }
    if (!(threshold_percent > 0.0))
        throw std::invalid_argument("config: threshold_percent must be > 0");
}

// --- frame sources ---

Tensor FrameSource::load_image(const std::string& id) const {
    const fs::path dir = frames_root / "frames" / id;
    return to_tensor(read_png_rgb8(dir / (attacked ? "adv_image.png" : "image.png")));
}

Mask FrameSource::gt_mask(const std::string& id, int h, int w) const {
    if (!attacked) return Mask(h, w, false);
    return read_png_mask(frames_root / "frames" / id / "gt_mask.png");
}

FrameSource open_frame_source(const fs::path& path, const std::string& split) {
    FrameSource src;
    src.frames_root = path;
    if (fs::exists(path / "attack_manifest.json")) {
        const json m = load_json(path / "attack_manifest.json");
        src.attacked = true;
        src.dataset_root = fs::path(m.at("dataset").get<std::string>());
        src.ids = m.at("ids").get<std::vector<std::string>>();
        src.quadrant = m.at("quadrant").get<int>();
        return src;
    }
    if (fs::exists(path / "manifest.json")) {
        const Dataset ds = Dataset::open(path);
        src.attacked = false;
        src.dataset_root = path;
        src.ids = split == "all" ? ds.all_ids() : ds.ids(split);
        return src;
    }
    throw std::runtime_error("not a dataset or attack output directory: " + path.string());
}

std::unique_ptr<DepthReference> make_reference(const std::string& provider, const Dataset& ds) {
    if (provider == "gt") return make_gt_reference(ds);
    if (provider == "geometry") return make_geometry_reference(ds);
    if (provider.rfind("file:", 0) == 0)
        return make_file_reference(provider.substr(5), ds.manifest().spec.height,
                                   ds.manifest().spec.width);
    throw std::invalid_argument("unknown reference provider '" + provider +
                                "' (expected gt | geometry | file:PATH)");
}

// --- attack stage ---

void write_attack_outputs(const ModelParams& params, const Dataset& ds,
                          const std::vector<std::string>& ids, const AttackRun& run,
                          const fs::path& model_path, const fs::path& out) {
    const SceneSpec& spec = ds.manifest().spec;
    const Mask mask = quarter_mask(spec.height, spec.width, run.quadrant);
    fs::create_directories(out / "frames");

    std::vector<json> frame_info(ids.size());
    parallel_for(static_cast<int>(ids.size()), worker_count(), [&](int i) {
        const std::string& id = ids[i];
        const Tensor image = to_tensor(ds.load_frame(id).image);
        const AdversarialResult res = run_attack(params, image, run.attack, &mask);
        const fs::path dir = out / "frames" / id;
        fs::create_directories(dir);
        write_png_rgb8(dir / "adv_image.png", to_image_u8(res.adv_image));
        write_tensor_f32(dir / "perturbation.f32", res.perturbation);
        write_png_mask(dir / "gt_mask.png", mask);
        json j = run.to_json();
        j["id"] = id;
        j["loss_trace"] = res.loss_trace;
        frame_info[i] = std::move(j);
    });
    for (size_t i = 0; i < ids.size(); ++i)
        save_json(out / "frames" / ids[i] / "attack.json", frame_info[i]);

    save_json(out / "attack_manifest.json",
              json{{"version", kVersion},
                   {"dataset", ds.root().string()},
                   {"model", model_path.string()},
                   {"ids", ids},
                   {"quadrant", run.quadrant},
                   {"attack", run.attack.to_json()},
                   {"tag", run.tag()}});
}

// --- detect stage ---

void write_detect_outputs(const ModelParams& params, const FrameSource& src,
                          const DepthReference& ref, const DetectionThreshold& threshold,
                          const fs::path& out) {
    fs::create_directories(out / "frames");
    parallel_for(static_cast<int>(src.ids.size()), worker_count(), [&](int i) {
        const std::string& id = src.ids[i];
        const Tensor image = src.load_image(id);
        const Prediction pred = forward(params, image);
        const Grid z_ref = ref.get(id);
        IndicatorResult ind = depth_indicator(pred.depth, z_ref);
        const Mask flags = flag_above(ind.value, threshold.tau);
        const fs::path dir = out / "frames" / id;
        fs::create_directories(dir);
        write_png_mask(dir / "pred_mask.png", flags);
        write_grid_f32(dir / "indicator.f32", ind.value);
        write_grid_f32(dir / "density_est.f32", pred.density);
        write_grid_f32(dir / "depth_est.f32", pred.depth);
    });
    save_json(out / "detect_manifest.json",
              json{{"version", kVersion},
                   {"source", src.frames_root.string()},
                   {"dataset", src.dataset_root.string()},
                   {"attacked", src.attacked},
                   {"ids", src.ids},
                   {"provider", ref.kind()},
                   {"threshold", threshold.to_json()}});
}

// --- baseline stages ---

void write_random_baseline_outputs(const FrameSource& src, double fraction, uint64_t seed,
                                   const fs::path& out) {
    Dataset ds = Dataset::open(src.dataset_root);
    const SceneSpec& spec = ds.manifest().spec;
    fs::create_directories(out / "frames");
    for (size_t i = 0; i < src.ids.size(); ++i) {
        const Mask m = random_mask(spec.height, spec.width, fraction, mix_seed(seed, i));
        const fs::path dir = out / "frames" / src.ids[i];
        fs::create_directories(dir);
        write_png_mask(dir / "pred_mask.png", m);
    }
    save_json(out / "baseline_manifest.json", json{{"version", kVersion},
                                                   {"kind", fraction == 0.5 ? "randhalf" : "randquarter"},
                                                   {"fraction", fraction},
                                                   {"seed", seed},
                                                   {"source", src.frames_root.string()},
                                                   {"dataset", src.dataset_root.string()},
                                                   {"ids", src.ids}});
}

void write_bayesian_baseline_outputs(const ModelParams& params, const FrameSource& src,
                                     int n_passes, double drop_rate, uint64_t seed,
                                     const fs::path& out) {
    Dataset ds = Dataset::open(src.dataset_root);
    const SceneSpec& spec = ds.manifest().spec;
    fs::create_directories(out / "frames");

    std::vector<Grid> umaps(src.ids.size());
    std::vector<Mask> gts(src.ids.size());
    parallel_for(static_cast<int>(src.ids.size()), worker_count(), [&](int i) {
        const Tensor image = src.load_image(src.ids[i]);
        umaps[i] = dropout_uncertainty(params, image, n_passes, drop_rate, mix_seed(seed, i));
        gts[i] = src.gt_mask(src.ids[i], spec.height, spec.width);
    });
    const ThresholdPick pick = best_threshold_masks(umaps, gts);
    for (size_t i = 0; i < src.ids.size(); ++i) {
        const fs::path dir = out / "frames" / src.ids[i];
        fs::create_directories(dir);
        write_png_mask(dir / "pred_mask.png", pick.masks[i]);
        write_grid_f32(dir / "uncertainty.f32", umaps[i]);
    }
    save_json(out / "baseline_manifest.json", json{{"version", kVersion},
                                                   {"kind", "bayesian"},
                                                   {"n_passes", n_passes},
                                                   {"drop_rate", drop_rate},
                                                   {"seed", seed},
                                                   {"best_threshold", pick.threshold},
                                                   {"best_miou", pick.miou},
                                                   {"source", src.frames_root.string()},
                                                   {"dataset", src.dataset_root.string()},
                                                   {"ids", src.ids}});
}

// --- evaluation ---

EvalReport evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir, const Mask* roi,
                         ZmaeMode zmae_mode) {
    json pred_manifest;
    bool pred_has_estimates = false;
    std::string provider = "gt";
    if (fs::exists(pred_dir / "detect_manifest.json")) {
        pred_manifest = load_json(pred_dir / "detect_manifest.json");
        pred_has_estimates = true;
        provider = pred_manifest.at("provider").get<std::string>();
    } else if (fs::exists(pred_dir / "baseline_manifest.json")) {
        pred_manifest = load_json(pred_dir / "baseline_manifest.json");
    } else {
        throw std::runtime_error("not a detect or baseline output directory: " +
                                 pred_dir.string());
    }
    const std::vector<std::string> pred_ids = pred_manifest.at("ids").get<std::vector<std::string>>();

    FrameSource gt_src = open_frame_source(gt_dir, "test");
    if (pred_ids != gt_src.ids) {
        // Frame id sets must line up one-to-one.
        std::set<std::string> a(pred_ids.begin(), pred_ids.end());
        std::set<std::string> b(gt_src.ids.begin(), gt_src.ids.end());
        if (a != b)
            throw std::runtime_error("mismatched frame ids between " + pred_dir.string() +
                                     " and " + gt_dir.string());
    }

    Dataset ds = Dataset::open(gt_src.dataset_root);
    const SceneSpec& spec = ds.manifest().spec;
    std::unique_ptr<DepthReference> ref;
    if (pred_has_estimates)
        ref = zmae_mode == ZmaeMode::VsGroundTruth ? make_gt_reference(ds)
                                                   : make_reference(provider, ds);

    EvalReport report;
    std::vector<double> est_counts, gt_counts;
    std::vector<Grid> z_est, z_ref;
    std::vector<Mask> gt_masks_for_zmae;
    double iou_total = 0.0;
    for (const std::string& id : pred_ids) {
        const fs::path pdir = pred_dir / "frames" / id;
        FrameMetrics fm;
        fm.id = id;
        const Mask pred_mask = read_png_mask(pdir / "pred_mask.png");
        const Mask gt_mask = gt_src.gt_mask(id, spec.height, spec.width);
        fm.iou = mask_iou(pred_mask, gt_mask, roi);
        iou_total += fm.iou;
        fm.mask_empty = gt_mask.count() == 0;

        const FrameData frame = ds.load_frame(id);
        fm.count_gt = frame.count;
        if (pred_has_estimates) {
            const Grid density = read_grid_f32(pdir / "density_est.f32", spec.height, spec.width);
            fm.count_est = density_count(density);
            est_counts.push_back(fm.count_est);
            gt_counts.push_back(fm.count_gt);

            Grid depth_est = read_grid_f32(pdir / "depth_est.f32", spec.height, spec.width);
            Grid reference = ref->get(id);
            if (!fm.mask_empty) {
                double s = 0.0;
                size_t m = 0;
                for (size_t j = 0; j < depth_est.size(); ++j)
                    if (gt_mask.v[j]) {
                        s += std::abs(depth_est.v[j] - reference.v[j]);
                        ++m;
                    }
                fm.depth_mae_masked = s / m;
            }
            z_est.push_back(std::move(depth_est));
            z_ref.push_back(std::move(reference));
            gt_masks_for_zmae.push_back(gt_mask);
        }
        report.frames.push_back(std::move(fm));
    }
    report.n_frames = static_cast<int>(pred_ids.size());
    report.miou = iou_total / report.n_frames;
    if (!est_counts.empty()) {
        const CountErrors ce = count_errors(est_counts, gt_counts);
        report.dmae = ce.dmae;
        report.rmse = ce.rmse;
        bool any_mask = false;
        for (const Mask& m : gt_masks_for_zmae) any_mask |= m.count() > 0;
        if (any_mask) {
            const ZmaeResult zr = zmae(z_est, z_ref, gt_masks_for_zmae);
            report.zmae = zr.value;
            report.zmae_skipped = zr.skipped_frames;
        } else {
            report.zmae_skipped = report.n_frames;
        }
    }
    return report;
}

// --- pipeline stages ---

namespace {

struct StageInfo {
    std::string fingerprint;
    bool skipped = false;
};

uint64_t hash_json(const json& j) {
    const std::string s = j.dump();
    return hash_bytes(s.data(), s.size());
}

uint64_t combine_files(const std::vector<fs::path>& files) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const fs::path& f : files) {
        const uint64_t fh = hash_file(f);
        h = hash_bytes(&fh, sizeof(fh), h);
    }
    return h;
}

bool stage_fresh(const fs::path& stage_file, const std::string& inputs_hex,
                 const std::vector<fs::path>& required, std::string* fingerprint) {
    if (!fs::exists(stage_file)) return false;
    json j;
    try {
        j = load_json(stage_file);
    } catch (...) {
        return false;
    }
    if (j.value("inputs", "") != inputs_hex) return false;
    for (const fs::path& p : required)
        if (!fs::exists(p)) return false;
    *fingerprint = j.value("fingerprint", "");
    return !fingerprint->empty();
}

void stage_commit(const fs::path& stage_file, const std::string& name,
                  const std::string& inputs_hex, const std::string& fingerprint) {
    save_json(stage_file, json{{"stage", name}, {"inputs", inputs_hex}, {"fingerprint", fingerprint}});
}

struct PipelineCtx {
    ExperimentConfig cfg;
    fs::path dataset_dir, model_path, calib_path;
    std::optional<Dataset> ds;
    std::optional<ModelParams> params;
    std::optional<DetectionThreshold> threshold;
    StageInfo gen, train_stage, calib_stage;
    std::map<std::string, double> timings;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<fs::path> dataset_files(const fs::path& root, const DatasetManifest& m) {
    std::vector<fs::path> files = {root / "manifest.json", root / "background_depth.f32"};
    auto add = [&](const std::vector<std::string>& ids) {
        for (const std::string& id : ids)
            for (const char* f : {"image.png", "depth.f32", "density.f32", "meta.json"})
                files.push_back(root / "frames" / id / f);
    };
    add(m.train_ids);
    add(m.test_ids);
    return files;
}

void ensure_core(PipelineCtx& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    fs::create_directories(cfg.out_root);
    save_json(cfg.out_root / "config.json", cfg.to_json());

    // gen
    ctx.dataset_dir = cfg.out_root / "dataset";
    {
        const auto t0 = std::chrono::steady_clock::now();
        SceneSpec spec = cfg.scene;
        spec.sequence_seed = cfg.seed;
        const std::string inputs = hash_hex(hash_json(
            json{{"seed", cfg.seed}, {"n_train", cfg.n_train}, {"n_test", cfg.n_test}, {"scene", spec.to_json()}}));
        const fs::path stage_file = ctx.dataset_dir / "stage.json";
        if (!stage_fresh(stage_file, inputs, {ctx.dataset_dir / "manifest.json"},
                         &ctx.gen.fingerprint)) {
            generate_dataset(cfg.seed, cfg.n_train, cfg.n_test, cfg.scene, ctx.dataset_dir);
            const Dataset ds = Dataset::open(ctx.dataset_dir);
            ctx.gen.fingerprint =
                hash_hex(combine_files(dataset_files(ctx.dataset_dir, ds.manifest())));
            stage_commit(stage_file, "gen", inputs, ctx.gen.fingerprint);
        } else {
            ctx.gen.skipped = true;
        }
        ctx.timings["gen"] = seconds_since(t0);
    }
    ctx.ds = Dataset::open(ctx.dataset_dir);

    // train
    ctx.model_path = cfg.out_root / "model.dad";
    {
        const auto t0 = std::chrono::steady_clock::now();
        const std::string inputs = hash_hex(hash_json(json{
            {"gen", ctx.gen.fingerprint},
            {"train", cfg.to_json().at("train")},
        }));
        const fs::path stage_file = cfg.out_root / "train.stage.json";
        if (!stage_fresh(stage_file, inputs, {ctx.model_path, cfg.out_root / "train_log.json"},
                         &ctx.train_stage.fingerprint)) {
            std::vector<TrainingSample> samples;
            for (const std::string& id : ctx.ds->ids("train")) {
                const FrameData f = ctx.ds->load_frame(id);
                samples.push_back({to_tensor(f.image), f.density_gt, f.depth_gt});
            }
            const TrainResult result = train(samples, cfg.train);
            save_params(result.params, ctx.model_path);
            json log = json::array();
            for (const EpochLog& e : result.log)
                log.push_back(json{{"loss_density", e.loss_density},
                                   {"loss_depth", e.loss_depth},
                                   {"loss_total", e.loss_total}});
            save_json(cfg.out_root / "train_log.json", json{{"epochs", log}});
            ctx.train_stage.fingerprint = hash_hex(
                combine_files({ctx.model_path, cfg.out_root / "train_log.json"}));
            stage_commit(stage_file, "train", inputs, ctx.train_stage.fingerprint);
        } else {
            ctx.train_stage.skipped = true;
        }
        ctx.timings["train"] = seconds_since(t0);
    }
    ctx.params = load_params(ctx.model_path);

    // calibrate
    ctx.calib_path = cfg.out_root / "calib.json";
    {
        const auto t0 = std::chrono::steady_clock::now();
        const std::string inputs = hash_hex(hash_json(json{{"gen", ctx.gen.fingerprint},
                                                           {"train", ctx.train_stage.fingerprint},
                                                           {"provider", cfg.provider},
                                                           {"percent", cfg.threshold_percent}}));
        const fs::path stage_file = cfg.out_root / "calibrate.stage.json";
        if (!stage_fresh(stage_file, inputs, {ctx.calib_path}, &ctx.calib_stage.fingerprint)) {
            const auto ref = make_reference(cfg.provider, *ctx.ds);
            const DetectionThreshold thr =
                calibrate_threshold(*ctx.params, *ctx.ds, *ref, cfg.threshold_percent);
            json j = thr.to_json();
            j["provider"] = cfg.provider;
            j["model"] = ctx.model_path.string();
            save_json(ctx.calib_path, j);
            ctx.calib_stage.fingerprint = hash_hex(combine_files({ctx.calib_path}));
            stage_commit(stage_file, "calibrate", inputs, ctx.calib_stage.fingerprint);
        } else {
            ctx.calib_stage.skipped = true;
        }
        ctx.timings["calibrate"] = seconds_since(t0);
    }
    ctx.threshold = DetectionThreshold::from_json(load_json(ctx.calib_path));
}

std::vector<fs::path> frame_outputs(const fs::path& root, const std::vector<std::string>& ids,
                                    const std::vector<std::string>& names) {
    std::vector<fs::path> out;
    for (const std::string& id : ids)
        for (const std::string& n : names) out.push_back(root / "frames" / id / n);
    return out;
}

} // namespace

RunRecord run_pipeline(const ExperimentConfig& cfg_in) {
    ExperimentConfig cfg = cfg_in;
    cfg.validate();
    PipelineCtx ctx;
    ctx.cfg = cfg;
    ensure_core(ctx);

    const std::vector<std::string> test_ids = ctx.ds->ids("test");
    std::map<std::string, StageInfo> attack_stages, detect_stages;
    std::map<std::string, std::map<std::string, StageInfo>> baseline_stages;

    // attacks
    for (const AttackRun& run : cfg.attacks) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::string tag = run.tag();
        const fs::path dir = cfg.out_root / "attacks" / tag;
        const std::string inputs = hash_hex(hash_json(json{{"gen", ctx.gen.fingerprint},
                                                           {"train", ctx.train_stage.fingerprint},
                                                           {"attack", run.to_json()}}));
        StageInfo info;
        if (!stage_fresh(dir / "stage.json", inputs, {dir / "attack_manifest.json"},
                         &info.fingerprint)) {
            write_attack_outputs(*ctx.params, *ctx.ds, test_ids, run, ctx.model_path, dir);
            std::vector<fs::path> files = frame_outputs(
                dir, test_ids, {"adv_image.png", "perturbation.f32", "gt_mask.png", "attack.json"});
            files.push_back(dir / "attack_manifest.json");
            info.fingerprint = hash_hex(combine_files(files));
            stage_commit(dir / "stage.json", "attack:" + tag, inputs, info.fingerprint);
        } else {
            info.skipped = true;
        }
        attack_stages[tag] = info;
        ctx.timings["attack:" + tag] = seconds_since(t0);
    }

    // detection (clean + per attack)
    auto run_detect = [&](const std::string& name, const fs::path& source_dir,
                          const std::string& upstream_fp) {
        const auto t0 = std::chrono::steady_clock::now();
        const fs::path dir = cfg.out_root / "detect" / name;
        const std::string inputs = hash_hex(hash_json(json{{"calib", ctx.calib_stage.fingerprint},
                                                           {"upstream", upstream_fp},
                                                           {"provider", cfg.provider}}));
        StageInfo info;
        if (!stage_fresh(dir / "stage.json", inputs, {dir / "detect_manifest.json"},
                         &info.fingerprint)) {
            const FrameSource src = open_frame_source(source_dir, "test");
            const auto ref = make_reference(cfg.provider, *ctx.ds);
            write_detect_outputs(*ctx.params, src, *ref, *ctx.threshold, dir);
            std::vector<fs::path> files = frame_outputs(
                dir, src.ids, {"pred_mask.png", "indicator.f32", "density_est.f32", "depth_est.f32"});
            files.push_back(dir / "detect_manifest.json");
            info.fingerprint = hash_hex(combine_files(files));
            stage_commit(dir / "stage.json", "detect:" + name, inputs, info.fingerprint);
        } else {
            info.skipped = true;
        }
        detect_stages[name] = info;
        ctx.timings["detect:" + name] = seconds_since(t0);
    };
    run_detect("clean", ctx.dataset_dir, ctx.gen.fingerprint);
    for (const AttackRun& run : cfg.attacks)
        run_detect(run.tag(), cfg.out_root / "attacks" / run.tag(),
                   attack_stages[run.tag()].fingerprint);

    // baselines per attack
    for (const AttackRun& run : cfg.attacks) {
        const std::string tag = run.tag();
        for (const std::string& kind : cfg.baselines) {
            const auto t0 = std::chrono::steady_clock::now();
            const fs::path dir = cfg.out_root / "baselines" / kind / tag;
            const std::string inputs =
                hash_hex(hash_json(json{{"attack", attack_stages[tag].fingerprint},
                                        {"train", ctx.train_stage.fingerprint},
                                        {"kind", kind},
                                        {"seed", cfg.seed}}));
            StageInfo info;
            if (!stage_fresh(dir / "stage.json", inputs, {dir / "baseline_manifest.json"},
                             &info.fingerprint)) {
                const FrameSource src =
                    open_frame_source(cfg.out_root / "attacks" / tag, "test");
                if (kind == "randhalf")
                    write_random_baseline_outputs(src, 0.5, mix_seed(cfg.seed, "randhalf:" + tag),
                                                  dir);
                else if (kind == "randquarter")
                    write_random_baseline_outputs(src, 0.25,
                                                  mix_seed(cfg.seed, "randquarter:" + tag), dir);
                else if (kind == "bayesian")
                    write_bayesian_baseline_outputs(*ctx.params, src, kDefaultDropoutPasses,
                                                    kDefaultDropoutRate,
                                                    mix_seed(cfg.seed, "bayesian:" + tag), dir);
                else
                    throw std::invalid_argument("unknown baseline kind: " + kind);
                std::vector<fs::path> files =
                    frame_outputs(dir, src.ids, {"pred_mask.png"});
                files.push_back(dir / "baseline_manifest.json");
                info.fingerprint = hash_hex(combine_files(files));
                stage_commit(dir / "stage.json", "baseline:" + kind + ":" + tag, inputs,
                             info.fingerprint);
            } else {
                info.skipped = true;
            }
            baseline_stages[kind][tag] = info;
            ctx.timings["baseline:" + kind + ":" + tag] = seconds_since(t0);
        }
    }

    // eval
    const fs::path eval_dir = cfg.out_root / "eval";
    StageInfo eval_stage;
    {
        const auto t0 = std::chrono::steady_clock::now();
        json upstream = json{{"calib", ctx.calib_stage.fingerprint}};
        for (const auto& [tag, info] : attack_stages) upstream["attack:" + tag] = info.fingerprint;
        for (const auto& [tag, info] : detect_stages) upstream["detect:" + tag] = info.fingerprint;
        for (const auto& [kind, tags] : baseline_stages)
            for (const auto& [tag, info] : tags)
                upstream["baseline:" + kind + ":" + tag] = info.fingerprint;
        const std::string inputs = hash_hex(hash_json(upstream));
        if (!stage_fresh(eval_dir / "stage.json", inputs, {eval_dir / "summary.json"},
                         &eval_stage.fingerprint)) {
            fs::create_directories(eval_dir);
            json summary;

            // clean block
            {
                const EvalReport clean =
                    evaluate_dirs(cfg.out_root / "detect" / "clean", ctx.dataset_dir);
                double flagged = 0.0;
                const SceneSpec& spec = ctx.ds->manifest().spec;
                std::vector<Grid> z_est, z_ref;
                std::vector<Mask> masks;
                const auto ref = make_reference(cfg.provider, *ctx.ds);
                const Mask q0 = quarter_mask(spec.height, spec.width, 0);
                for (const std::string& id : test_ids) {
                    const fs::path fdir = cfg.out_root / "detect" / "clean" / "frames" / id;
                    const Mask pm = read_png_mask(fdir / "pred_mask.png");
                    flagged += static_cast<double>(pm.count()) / pm.size();
                    z_est.push_back(read_grid_f32(fdir / "depth_est.f32", spec.height, spec.width));
                    z_ref.push_back(ref->get(id));
                    masks.push_back(q0);
                }
                const ZmaeResult zr = zmae(z_est, z_ref, masks);
                summary["clean"] = json{{"dmae", clean.dmae},
                                        {"rmse", clean.rmse},
                                        {"zmae_quadrant0", zr.value},
                                        {"flagged_fraction", flagged / test_ids.size()}};
            }

            json attacks_summary;
            for (const AttackRun& run : cfg.attacks) {
                const std::string tag = run.tag();
                const fs::path attack_dir = cfg.out_root / "attacks" / tag;
                const EvalReport det =
                    evaluate_dirs(cfg.out_root / "detect" / tag, attack_dir);
                json entry{{"dmae", det.dmae},
                           {"rmse", det.rmse},
                           {"zmae", det.zmae},
                           {"miou_detect", det.miou}};
                for (const std::string& kind : cfg.baselines) {
                    const EvalReport base =
                        evaluate_dirs(cfg.out_root / "baselines" / kind / tag, attack_dir);
                    entry["miou_" + kind] = base.miou;
                    if (kind == "bayesian") {
                        const json bm = load_json(cfg.out_root / "baselines" / kind / tag /
                                                  "baseline_manifest.json");
                        entry["bayesian_threshold"] = bm.at("best_threshold").get<double>();
                    }
                }
                // Fraction of attacked pixels whose indicator clears tau.
                const SceneSpec& spec = ctx.ds->manifest().spec;
                double exceed = 0.0;
                for (const std::string& id : test_ids) {
                    const Grid ind = read_grid_f32(
                        cfg.out_root / "detect" / tag / "frames" / id / "indicator.f32",
                        spec.height, spec.width);
                    const Mask gt = read_png_mask(attack_dir / "frames" / id / "gt_mask.png");
                    size_t above = 0, total = 0;
                    for (size_t j = 0; j < ind.size(); ++j)
                        if (gt.v[j]) {
                            ++total;
                            above += ind.v[j] > ctx.threshold->tau;
                        }
                    exceed += total ? static_cast<double>(above) / total : 0.0;
                }
                entry["indicator_exceed_fraction"] = exceed / test_ids.size();
                attacks_summary[tag] = entry;
            }
            summary["attacks"] = attacks_summary;
            save_json(eval_dir / "summary.json", summary);

            // per-tag csv
            std::ostringstream csv;
            csv << "tag,dmae,rmse,zmae,miou_detect,miou_randhalf,miou_randquarter,miou_bayesian,"
                   "indicator_exceed_fraction\n";
            for (const auto& [tag, entry] : attacks_summary.items()) {
                csv << tag;
                for (const char* k : {"dmae", "rmse", "zmae", "miou_detect", "miou_randhalf",
                                      "miou_randquarter", "miou_bayesian",
                                      "indicator_exceed_fraction"}) {
                    csv << ',';
                    if (entry.contains(k)) csv << entry.at(k).dump();
                }
                csv << '\n';
            }
            write_text(eval_dir / "summary.csv", csv.str());
            eval_stage.fingerprint =
                hash_hex(combine_files({eval_dir / "summary.json", eval_dir / "summary.csv"}));
            stage_commit(eval_dir / "stage.json", "eval", inputs, eval_stage.fingerprint);
        } else {
            eval_stage.skipped = true;
        }
        ctx.timings["eval"] = seconds_since(t0);
    }

    // run record
    json stages{{"gen", ctx.gen.fingerprint},
                {"train", ctx.train_stage.fingerprint},
                {"calibrate", ctx.calib_stage.fingerprint},
                {"eval", eval_stage.fingerprint}};
    for (const auto& [tag, info] : attack_stages) stages["attack:" + tag] = info.fingerprint;
    for (const auto& [tag, info] : detect_stages) stages["detect:" + tag] = info.fingerprint;
    for (const auto& [kind, tags] : baseline_stages)
        for (const auto& [tag, info] : tags)
            stages["baseline:" + kind + ":" + tag] = info.fingerprint;

    const json summary = load_json(cfg.out_root / "eval" / "summary.json");
    const json stable{{"version", kVersion},
                      {"config", cfg.to_json()},
                      {"stages", stages},
                      {"summary", summary}};
    json record = stable;
    record["record_hash"] = hash_hex(hash_json(stable));
    json timings;
    for (const auto& [k, v] : ctx.timings) timings[k] = v;
    record["timings_s"] = timings; // volatile, excluded from the hash

    RunRecord rr;
    rr.document = record;
    rr.path = cfg.out_root / "run_record.json";
    save_json(rr.path, record);
    return rr;
}

// --- sweeps ---

namespace {

struct SweepPoint {
    std::string family;
    double axis_value = 0.0;
    double miou = 0.0;
    double dmae = 0.0;
};

SweepResult write_sweep_outputs(const fs::path& dir, const std::string& axis_name,
                                const std::vector<SweepPoint>& points) {
    fs::create_directories(dir);
    std::ostringstream csv;
    csv << "family," << axis_name << ",miou,dmae\n";
    json points_json = json::array();
    for (const SweepPoint& p : points) {
        csv << p.family << ',' << p.axis_value << ',' << p.miou << ',' << p.dmae << '\n';
        points_json.push_back(json{{"family", p.family},
                                   {axis_name, p.axis_value},
                                   {"miou", p.miou},
                                   {"dmae", p.dmae}});
    }
    SweepResult res;
    res.points_csv = dir / "points.csv";
    res.points_json = dir / "points.json";
    res.plot_svg = dir / ("miou_vs_" + axis_name + ".svg");
    write_text(res.points_csv, csv.str());
    save_json(res.points_json, points_json);

    // one polyline per family
    std::vector<std::string> families;
    for (const SweepPoint& p : points)
        if (std::find(families.begin(), families.end(), p.family) == families.end())
            families.push_back(p.family);
    SeriesPlot plot;
    plot.title = "detection mIoU vs " + axis_name;
    plot.x_label = axis_name;
    plot.y_label = "mIoU";
    for (const std::string& fam : families) {
        std::vector<double> xs, ys;
        for (const SweepPoint& p : points)
            if (p.family == fam) {
                xs.push_back(p.axis_value);
                ys.push_back(p.miou);
            }
        if (plot.x.empty()) plot.x = xs;
        plot.series.emplace_back(fam, ys);
    }
    write_text(res.plot_svg, plot.render_svg());
    return res;
}

/// In-memory attack + detect over the test split; returns (miou, dmae, zmae).
struct QuickEval {
    double miou = 0.0, dmae = 0.0;
};

QuickEval quick_attack_eval(PipelineCtx& ctx, const AttackRun& run) {
    const Dataset& ds = *ctx.ds;
    const SceneSpec& spec = ds.manifest().spec;
    const std::vector<std::string>& ids = ds.ids("test");
    const Mask mask = quarter_mask(spec.height, spec.width, run.quadrant);
    const auto ref = make_reference(ctx.cfg.provider, ds);

    std::vector<double> ious(ids.size()), est(ids.size()), gt(ids.size());
    parallel_for(static_cast<int>(ids.size()), worker_count(), [&](int i) {
        const FrameData frame = ds.load_frame(ids[i]);
        const Tensor image = to_tensor(frame.image);
        const AdversarialResult res = run_attack(*ctx.params, image, run.attack, &mask);
        // Detection consumes the 8-bit export, like the on-disk pipeline.
        const Tensor adv = to_tensor(to_image_u8(res.adv_image));
        const DetectionResult det = detect(*ctx.params, adv, ref->get(ids[i]), *ctx.threshold);
        ious[i] = mask_iou(det.flags, mask);
        const Prediction pred = forward(*ctx.params, adv);
        est[i] = density_count(pred.density);
        gt[i] = frame.count;
    });
    QuickEval q;
    for (double v : ious) q.miou += v;
    q.miou /= ids.size();
    q.dmae = count_errors(est, gt).dmae;
    return q;
}

} // namespace

SweepResult run_sweep(const ExperimentConfig& cfg_in, const std::string& axis) {
    ExperimentConfig cfg = cfg_in;
    cfg.validate();

    if (axis == "threshold") {
        // Re-thresholds the stored indicator maps, so the full pipeline must exist.
        if (cfg.threshold_sweep.empty())
            throw std::invalid_argument("sweep: threshold_sweep list is empty");
        run_pipeline(cfg);
        PipelineCtx ctx;
        ctx.cfg = cfg;
        ensure_core(ctx);
        const SceneSpec& spec = ctx.ds->manifest().spec;
        const std::vector<std::string>& ids = ctx.ds->ids("test");
        std::vector<SweepPoint> points;
        for (double percent : cfg.threshold_sweep) {
            const double tau = percent / 100.0 * ctx.threshold->calibration_max;
            for (const AttackRun& run : cfg.attacks) {
                const std::string tag = run.tag();
                double miou = 0.0;
                for (const std::string& id : ids) {
                    const Grid ind = read_grid_f32(
                        cfg.out_root / "detect" / tag / "frames" / id / "indicator.f32",
                        spec.height, spec.width);
                    const Mask gt = read_png_mask(cfg.out_root / "attacks" / tag / "frames" / id /
                                                  "gt_mask.png");
                    miou += mask_iou(flag_above(ind, tau), gt);
                }
                SweepPoint p;
                p.family = tag;
                p.axis_value = percent;
                p.miou = miou / ids.size();
                const json summary = load_json(cfg.out_root / "eval" / "summary.json");
                p.dmae = summary.at("attacks").at(tag).at("dmae").get<double>();
                points.push_back(p);
            }
        }
        return write_sweep_outputs(cfg.out_root / "sweep" / "threshold", "percent", points);
    }

    PipelineCtx ctx;
    ctx.cfg = cfg;
    ensure_core(ctx);

    if (axis == "eps") {
        if (cfg.eps_sweep.empty()) throw std::invalid_argument("sweep: eps_sweep list is empty");
        // Unique families from the configured attack lines, default quadrant.
        std::vector<AttackFamily> families;
        int quadrant = 0;
        for (const AttackRun& run : cfg.attacks) {
            if (std::find(families.begin(), families.end(), run.attack.family) == families.end())
                families.push_back(run.attack.family);
            quadrant = run.quadrant;
        }
        std::vector<SweepPoint> points;
        for (double eps : cfg.eps_sweep)
            for (AttackFamily fam : families) {
                AttackRun run;
                run.attack.family = fam;
                run.attack.eps = eps;
                run.attack.alpha = 1.0;
                run.attack.steps = schedule_steps(eps);
                run.quadrant = quadrant;
                const QuickEval q = quick_attack_eval(ctx, run);
                points.push_back({family_code(fam), eps, q.miou, q.dmae});
            }
        return write_sweep_outputs(cfg.out_root / "sweep" / "eps", "eps", points);
    }

    if (axis == "lambda-att") {
        if (cfg.lambda_att_sweep.empty())
            throw std::invalid_argument("sweep: lambda_att_sweep list is empty");
        std::vector<SweepPoint> points;
        for (double lam : cfg.lambda_att_sweep)
            for (const AttackRun& base : cfg.attacks) {
                if (!family_is_exposed(base.attack.family)) continue;
                AttackRun run = base;
                run.attack.lambda_att = lam;
                const QuickEval q = quick_attack_eval(ctx, run);
                points.push_back({family_code(run.attack.family) + "_n" +
                                      std::to_string(run.attack.steps),
                                  lam, q.miou, q.dmae});
            }
        if (points.empty())
            throw std::invalid_argument("sweep: no exposed attack lines in the config");
        return write_sweep_outputs(cfg.out_root / "sweep" / "lambda_att", "lambda_att", points);
    }

    throw std::invalid_argument("unknown sweep axis '" + axis +
                                "' (expected eps | threshold | lambda-att)");
}

// --- cross-seed report ---

namespace {

struct Agg {
    std::vector<double> values;
    void add(double v) { values.push_back(v); }
    double mean() const {
        double s = 0.0;
        for (double v : values) s += v;
        return values.empty() ? 0.0 : s / values.size();
    }
    double stdev() const {
        if (values.size() < 2) return 0.0;
        const double m = mean();
        double s = 0.0;
        for (double v : values) s += (v - m) * (v - m);
        return std::sqrt(s / (values.size() - 1));
    }
};

std::string mean_std(const Agg& a) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f +/- %.3f", a.mean(), a.stdev());
    return buf;
}

} // namespace

void emit_report(const std::vector<fs::path>& record_paths, const fs::path& out_dir) {
    if (record_paths.empty()) throw std::invalid_argument("emit_report: need at least one record");
    std::vector<json> records;
    for (const fs::path& p : record_paths) {
        if (!fs::exists(p)) throw std::runtime_error("missing run record: " + p.string());
        records.push_back(load_json(p));
    }
    fs::create_directories(out_dir);

    std::vector<std::string> tags;
    for (const auto& [tag, entry] : records.front().at("summary").at("attacks").items())
        tags.push_back(tag);
    std::sort(tags.begin(), tags.end());

    const std::vector<std::string> metrics = {"dmae", "rmse", "zmae"};
    const std::vector<std::string> detectors = {"miou_randhalf", "miou_randquarter",
                                                "miou_bayesian", "miou_detect"};

    std::map<std::string, std::map<std::string, Agg>> err_rows, det_rows; // row -> col -> agg
    for (const json& rec : records) {
        const json& clean = rec.at("summary").at("clean");
        err_rows["clean"]["dmae"].add(clean.at("dmae").get<double>());
        err_rows["clean"]["rmse"].add(clean.at("rmse").get<double>());
        err_rows["clean"]["zmae"].add(clean.at("zmae_quadrant0").get<double>());
        for (const std::string& tag : tags) {
            const json& entry = rec.at("summary").at("attacks").at(tag);
            for (const std::string& m : metrics)
                err_rows[tag][m].add(entry.at(m).get<double>());
            for (const std::string& d : detectors)
                if (entry.contains(d)) det_rows[tag][d].add(entry.at(d).get<double>());
        }
    }

    // CSVs
    std::ostringstream err_csv;
    err_csv << "row,dmae_mean,dmae_std,rmse_mean,rmse_std,zmae_mean,zmae_std\n";
    auto emit_err_row = [&](const std::string& row) {
        err_csv << row;
        for (const std::string& m : metrics) {
            const Agg& a = err_rows[row][m];
            err_csv << ',' << a.mean() << ',' << a.stdev();
        }
        err_csv << '\n';
    };
    emit_err_row("clean");
    for (const std::string& tag : tags) emit_err_row(tag);
    write_text(out_dir / "errors.csv", err_csv.str());

    std::ostringstream det_csv;
    det_csv << "attack,randhalf,randquarter,bayesian,ours_mean,ours_std\n";
    for (const std::string& tag : tags) {
        det_csv << tag << ',' << det_rows[tag]["miou_randhalf"].mean() << ','
                << det_rows[tag]["miou_randquarter"].mean() << ','
                << det_rows[tag]["miou_bayesian"].mean() << ','
                << det_rows[tag]["miou_detect"].mean() << ','
                << det_rows[tag]["miou_detect"].stdev() << '\n';
    }
    write_text(out_dir / "detector_comparison.csv", det_csv.str());

    // markdown
    std::ostringstream md;
    md << "# Run report\n\n";
    md << records.size() << " run record(s).\n\n";
    md << "## Count and depth errors (mean +/- std over seeds)\n\n";
    md << "| run | DMAE | RMSE | ZMAE |\n|---|---|---|---|\n";
    auto md_err_row = [&](const std::string& row) {
        md << "| " << row;
        for (const std::string& m : metrics) md << " | " << mean_std(err_rows[row][m]);
        md << " |\n";
    };
    md_err_row("clean");
    for (const std::string& tag : tags) md_err_row(tag);
    md << "\n## Pixel-wise detection mIoU (mean over seeds)\n\n";
    md << "| attack | RANDHALF | RANDQUARTER | BAYESIAN | OURS |\n|---|---|---|---|---|\n";
    for (const std::string& tag : tags) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "| %s | %.3f | %.3f | %.3f | %s |\n", tag.c_str(),
                      det_rows[tag]["miou_randhalf"].mean(),
                      det_rows[tag]["miou_randquarter"].mean(),
                      det_rows[tag]["miou_bayesian"].mean(),
                      mean_std(det_rows[tag]["miou_detect"]).c_str());
        md << buf;
    }
    write_text(out_dir / "report.md", md.str());

    // detector comparison plot over attack index
    SeriesPlot plot;
    plot.title = "detector comparison";
    plot.x_label = "attack index";
    plot.y_label = "mIoU";
    for (size_t i = 0; i < tags.size(); ++i) plot.x.push_back(static_cast<double>(i));
    for (const std::string& d : detectors) {
        std::vector<double> ys;
        for (const std::string& tag : tags) ys.push_back(det_rows[tag][d].mean());
        plot.series.emplace_back(d, ys);
    }
    write_text(out_dir / "detector_comparison.svg", plot.render_svg());
}

} // namespace dad
