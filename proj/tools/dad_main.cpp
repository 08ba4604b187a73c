// dad: density-and-depth workbench for adversarial attacks on crowd
// density regressors. Subcommands cover the full pipeline: dataset
// synthesis, two-stream training, FGSM-family attacks, depth-consistency
// detection, baselines, evaluation, sweeps and reports.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "dad/harness.hpp"
#include "dad/version.hpp"

using namespace dad;

namespace {

ExperimentConfig load_config(const std::string& path) {
    const fs::path p = fs::absolute(path);
    return ExperimentConfig::from_json(load_json(p), p.parent_path());
}

int cmd_gen(uint64_t seed, int n_train, int n_test, const std::string& out, int count_min,
            int count_max, double sigma, int size) {
    SceneSpec spec;
    spec.count_min = count_min;
    spec.count_max = count_max;
    spec.density.sigma = sigma;
    spec.density.truncation_radius = 4.0 * sigma;
    spec.width = size;
    spec.height = size;
    generate_dataset(seed, n_train, n_test, spec, out);
    std::printf("wrote %d train + %d test frames to %s\n", n_train, n_test, out.c_str());
    return 0;
}

int cmd_train(const std::string& data, double lambda, int epochs, double lr, int batch,
              uint64_t seed, const std::string& out) {
    const Dataset ds = Dataset::open(data);
    std::vector<TrainingSample> samples;
    for (const std::string& id : ds.ids("train")) {
        const FrameData f = ds.load_frame(id);
        samples.push_back({to_tensor(f.image), f.density_gt, f.depth_gt});
    }
    TrainConfig cfg;
    cfg.lambda = lambda;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.batch = batch;
    cfg.seed = seed;
    const TrainResult result = train(samples, cfg);
    save_params(result.params, out);
    if (!result.log.empty())
        std::printf("epoch %zu: L_d=%.6g L_z=%.6g\n", result.log.size(),
                    result.log.back().loss_density, result.log.back().loss_depth);
    std::printf("saved %s\n", out.c_str());
    return 0;
}

int cmd_attack(const std::string& model, const std::string& data, const std::string& family,
               double eps, double alpha, int steps, double lambda_att, int quadrant,
               const std::string& target_rule, const std::string& out) {
    const ModelParams params = load_params(model);
    const Dataset ds = Dataset::open(data);
    AttackRun run;
    run.attack.family = family_from_code(family);
    run.attack.eps = eps;
    run.attack.alpha = alpha;
    run.attack.steps = steps > 0 ? steps : schedule_steps(eps);
    run.attack.lambda_att = lambda_att;
    run.attack.target_rule = target_rule_from_name(target_rule);
    run.quadrant = quadrant;
    write_attack_outputs(params, ds, ds.ids("test"), run, model, out);
    std::printf("attacked %zu frames (%s) -> %s\n", ds.ids("test").size(), run.tag().c_str(),
                out.c_str());
    return 0;
}

int cmd_calibrate(const std::string& model, const std::string& data, const std::string& provider,
                  double percent, const std::string& out) {
    const ModelParams params = load_params(model);
    const Dataset ds = Dataset::open(data);
    const auto ref = make_reference(provider, ds);
    const DetectionThreshold thr = calibrate_threshold(params, ds, *ref, percent);
    json j = thr.to_json();
    j["provider"] = provider;
    j["model"] = model;
    save_json(out, j);
    std::printf("calibration_max=%.6g tau=%.6g -> %s\n", thr.calibration_max, thr.tau,
                out.c_str());
    return 0;
}

int cmd_detect(const std::string& model, const std::string& frames, const std::string& provider,
               const std::string& tau_file, const std::string& split, const std::string& out) {
    const ModelParams params = load_params(model);
    const FrameSource src = open_frame_source(frames, split);
    const Dataset ds = Dataset::open(src.dataset_root);
    const auto ref = make_reference(provider, ds);
    const DetectionThreshold thr = DetectionThreshold::from_json(load_json(tau_file));
    write_detect_outputs(params, src, *ref, thr, out);
    std::printf("detection masks for %zu frames -> %s\n", src.ids.size(), out.c_str());
    return 0;
}

int cmd_baseline(const std::string& kind, const std::string& model, const std::string& frames,
                 uint64_t seed, int passes, double drop_rate, const std::string& split,
                 const std::string& out) {
    const FrameSource src = open_frame_source(frames, split);
    if (kind == "randhalf" || kind == "randquarter") {
        write_random_baseline_outputs(src, kind == "randhalf" ? 0.5 : 0.25, seed, out);
    } else if (kind == "bayesian") {
        if (model.empty()) throw std::runtime_error("baseline bayesian requires --model");
        write_bayesian_baseline_outputs(load_params(model), src, passes, drop_rate, seed, out);
    } else {
        throw std::runtime_error("unknown baseline kind: " + kind);
    }
    std::printf("%s baseline for %zu frames -> %s\n", kind.c_str(), src.ids.size(), out.c_str());
    return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& roi,
             const std::string& zmae_mode, const std::string& out) {
    std::optional<Mask> roi_mask;
    if (!roi.empty()) roi_mask = read_png_mask(roi);
    const EvalReport report = evaluate_dirs(
        pred, gt, roi_mask ? &*roi_mask : nullptr,
        zmae_mode == "gt" ? ZmaeMode::VsGroundTruth : ZmaeMode::VsReference);
    json j = report.to_json();
    j["pred"] = pred;
    j["gt"] = gt;
    j["zmae_mode"] = zmae_mode;
    save_json(out, j);
    fs::path csv = out;
    csv.replace_extension(".csv");
    write_text(csv, report.to_csv());
    std::printf("miou=%.4f dmae=%.4f rmse=%.4f zmae=%.4f -> %s\n", report.miou, report.dmae,
                report.rmse, report.zmae, out.c_str());
    return 0;
}

int cmd_depthstats(const std::string& data, const std::string& split, const std::string& out) {
    const Dataset ds = Dataset::open(data);
    std::vector<Grid> maps;
    for (const std::string& id : ds.ids(split)) maps.push_back(ds.load_depth(id));
    const DepthStats stats = fit_depth_stats(maps);
    save_depth_stats(out, stats);
    std::printf("depth stats over %zu frames -> %s\n", maps.size(), out.c_str());
    return 0;
}

int cmd_check_ref(const std::string& stats_path, const std::string& ref_dir, double beta) {
    const DepthStats stats = load_depth_stats(stats_path);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(ref_dir))
        if (e.path().extension() == ".f32") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .f32 reference maps in " + ref_dir);

    std::vector<Grid> refs;
    for (const fs::path& f : files)
        refs.push_back(read_grid_f32(f, stats.z_min.h, stats.z_min.w));
    const DepthStats ref_stats = fit_depth_stats(refs); // supplies per-pixel mu_z

    double rate = 0.0;
    for (const Grid& z : refs) {
        const Grid tampered = tamper_reference(z, beta, ref_stats.z_mean);
        rate += detect_reference_tampering(tampered, stats).detection_rate;
    }
    rate /= refs.size();
    std::printf("beta=%g detection_rate=%.4f over %zu maps\n", beta, rate, refs.size());
    json j{{"beta", beta}, {"detection_rate", rate}, {"n_maps", refs.size()},
           {"stats", stats_path}, {"ref", ref_dir}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"density-and-depth adversarial attack workbench"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic RGB-D crowd dataset");
    uint64_t gen_seed = 0;
    int gen_train = 64, gen_test = 16, gen_cmin = 5, gen_cmax = 30, gen_size = 128;
    double gen_sigma = 4.0;
    std::string gen_out;
    gen->add_option("--seed", gen_seed, "master seed")->required();
    gen->add_option("--train", gen_train, "training frames")->required();
    gen->add_option("--test", gen_test, "test frames")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count-min", gen_cmin, "minimum crowd count");
    gen->add_option("--count-max", gen_cmax, "maximum crowd count");
    gen->add_option("--sigma", gen_sigma, "density kernel std in pixels");
    gen->add_option("--size", gen_size, "frame width and height");

    // train
    auto* tr = app.add_subcommand("train", "train the two-stream density+depth model");
    std::string tr_data, tr_out = "model.dad";
    double tr_lambda = 0.01, tr_lr = 1e-3;
    int tr_epochs = 10, tr_batch = 8;
    uint64_t tr_seed = 0;
    tr->add_option("--data", tr_data)->required();
    tr->add_option("--lambda", tr_lambda, "depth loss balance");
    tr->add_option("--epochs", tr_epochs)->required();
    tr->add_option("--lr", tr_lr, "learning rate");
    tr->add_option("--batch", tr_batch);
    tr->add_option("--seed", tr_seed)->required();
    tr->add_option("--out", tr_out)->required();

    // attack
    auto* at = app.add_subcommand("attack", "run an FGSM-family attack on the test split");
    std::string at_model, at_data, at_family = "u", at_rule = "add_one_per_pixel", at_out;
    double at_eps = 15.0, at_alpha = 1.0, at_lam = 0.01;
    int at_steps = 19, at_quadrant = 0;
    at->add_option("--model", at_model)->required();
    at->add_option("--data", at_data)->required();
    at->add_option("--family", at_family, "u|t|ue|te");
    at->add_option("--eps", at_eps, "L-inf budget (0..255 scale)");
    at->add_option("--alpha", at_alpha, "step size");
    at->add_option("--steps", at_steps, "iterations; 0 = min(eps+4, 1.25*eps) schedule");
    at->add_option("--lambda-att", at_lam, "exposed attack balance");
    at->add_option("--quadrant", at_quadrant, "tampered quadrant 0..3");
    at->add_option("--target-rule", at_rule, "add_one_per_pixel|add_one_total");
    at->add_option("--out", at_out)->required();

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "derive the detection threshold on clean training frames");
    std::string cal_model, cal_data, cal_out = "calib.json", cal_provider = "gt";
    double cal_percent = 5.0;
    cal->add_option("--model", cal_model)->required();
    cal->add_option("--data", cal_data)->required();
    cal->add_option("--ref", cal_provider, "gt|geometry|file:PATH");
    cal->add_option("--percent", cal_percent, "threshold percent of the training max");
    cal->add_option("--out", cal_out)->required();

    // detect
    auto* det = app.add_subcommand("detect", "flag tampered pixels via the depth indicator");
    std::string det_model, det_frames, det_provider = "gt", det_tau, det_split = "test", det_out;
    det->add_option("--model", det_model)->required();
    det->add_option("--frames", det_frames, "dataset root or attack output dir")->required();
    det->add_option("--ref", det_provider, "gt|geometry|file:PATH");
    det->add_option("--tau-file", det_tau, "calibration json")->required();
    det->add_option("--split", det_split, "train|test|all (dataset sources)");
    det->add_option("--out", det_out)->required();

    // baseline
    auto* base = app.add_subcommand("baseline", "random or uncertainty-thresholding detectors");
    std::string base_kind, base_model, base_frames, base_split = "test", base_out;
    uint64_t base_seed = 0;
    int base_passes = kDefaultDropoutPasses;
    double base_rate = kDefaultDropoutRate;
    base->add_option("--kind", base_kind, "randhalf|randquarter|bayesian")->required();
    base->add_option("--model", base_model, "model file (bayesian)");
    base->add_option("--frames", base_frames)->required();
    base->add_option("--seed", base_seed);
    base->add_option("--passes", base_passes, "dropout passes");
    base->add_option("--drop-rate", base_rate);
    base->add_option("--split", base_split);
    base->add_option("--out", base_out)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "score predicted masks and estimates");
    std::string ev_pred, ev_gt, ev_roi, ev_zmae = "ref", ev_out = "report.json";
    ev->add_option("--pred", ev_pred, "detect or baseline output dir")->required();
    ev->add_option("--gt", ev_gt, "attack output dir or dataset root")->required();
    ev->add_option("--roi", ev_roi, "optional ROI mask png");
    ev->add_option("--zmae", ev_zmae, "ref|gt: depth error reference");
    ev->add_option("--out", ev_out)->required();

    // depthstats
    auto* dst = app.add_subcommand("depthstats", "per-pixel min/max/mean of training depth maps");
    std::string dst_data, dst_out = "stats.f32x3", dst_split = "train";
    dst->add_option("--data", dst_data)->required();
    dst->add_option("--split", dst_split);
    dst->add_option("--out", dst_out)->required();

    // check-ref
    auto* chk = app.add_subcommand("check-ref", "detect tampered reference depth maps");
    std::string chk_stats, chk_ref;
    double chk_beta = 0.01;
    chk->add_option("--stats", chk_stats)->required();
    chk->add_option("--ref", chk_ref, "directory of <id>.f32 reference maps")->required();
    chk->add_option("--beta", chk_beta, "tamper strength");

    // sweep
    auto* sw = app.add_subcommand("sweep", "eps / threshold / attacker-lambda sweeps");
    std::string sw_config, sw_axis;
    sw->add_option("--config", sw_config)->required();
    sw->add_option("--axis", sw_axis, "eps|threshold|lambda-att")->required();

    // report
    auto* rep = app.add_subcommand("report", "aggregate run records into tables and plots");
    std::vector<std::string> rep_records;
    std::string rep_out;
    rep->add_option("--records", rep_records, "run_record.json paths")->required()->expected(-1);
    rep->add_option("--out", rep_out)->required();

    // run
    auto* run = app.add_subcommand("run", "full gen->train->attack->detect->eval pipeline");
    std::string run_config;
    run->add_option("--config", run_config)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen(gen_seed, gen_train, gen_test, gen_out, gen_cmin, gen_cmax, gen_sigma,
                           gen_size);
        if (tr->parsed())
            return cmd_train(tr_data, tr_lambda, tr_epochs, tr_lr, tr_batch, tr_seed, tr_out);
        if (at->parsed())
            return cmd_attack(at_model, at_data, at_family, at_eps, at_alpha, at_steps, at_lam,
                              at_quadrant, at_rule, at_out);
        if (cal->parsed()) return cmd_calibrate(cal_model, cal_data, cal_provider, cal_percent, cal_out);
        if (det->parsed())
            return cmd_detect(det_model, det_frames, det_provider, det_tau, det_split, det_out);
        if (base->parsed())
            return cmd_baseline(base_kind, base_model, base_frames, base_seed, base_passes,
                                base_rate, base_split, base_out);
        if (ev->parsed()) return cmd_eval(ev_pred, ev_gt, ev_roi, ev_zmae, ev_out);
        if (dst->parsed()) return cmd_depthstats(dst_data, dst_split, dst_out);
        if (chk->parsed()) return cmd_check_ref(chk_stats, chk_ref, chk_beta);
        if (sw->parsed()) {
            const SweepResult res = run_sweep(load_config(sw_config), sw_axis);
            std::printf("sweep points -> %s\n", res.points_csv.string().c_str());
            return 0;
        }
        if (rep->parsed()) {
            std::vector<fs::path> paths(rep_records.begin(), rep_records.end());
            emit_report(paths, rep_out);
            std::printf("report -> %s\n", (fs::path(rep_out) / "report.md").string().c_str());
            return 0;
        }
        if (run->parsed()) {
            const RunRecord rr = run_pipeline(load_config(run_config));
            std::printf("run record -> %s (hash %s)\n", rr.path.string().c_str(),
                        rr.record_hash().c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
