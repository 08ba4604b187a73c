#include "doctest.h"

#include <filesystem>
#include <set>

#include "dad/harness.hpp"

using namespace dad;

namespace {

ExperimentConfig tiny_config(const fs::path& root) {
    ExperimentConfig cfg = ExperimentConfig::desk_default();
    cfg.out_root = root;
    cfg.seed = 5;
    cfg.n_train = 8;
    cfg.n_test = 4;
    cfg.scene.width = 48;
    cfg.scene.height = 48;
    cfg.scene.count_min = 1;
    cfg.scene.count_max = 4;
    cfg.scene.density.sigma = 2.0;
    cfg.scene.density.truncation_radius = 8.0;
    cfg.train.epochs = 2;
    cfg.train.learning_rate = 1e-3;
    cfg.train.batch = 4;
    cfg.train.seed = 5;
    cfg.attacks.clear();
    AttackRun u1;
    u1.attack.family = AttackFamily::Untargeted;
    u1.attack.steps = 1;
    cfg.attacks.push_back(u1);
    AttackRun te;
    te.attack.family = AttackFamily::TargetedExposed;
    te.attack.steps = 2;
    cfg.attacks.push_back(te);
    cfg.threshold_sweep = {1.0, 5.0};
    cfg.lambda_att_sweep = {0.01, 100.0};
    cfg.eps_sweep = {1.0, 15.0};
    return cfg;
}

} // namespace

TEST_CASE("pipeline: full run, idempotent re-run, stage isolation") {
    const fs::path root = fs::temp_directory_path() / "dad_test_pipeline";
    fs::remove_all(root);
    const ExperimentConfig cfg = tiny_config(root);

    const RunRecord first = run_pipeline(cfg);
    CHECK(fs::exists(root / "dataset" / "manifest.json"));
    CHECK(fs::exists(root / "model.dad"));
    CHECK(fs::exists(root / "calib.json"));
    CHECK(fs::exists(root / "attacks" / cfg.attacks[0].tag() / "attack_manifest.json"));
    CHECK(fs::exists(root / "detect" / "clean" / "detect_manifest.json"));
    CHECK(fs::exists(root / "detect" / cfg.attacks[0].tag() / "detect_manifest.json"));
    CHECK(fs::exists(root / "baselines" / "randhalf" / cfg.attacks[0].tag() /
                     "baseline_manifest.json"));
    CHECK(fs::exists(root / "eval" / "summary.json"));
    CHECK(fs::exists(root / "run_record.json"));

    const json summary = first.document.at("summary");
    CHECK(summary.contains("clean"));
    CHECK(summary.at("attacks").contains(cfg.attacks[0].tag()));
    const json entry = summary.at("attacks").at(cfg.attacks[0].tag());
    CHECK(entry.at("miou_detect").get<double>() >= 0.0);
    CHECK(entry.at("miou_detect").get<double>() <= 1.0);
    CHECK(entry.at("dmae").get<double>() >= 0.0);

    // full perturbation artifacts exist per frame
    const fs::path frame0 =
        root / "attacks" / cfg.attacks[0].tag() / "frames" / "test0000";
    CHECK(fs::exists(frame0 / "adv_image.png"));
    CHECK(fs::exists(frame0 / "perturbation.f32"));
    CHECK(fs::exists(frame0 / "gt_mask.png"));
    CHECK(fs::exists(frame0 / "attack.json"));

    // re-run: everything skips, record hash identical
    const auto model_mtime = fs::last_write_time(root / "model.dad");
    const RunRecord second = run_pipeline(cfg);
    CHECK(second.record_hash() == first.record_hash());
    CHECK(fs::last_write_time(root / "model.dad") == model_mtime);

    // stage isolation: wipe only eval, re-run recomputes only eval
    const auto attack_mtime = fs::last_write_time(frame0 / "adv_image.png");
    fs::remove_all(root / "eval");
    const RunRecord third = run_pipeline(cfg);
    CHECK(third.record_hash() == first.record_hash());
    CHECK(fs::exists(root / "eval" / "summary.json"));
    CHECK(fs::last_write_time(frame0 / "adv_image.png") == attack_mtime);
    CHECK(fs::last_write_time(root / "model.dad") == model_mtime);

    // gt mask bookkeeping: recorded mask equals the requested quadrant
    const Mask gt = read_png_mask(frame0 / "gt_mask.png");
    const Mask expected = quarter_mask(48, 48, cfg.attacks[0].quadrant);
    CHECK(gt.v == expected.v);

    SUBCASE("frame sources and standalone evaluation") {
        const FrameSource clean_src = open_frame_source(root / "dataset");
        CHECK_FALSE(clean_src.attacked);
        CHECK(clean_src.ids.size() == 4);
        const FrameSource adv_src =
            open_frame_source(root / "attacks" / cfg.attacks[0].tag());
        CHECK(adv_src.attacked);
        CHECK(adv_src.quadrant == cfg.attacks[0].quadrant);
        CHECK_THROWS(open_frame_source(root / "eval"));

        const EvalReport rep = evaluate_dirs(root / "detect" / cfg.attacks[0].tag(),
                                             root / "attacks" / cfg.attacks[0].tag());
        CHECK(rep.n_frames == 4);
        CHECK(rep.miou >= 0.0);
        CHECK(rep.miou <= 1.0);
        CHECK(rep.dmae <= rep.rmse + 1e-12);

        const EvalReport base_rep =
            evaluate_dirs(root / "baselines" / "randquarter" / cfg.attacks[0].tag(),
                          root / "attacks" / cfg.attacks[0].tag());
        CHECK(base_rep.miou >= 0.0);
    }

    SUBCASE("report rendering is deterministic") {
        emit_report({root / "run_record.json"}, root / "report1");
        emit_report({root / "run_record.json"}, root / "report2");
        CHECK(fs::exists(root / "report1" / "report.md"));
        CHECK(hash_file(root / "report1" / "report.md") ==
              hash_file(root / "report2" / "report.md"));
        CHECK(hash_file(root / "report1" / "errors.csv") ==
              hash_file(root / "report2" / "errors.csv"));
        CHECK(hash_file(root / "report1" / "detector_comparison.csv") ==
              hash_file(root / "report2" / "detector_comparison.csv"));
    }

    SUBCASE("threshold sweep re-thresholds stored indicators deterministically") {
        const SweepResult sweep = run_sweep(cfg, "threshold");
        CHECK(fs::exists(sweep.points_csv));
        CHECK(fs::exists(sweep.points_json));
        CHECK(fs::exists(sweep.plot_svg));
        const uint64_t h = hash_file(sweep.points_csv);
        run_sweep(cfg, "threshold");
        CHECK(hash_file(sweep.points_csv) == h);
    }

    SUBCASE("lambda sweep covers the exposed lines") {
        const SweepResult sweep = run_sweep(cfg, "lambda-att");
        const json points = load_json(sweep.points_json);
        // one exposed attack line x two lambda values
        CHECK(points.size() == 2);
        for (const json& p : points) CHECK(p.contains("dmae"));
    }

    SUBCASE("unknown sweep axis is rejected") {
        CHECK_THROWS_AS(run_sweep(cfg, "bogus"), std::invalid_argument);
    }

    fs::remove_all(root);
}

TEST_CASE("experiment config: json round trip and validation") {
    ExperimentConfig cfg = ExperimentConfig::desk_default();
    cfg.out_root = "/tmp/x";
    const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json(), "/");
    CHECK(back.to_json() == cfg.to_json());
    CHECK(cfg.attacks.size() == 8);

    ExperimentConfig bad = cfg;
    bad.n_train = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.attacks[0].quadrant = 7;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("attack run tags are filesystem-friendly and distinct") {
    ExperimentConfig cfg = ExperimentConfig::desk_default();
    std::set<std::string> tags;
    for (const AttackRun& a : cfg.attacks) tags.insert(a.tag());
    CHECK(tags.size() == cfg.attacks.size());
    AttackRun u19;
    u19.attack.family = AttackFamily::Untargeted;
    u19.attack.steps = 19;
    CHECK(u19.tag() == "u_n19_eps15_q0");
    AttackRun te;
    te.attack.family = AttackFamily::TargetedExposed;
    te.attack.steps = 1;
    te.attack.lambda_att = 0.01;
    CHECK(te.tag() == "te_n1_eps15_lam0.01_q0");
}
