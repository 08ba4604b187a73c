#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dad/attacks.hpp"
#include "dad/baselines.hpp"
#include "dad/dataset.hpp"
#include "dad/defense.hpp"
#include "dad/metrics.hpp"
#include "dad/model.hpp"

namespace dad {

/// One attack line of an experiment; the tag names its artifact directory.
struct AttackRun {
    AttackConfig attack;
    int quadrant = 0;

    std::string tag() const;
    json to_json() const;
    static AttackRun from_json(const json& j);
};

struct ExperimentConfig {
    fs::path out_root;
    uint64_t seed = 1;
    int n_train = 64;
    int n_test = 16;
    SceneSpec scene;
    TrainConfig train;
    std::vector<AttackRun> attacks;
    std::string provider = "gt"; // gt | geometry | file:PATH
    double threshold_percent = 5.0;
    std::vector<double> eps_sweep;        // schedule_steps picks n per point
    std::vector<double> threshold_sweep;  // percents
    std::vector<double> lambda_att_sweep; // applied to the exposed attack lines
    std::vector<std::string> baselines = {"randhalf", "randquarter", "bayesian"};

    json to_json() const;
    static ExperimentConfig from_json(const json& j, const fs::path& base_dir);
    static ExperimentConfig desk_default(); // 64/16 frames at 128x128, all 8 attacks

    void validate() const;
};

// --- reusable stage runners (the CLI verbs call these directly) ---

/// Attack every listed frame and write the per-frame artifacts
/// (adv_image.png, perturbation.f32, gt_mask.png, attack.json) plus
/// attack_manifest.json under `out`.
void write_attack_outputs(const ModelParams& params, const Dataset& ds,
                          const std::vector<std::string>& ids, const AttackRun& run,
                          const fs::path& model_path, const fs::path& out);

/// Where detection reads its frames from: a dataset split (clean) or an
/// attack output directory (adversarial).
struct FrameSource {
    fs::path frames_root;   // directory containing frames/<id>/
    fs::path dataset_root;  // originating dataset
    std::vector<std::string> ids;
    bool attacked = false;
    int quadrant = -1; // ground-truth quadrant when attacked

    Tensor load_image(const std::string& id) const;
    Mask gt_mask(const std::string& id, int h, int w) const; // empty when clean
};

/// Opens either a dataset root (uses `split`, default test) or an attack
/// output root, recognized by its manifest file.
FrameSource open_frame_source(const fs::path& path, const std::string& split = "test");

std::unique_ptr<DepthReference> make_reference(const std::string& provider, const Dataset& ds);

void write_detect_outputs(const ModelParams& params, const FrameSource& src,
                          const DepthReference& ref, const DetectionThreshold& threshold,
                          const fs::path& out);

void write_random_baseline_outputs(const FrameSource& src, double fraction, uint64_t seed,
                                   const fs::path& out);
void write_bayesian_baseline_outputs(const ModelParams& params, const FrameSource& src,
                                     int n_passes, double drop_rate, uint64_t seed,
                                     const fs::path& out);

enum class ZmaeMode { VsReference, VsGroundTruth };

/// Scores one prediction directory (detect or baseline output) against the
/// ground truth in `gt_dir` (an attack output or a dataset root).
EvalReport evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir,
                         const Mask* roi = nullptr, ZmaeMode zmae_mode = ZmaeMode::VsReference);

// --- pipeline ---

struct RunRecord {
    json document;
    fs::path path;

    std::string record_hash() const { return document.at("record_hash").get<std::string>(); }
};

/// gen -> train -> calibrate -> attacks -> detect -> baselines -> eval.
/// Stages are skipped when their inputs fingerprint matches the previous
/// run and their outputs are still on disk.
RunRecord run_pipeline(const ExperimentConfig& cfg);

struct SweepResult {
    fs::path points_csv;
    fs::path points_json;
    fs::path plot_svg;
};

/// axis: "eps" | "threshold" | "lambda-att". Reuses the pipeline stages
/// under cfg.out_root (running them if needed).
SweepResult run_sweep(const ExperimentConfig& cfg, const std::string& axis);

/// Renders the cross-seed comparison tables (clean-vs-attacked errors and
/// detector mIoU) as markdown + CSV + SVG into `out_dir`.
void emit_report(const std::vector<fs::path>& record_paths, const fs::path& out_dir);

} // namespace dad
