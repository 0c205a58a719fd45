#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "octcal/harness.hpp"

namespace {

using namespace octcal;

void add_pipeline_flags(CLI::App* cmd, PipelineParams& p) {
  cmd->add_option("--threshold-k", p.threshold_k,
                  "Adaptive threshold factor k (mean + k*sigma)");
  cmd->add_option("--m-e-px", p.m_e_px,
                  "Ellipse minor-axis gate in pixels (<=0: auto from "
                  "instrument diameter)");
  cmd->add_option("--instrument-diameter-mm", p.instrument_diameter_mm,
                  "Instrument diameter used for the automatic m_e");
  cmd->add_option("--d-tol-px", p.d_tol_px,
                  "Ellipse boundary membership tolerance in pixels");
  cmd->add_option("--contour-jump-px", p.contour_jump_px,
                  "Axial jump that splits a topmost-contour group");
  cmd->add_option("--leaf-mm", p.leaf_mm, "Voxel grid filter leaf size");
  cmd->add_option("--cluster-tol-mm", p.cluster_tol_mm,
                  "Euclidean clustering distance threshold t");
  cmd->add_option("--ball-radius-mm", p.ball_radius_mm,
                  "Marker ball radius hint for sphere fitting");
  cmd->add_option("--ransac-iters", p.ransac_iters, "RANSAC iterations");
  cmd->add_option("--ransac-tol-mm", p.ransac_inlier_tol_mm,
                  "RANSAC inlier distance tolerance");
  cmd->add_option("--ransac-seed", p.ransac_seed, "RANSAC random seed");
  cmd->add_flag("--reversed-scan", p.reversed_scan,
                "Needle enters from the high-y side (tip at maximal y slice)");
}

void print_report(const ErrorReport& r) {
  std::printf(
      "n=%zu mean=%.3f um median=%.3f um q1=%.3f q3=%.3f min=%.3f max=%.3f "
      "outliers=%zu\n",
      r.errors_um.size(), r.mean, r.median, r.q1, r.q3, r.min, r.max,
      r.outlier_indices.size());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Hand-eye calibration toolkit for volumetric scanner and "
               "micromanipulator"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic pose-per-volume dataset from a scene "
               "config");
  std::string synth_config, synth_out;
  double synth_sigma = -1.0;
  std::int64_t synth_seed = -1;
  synth->add_option("--config", synth_config, "Scene/trajectory JSON config")
      ->required();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--noise-sigma", synth_sigma,
                    "Override the config's Gaussian noise sigma");
  synth->add_option("--seed", synth_seed, "Override the config's seed");

  // calibrate-galvo
  auto* calib = app.add_subcommand(
      "calibrate-galvo",
      "Estimate pivot parameters from flat-surface volumes");
  std::string calib_flat_x, calib_flat_y, calib_out;
  double calib_k = 2.0;
  calib->add_option("--flat-x", calib_flat_x,
                    "Flat-surface volume for the x pivot (header path)")
      ->required();
  calib->add_option("--flat-y", calib_flat_y,
                    "Flat-surface volume for the y pivot (defaults to --flat-x)");
  calib->add_option("--out", calib_out, "Output parameter file")->required();
  calib->add_option("--threshold-k", calib_k, "Surface threshold factor k");

  // detect-tip
  auto* detect = app.add_subcommand(
      "detect-tip", "Detect the instrument position in a single volume");
  std::string detect_volume, detect_galvo, detect_mode = "needle", detect_out,
              detect_labels_dir, detect_cloud;
  PipelineParams detect_params;
  detect->add_option("--volume", detect_volume, "Volume header path")->required();
  detect->add_option("--galvo", detect_galvo, "Galvo parameter file")->required();
  detect->add_option("--mode", detect_mode, "needle or marker");
  detect->add_option("--out", detect_out, "Optional tip CSV output path");
  detect->add_option("--dump-labels", detect_labels_dir,
                     "Write per-B-scan label masks as PGM images here");
  detect->add_option("--dump-cloud", detect_cloud,
                     "Write the filtered labeled point cloud to this file");
  add_pipeline_flags(detect, detect_params);

  // run
  auto* run = app.add_subcommand(
      "run", "Run a trajectory dataset: detect per pose, solve, report");
  std::string run_dataset, run_out, run_method = "SVDT", run_mode = "needle",
              run_galvo;
  PipelineParams run_params;
  double run_q = 1e-6, run_r = 1e-4;
  bool run_skip = false;
  run->add_option("--dataset", run_dataset, "Dataset directory")->required();
  run->add_option("--out", run_out, "Output directory")->required();
  run->add_option("--method", run_method, "SVDT, QT or QKT");
  run->add_option("--mode", run_mode, "needle or marker");
  run->add_option("--galvo", run_galvo,
                  "Galvo parameter file (default <dataset>/galvo.txt)");
  run->add_option("--kalman-q", run_q, "Kalman process noise (mm^2, QKT)");
  run->add_option("--kalman-r", run_r, "Kalman measurement noise (mm^2, QKT)");
  run->add_flag("--skip-failed", run_skip,
                "Exclude failed poses instead of aborting");
  add_pipeline_flags(run, run_params);

  // noise-sweep
  auto* sweep = app.add_subcommand(
      "noise-sweep",
      "Re-run a synthetic scene under Gaussian noise sigma = 0..40 step 4");
  std::string sweep_config, sweep_out, sweep_method = "QKT";
  PipelineParams sweep_params;
  double sweep_q = 4e-4, sweep_r = 1e-4;
  std::int64_t sweep_seed = -1;
  sweep->add_option("--config", sweep_config, "Scene/trajectory JSON config")
      ->required();
  sweep->add_option("--out", sweep_out, "Output directory")->required();
  sweep->add_option("--method", sweep_method, "SVDT, QT or QKT");
  sweep->add_option("--kalman-q", sweep_q, "Kalman process noise (mm^2)");
  sweep->add_option("--kalman-r", sweep_r, "Kalman measurement noise (mm^2)");
  sweep->add_option("--seed", sweep_seed, "Override the config's seed");
  add_pipeline_flags(sweep, sweep_params);

  // stats
  auto* stats = app.add_subcommand(
      "stats", "Summarize an error CSV (index,e_um rows)");
  std::string stats_errors, stats_out;
  stats->add_option("--errors", stats_errors, "Error CSV path")->required();
  stats->add_option("--out", stats_out, "Optional summary CSV output path");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    SynthConfig cfg = load_synth_config(synth_config);
    if (synth_sigma >= 0.0) cfg.noise_sigma = synth_sigma;
    if (synth_seed >= 0) cfg.seed = static_cast<std::uint64_t>(synth_seed);
    const DatasetGroundTruth gt = generate_dataset(cfg, synth_out);
    std::printf("wrote %zu poses to %s\n", gt.robot_poses.size(),
                synth_out.c_str());
    return 0;
  }

  if (calib->parsed()) {
    const Volume flat_x = load_volume(calib_flat_x);
    GalvoParams params;
    if (calib_flat_y.empty() || calib_flat_y == calib_flat_x) {
      params = calibrate_galvo(flat_x, flat_x, calib_k);
    } else {
      const Volume flat_y = load_volume(calib_flat_y);
      params = calibrate_galvo(flat_x, flat_y, calib_k);
    }
    save_galvo_params(params, calib_out);
    std::printf("x_c %.9g\nz_xc %.9g\ny_c %.9g\nz_yc %.9g\n", params.x_c,
                params.z_xc, params.y_c, params.z_yc);
    return 0;
  }

  if (detect->parsed()) {
    const Volume volume = load_volume(detect_volume);
    const GalvoParams galvo = load_galvo_params(detect_galvo);
    const DetectMode mode = parse_detect_mode(detect_mode);
    if (!detect_labels_dir.empty() || !detect_cloud.empty()) {
      const auto labels = label_volume(volume, mode, detect_params);
      if (!detect_labels_dir.empty()) {
        std::filesystem::create_directories(detect_labels_dir);
        for (std::size_t iy = 0; iy < labels.size(); ++iy) {
          char name[32];
          std::snprintf(name, sizeof(name), "bscan_%03zu.pgm", iy);
          save_label_image(labels[iy],
                           std::filesystem::path(detect_labels_dir) / name);
        }
      }
      if (!detect_cloud.empty())
        save_cloud(volume_to_cloud(volume, labels, detect_params.leaf_mm),
                   detect_cloud);
    }
    const Vec3 tip = detect_entity(volume, galvo, mode, detect_params);
    std::printf("x_mm,y_mm,z_mm\n%.9g,%.9g,%.9g\n", tip.x(), tip.y(), tip.z());
    if (!detect_out.empty()) {
      std::FILE* f = std::fopen(detect_out.c_str(), "w");
      if (!f) throw IoError("cannot write " + detect_out);
      std::fprintf(f, "x_mm,y_mm,z_mm\n%.9g,%.9g,%.9g\n", tip.x(), tip.y(),
                   tip.z());
      std::fclose(f);
    }
    return 0;
  }

  if (run->parsed()) {
    RunConfig cfg;
    cfg.dataset_dir = run_dataset;
    cfg.output_dir = run_out;
    cfg.method = parse_method(run_method);
    cfg.mode = parse_detect_mode(run_mode);
    cfg.pipeline = run_params;
    cfg.kalman_q = run_q;
    cfg.kalman_r = run_r;
    cfg.skip_failed = run_skip;
    if (!run_galvo.empty()) cfg.galvo_path = run_galvo;
    const TrajectoryRunResult result = run_trajectory(cfg);
    print_report(result.report);
    std::fprintf(stderr, "mean detection time %.3f s/volume\n",
                 result.mean_detect_seconds);
    return 0;
  }

  if (sweep->parsed()) {
    SweepConfig cfg;
    cfg.synth = load_synth_config(sweep_config);
    if (sweep_seed >= 0) cfg.synth.seed = static_cast<std::uint64_t>(sweep_seed);
    cfg.output_dir = sweep_out;
    cfg.mode = cfg.synth.mode;
    cfg.method = parse_method(sweep_method);
    cfg.pipeline = sweep_params;
    cfg.kalman_q = sweep_q;
    cfg.kalman_r = sweep_r;
    const NoiseSweepResult result = noise_sweep(cfg);
    for (std::size_t i = 0; i < result.sigmas.size(); ++i) {
      if (result.reports[i])
        std::printf("sigma=%d mean=%.3f um\n", result.sigmas[i],
                    result.reports[i]->mean);
      else
        std::printf("sigma=%d failed\n", result.sigmas[i]);
    }
    for (const std::string& f : result.failures)
      std::fprintf(stderr, "%s\n", f.c_str());
    return 0;
  }

  if (stats->parsed()) {
    const ErrorReport report = load_error_report(stats_errors);
    print_report(report);
    if (!stats_out.empty()) save_error_report(report, stats_out);
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
