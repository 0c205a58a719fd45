#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "octcal/cloud3d.hpp"
#include "octcal/registration.hpp"
#include "octcal/synth.hpp"

namespace octcal {

/// Detection-pipeline tunables shared by all entry points.
struct PipelineParams {
  double threshold_k = 2.0;              ///< adaptive threshold: mean + k*sigma
  double instrument_diameter_mm = 0.31;  ///< used for the automatic m_e
  double m_e_px = 0.0;                   ///< <= 0: 1.5 * diameter / pitch_x
  double d_tol_px = 2.0;
  int contour_jump_px = 4;
  double leaf_mm = 0.02;
  double cluster_tol_mm = 0.1;
  double ball_radius_mm = 0.25;  ///< sphere-fit radius hint (marker mode)
  int ransac_iters = 500;
  double ransac_inlier_tol_mm = 0.02;
  std::uint64_t ransac_seed = kDefaultRansacSeed;
  bool reversed_scan = false;
};

/// m_e in pixels for a given volume geometry (auto rule unless overridden).
double effective_m_e_px(const PipelineParams& p, const ScanGeometry& geom);

/// Runs the full single-volume detection: needle mode segments, clusters,
/// votes and localizes the tip; marker mode thresholds, denoises and fits the
/// RANSAC sphere. The returned position is distortion-corrected (mm).
Vec3 detect_entity(const Volume& v, const GalvoParams& g, DetectMode mode,
                   const PipelineParams& p);

/// Labels every B-scan of a volume (parallel over B-scans). Marker mode
/// skips the ellipse stage and leaves the needle masks empty.
std::vector<LabeledBScan> label_volume(const Volume& v, DetectMode mode,
                                       const PipelineParams& p);

struct RunConfig {
  std::filesystem::path dataset_dir;
  std::filesystem::path output_dir;
  DetectMode mode = DetectMode::Needle;
  SolveMethod method = SolveMethod::Svdt;
  PipelineParams pipeline;
  double kalman_q = 1e-6;  ///< mm^2, QKT only
  double kalman_r = 1e-4;  ///< mm^2, QKT only
  bool skip_failed = false;
  /// Galvo parameter file; defaults to <dataset_dir>/galvo.txt.
  std::optional<std::filesystem::path> galvo_path;
};

struct PoseDetection {
  int pose = 0;
  bool ok = false;
  Vec3 position = Vec3::Zero();  ///< corrected camera-frame detection
  double seconds = 0.0;          ///< detection time for this volume
  std::string message;
};

struct TrajectoryRunResult {
  std::vector<PoseDetection> detections;
  Correspondences correspondences;  ///< pairs for the solved poses
  RigidTransform transform;
  ErrorReport report;
  double mean_detect_seconds = 0.0;
};

/// Loads a pose-per-volume dataset, detects the tracked entity per pose,
/// solves the hand-eye transform and writes transform.txt, errors.csv,
/// detections.csv and timings.txt into the output directory. A failed pose
/// aborts with its index unless skip_failed is set, in which case it is
/// excluded from the solve.
TrajectoryRunResult run_trajectory(const RunConfig& cfg);

/// Box-plot statistics for a list of per-point errors in micrometers.
ErrorReport report_stats(std::vector<double> errors_um);

struct SweepConfig {
  SynthConfig synth;  ///< base scene; its noise_sigma is ignored
  std::filesystem::path output_dir;
  DetectMode mode = DetectMode::Needle;
  SolveMethod method = SolveMethod::Qkt;
  PipelineParams pipeline;
  double kalman_q = 4e-4;  ///< default matched to the 20 um step size
  double kalman_r = 1e-4;
};

struct NoiseSweepResult {
  std::vector<int> sigmas;  ///< 0, 4, ..., 40
  std::vector<std::optional<ErrorReport>> reports;  ///< per sigma; nullopt on failure
  std::vector<std::string> failures;
};

/// Renders the base dataset once (sigma = 0) under <output_dir>/base, then
/// for each sigma in {0, 4, ..., 40} perturbs every volume with that noise,
/// reruns the pipeline with the configured solver and collects error
/// reports. Per-sigma failures are recorded and the sweep continues.
NoiseSweepResult noise_sweep(const SweepConfig& cfg);

/// Writes the per-sigma summary CSV produced by noise_sweep.
void save_sweep_csv(const NoiseSweepResult& r, const std::filesystem::path& path);

/// Robot pose list and galvo parameters of an on-disk dataset.
struct Dataset {
  std::filesystem::path dir;
  std::vector<Vec3> robot_poses;
  GalvoParams galvo;
};

Dataset load_dataset(const std::filesystem::path& dir,
                     const std::optional<std::filesystem::path>& galvo_path =
                         std::nullopt);

std::filesystem::path pose_volume_path(const std::filesystem::path& dir,
                                       int pose);

}  // namespace octcal
