#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "octcal/common.hpp"
#include "octcal/distortion.hpp"
#include "octcal/registration.hpp"
#include "octcal/volume.hpp"

namespace octcal {

/// Cylinder with a flat end at `tip`; the shaft extends from the tip along
/// `axis`, which must have a positive y component so the tip sits in the
/// first B-scan slice the needle occupies.
struct NeedleSpec {
  Vec3 axis{0.0, 1.0, 0.0};
  Vec3 tip{1.5, 1.5, 1.3};
  double radius_mm = 0.155;
  double reflectivity = 200.0;
  /// Rendered shaft starts this far behind the geometric tip (models the
  /// optically invisible tip end).
  double tip_truncation_mm = 0.0;
};

struct BallSpec {
  Vec3 center{1.5, 1.5, 1.3};
  double radius_mm = 0.25;
  double reflectivity = 220.0;
};

struct SurfaceSpec {
  double depth_mm = 1.9;
  double reflectivity = 160.0;
};

/// Objects and imaging texture of one synthetic capture, described in
/// corrected (metric) camera space.
struct Scene {
  std::optional<NeedleSpec> needle;
  std::optional<BallSpec> ball;
  std::optional<SurfaceSpec> surface;
  double background_level = 10.0;
  double speckle_sigma = 4.0;
  int band_voxels = 3;                   ///< bright surface band thickness
  double attenuation_length_mm = 0.02;   ///< interior intensity decay constant
};

/// Per-scene ground truth emitted by the renderer.
struct SceneTruth {
  /// Intensity-weighted centroid of the needle voxels in the first raw
  /// B-scan slice the needle reaches, mapped to corrected space. This is the
  /// visible tip an ideal detector reports.
  std::optional<Vec3> needle_tip_visible;
  std::optional<Vec3> needle_tip_geometric;
  std::optional<Vec3> ball_center;
  GalvoParams galvo;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Renders the scene into a raw (distorted) volume: per corrected-space
/// column each object contributes a bright axial band at its top surface and
/// an exponentially attenuated interior; every sample is forward-warped with
/// distort_point and splatted to the nearest voxel; zero-mean Gaussian noise
/// with noise_sigma is added last. Deterministic for a fixed seed.
std::pair<Volume, SceneTruth> render_scene(const Scene& scene,
                                           const ScanGeometry& geom,
                                           const GalvoParams& g,
                                           double noise_sigma,
                                           std::uint64_t seed);

/// Independent zero-mean Gaussian perturbation per voxel, clamped to
/// [0, 255]. sigma = 0 returns a bit-identical copy.
Volume add_noise(const Volume& v, double sigma, std::uint64_t seed);

enum class TrajectoryPattern { Traj1, Traj2, Custom };

/// Micro-displacement trajectory: legs of equal steps along the axes in
/// axis_order, the whole sequence repeated `repeats` times. Traj1 fixes
/// 10 steps/leg, one pass; Traj2 fixes 5 steps/leg, two passes.
struct TrajectorySpec {
  TrajectoryPattern pattern = TrajectoryPattern::Traj1;
  double step_um = 20.0;
  int steps_per_leg = 10;       ///< Custom only
  int repeats = 1;              ///< Custom only
  std::string axis_order = "xzy";
  Vec3 start{0.0, 0.0, 0.0};
};

TrajectoryPattern parse_trajectory_pattern(const std::string& name);

/// Robot-frame positions, starting pose included.
std::vector<Vec3> make_trajectory(const TrajectorySpec& spec);

/// Which detected entity the dataset tracks.
enum class DetectMode { Needle, Marker };

DetectMode parse_detect_mode(const std::string& name);
std::string detect_mode_name(DetectMode m);

/// Everything needed to synthesize a pose-per-volume dataset.
struct SynthConfig {
  ScanGeometry geometry;
  GalvoParams galvo{1.489, 151.563, 1.068, 428.541};
  RigidTransform camera_to_robot;
  Scene scene;
  TrajectorySpec trajectory;
  DetectMode mode = DetectMode::Needle;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
};

SynthConfig load_synth_config(const std::filesystem::path& path);
void save_synth_config(const SynthConfig& cfg, const std::filesystem::path& path);

/// Ground-truth record for a generated dataset.
struct DatasetGroundTruth {
  RigidTransform camera_to_robot;
  GalvoParams galvo;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<Vec3> robot_poses;          ///< commanded robot positions A'
  std::vector<Vec3> camera_tips;          ///< tracked entity, geometric
  std::vector<Vec3> camera_tips_visible;  ///< as rendered (needle: band tip)
  std::vector<Vec3> robot_tips_visible;   ///< transform applied to the above
};

void save_ground_truth(const DatasetGroundTruth& gt,
                       const std::filesystem::path& path);
DatasetGroundTruth load_ground_truth(const std::filesystem::path& path);

/// Renders one volume per trajectory pose into out_dir (pose_###.oct plus
/// raw files) along with robot_poses.csv, galvo.txt, ground_truth.json and
/// config_used.json. Returns the ground truth.
DatasetGroundTruth generate_dataset(const SynthConfig& cfg,
                                    const std::filesystem::path& out_dir);

/// In-memory variant: calls sink(pose_index, volume) instead of writing
/// volume files (the other dataset artifacts are not produced).
DatasetGroundTruth generate_dataset_volumes(
    const SynthConfig& cfg,
    const std::function<void(int, const Volume&)>& sink);

}  // namespace octcal
