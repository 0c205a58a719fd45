#include "octcal/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace octcal {

double effective_m_e_px(const PipelineParams& p, const ScanGeometry& geom) {
  if (p.m_e_px > 0.0) return p.m_e_px;
  return 1.5 * p.instrument_diameter_mm / geom.pitch_x();
}

std::vector<LabeledBScan> label_volume(const Volume& v, DetectMode mode,
                                       const PipelineParams& p) {
  const ScanGeometry& geom = v.geometry();
  SegmentationParams seg;
  seg.k = p.threshold_k;
  seg.d_tol_px = p.d_tol_px;
  seg.contour_jump_px = p.contour_jump_px;
  const double m_e = effective_m_e_px(p, geom);

  std::vector<LabeledBScan> labels(static_cast<std::size_t>(geom.n_y));
  parallel_for(geom.n_y, [&](int iy) {
    if (mode == DetectMode::Needle) {
      labels[static_cast<std::size_t>(iy)] =
          label_needle_pixels(v.bscan(iy), m_e, seg);
    } else {
      LabeledBScan lb;
      lb.foreground = denoise(adaptive_threshold(v.bscan(iy), seg.k),
                              seg.median_window, seg.gaussian_window,
                              seg.gaussian_sigma);
      lb.needle = Mask2D(geom.n_z, geom.n_x);
      labels[static_cast<std::size_t>(iy)] = std::move(lb);
    }
  });
  return labels;
}

Vec3 detect_entity(const Volume& v, const GalvoParams& g, DetectMode mode,
                   const PipelineParams& p) {
  const std::vector<LabeledBScan> labels = label_volume(v, mode, p);
  const PointCloud cloud = volume_to_cloud(v, labels, p.leaf_mm);
  if (mode == DetectMode::Needle) {
    const std::vector<Cluster> clusters =
        cluster_euclidean(cloud, p.cluster_tol_mm);
    const Cluster& needle = segment_needle(clusters);
    return locate_tip(needle, cloud, g, p.reversed_scan);
  }
  const SphereFit fit =
      fit_sphere_ransac(cloud, p.ball_radius_mm, p.ransac_iters,
                        p.ransac_inlier_tol_mm, p.ransac_seed);
  return correct_point(fit.center, g);
}

ErrorReport report_stats(std::vector<double> errors_um) {
  return make_error_report(std::move(errors_um));
}

std::filesystem::path pose_volume_path(const std::filesystem::path& dir,
                                       int pose) {
  char name[32];
  std::snprintf(name, sizeof(name), "pose_%03d.oct", pose);
  return dir / name;
}

Dataset load_dataset(const std::filesystem::path& dir,
                     const std::optional<std::filesystem::path>& galvo_path) {
  Dataset ds;
  ds.dir = dir;
  const std::filesystem::path csv_path = dir / "robot_poses.csv";
  std::ifstream csv(csv_path);
  if (!csv) throw IoError("cannot open " + csv_path.string());
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    double values[4];
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(ss, field, ','))
        throw IoError("malformed robot_poses.csv row: " + line);
      values[i] = std::stod(field);
    }
    const auto pose = static_cast<std::size_t>(values[0]);
    if (pose != ds.robot_poses.size())
      throw IoError("robot_poses.csv poses must be contiguous from 0");
    ds.robot_poses.emplace_back(values[1], values[2], values[3]);
  }
  if (ds.robot_poses.empty()) throw IoError("robot_poses.csv has no poses");
  ds.galvo = load_galvo_params(galvo_path.value_or(dir / "galvo.txt"));
  return ds;
}

namespace {

std::vector<PoseDetection> detect_poses(
    const std::function<Volume(int)>& volume_at, int n_poses,
    const GalvoParams& galvo, DetectMode mode, const PipelineParams& pipeline) {
  std::vector<PoseDetection> out;
  out.reserve(static_cast<std::size_t>(n_poses));
  for (int pose = 0; pose < n_poses; ++pose) {
    const Volume volume = volume_at(pose);
    PoseDetection det;
    det.pose = pose;
    const auto start = std::chrono::steady_clock::now();
    try {
      det.position = detect_entity(volume, galvo, mode, pipeline);
      det.ok = true;
    } catch (const Error& e) {
      det.ok = false;
      det.message = e.what();
    }
    det.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    out.push_back(std::move(det));
  }
  return out;
}

struct SolveOutcome {
  Correspondences corr;
  RigidTransform transform;
  ErrorReport report;
};

SolveOutcome solve_detections(const std::vector<Vec3>& robot_poses,
                              const std::vector<PoseDetection>& detections,
                              SolveMethod method, double q, double r,
                              bool skip_failed) {
  SolveOutcome out;
  for (const PoseDetection& det : detections) {
    if (!det.ok) {
      if (!skip_failed)
        throw Error("detection failed at pose " + std::to_string(det.pose) +
                    ": " + det.message);
      continue;
    }
    out.corr.robot_points.push_back(robot_poses[static_cast<std::size_t>(det.pose)]);
    out.corr.camera_points.push_back(det.position);
  }
  out.transform = solve_handeye(out.corr, method, q, r);
  out.report = calib_error(out.corr, out.transform);
  return out;
}

void write_detections_csv(const std::vector<PoseDetection>& detections,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "pose,status,x_mm,y_mm,z_mm\n";
  char buf[256];
  for (const PoseDetection& d : detections) {
    if (d.ok) {
      std::snprintf(buf, sizeof(buf), "%d,ok,%.9g,%.9g,%.9g\n", d.pose,
                    d.position.x(), d.position.y(), d.position.z());
    } else {
      std::snprintf(buf, sizeof(buf), "%d,failed,,,\n", d.pose);
    }
    out << buf;
  }
  if (!out.flush()) throw IoError("failed to write " + path.string());
}

/// Diagnostic only: timings vary run to run, so this file is excluded from
/// the byte-identical determinism contract.
void write_timings(const std::vector<PoseDetection>& detections, double mean,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) return;
  out << "pose,detect_seconds\n";
  for (const PoseDetection& d : detections)
    out << d.pose << "," << d.seconds << "\n";
  out << "mean," << mean << "\n";
}

}  // namespace

TrajectoryRunResult run_trajectory(const RunConfig& cfg) {
  const Dataset ds = load_dataset(cfg.dataset_dir, cfg.galvo_path);
  std::filesystem::create_directories(cfg.output_dir);

  TrajectoryRunResult result;
  result.detections = detect_poses(
      [&](int pose) { return load_volume(pose_volume_path(ds.dir, pose)); },
      static_cast<int>(ds.robot_poses.size()), ds.galvo, cfg.mode,
      cfg.pipeline);

  SolveOutcome solved =
      solve_detections(ds.robot_poses, result.detections, cfg.method,
                       cfg.kalman_q, cfg.kalman_r, cfg.skip_failed);
  result.correspondences = std::move(solved.corr);
  result.transform = solved.transform;
  result.report = std::move(solved.report);

  double total = 0.0;
  for (const PoseDetection& d : result.detections) total += d.seconds;
  result.mean_detect_seconds = total / static_cast<double>(result.detections.size());

  save_transform(result.transform, cfg.output_dir / "transform.txt");
  save_error_report(result.report, cfg.output_dir / "errors.csv");
  write_detections_csv(result.detections, cfg.output_dir / "detections.csv");
  write_timings(result.detections, result.mean_detect_seconds,
                cfg.output_dir / "timings.txt");
  return result;
}

NoiseSweepResult noise_sweep(const SweepConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);

  SynthConfig base = cfg.synth;
  base.noise_sigma = 0.0;
  const std::filesystem::path base_dir = cfg.output_dir / "base";
  const DatasetGroundTruth gt = generate_dataset(base, base_dir);
  const int n_poses = static_cast<int>(gt.robot_poses.size());

  NoiseSweepResult result;
  for (int sigma = 0; sigma <= 40; sigma += 4) {
    result.sigmas.push_back(sigma);
    char dir_name[32];
    std::snprintf(dir_name, sizeof(dir_name), "sigma_%02d", sigma);
    const std::filesystem::path sigma_dir = cfg.output_dir / dir_name;
    std::filesystem::create_directories(sigma_dir);

    try {
      // Common per-pose noise seeds across sigmas: the perturbation field
      // scales with sigma instead of being resampled, so the sweep measures
      // the noise response rather than draw-to-draw scatter.
      auto volume_at = [&](int pose) {
        Volume v = load_volume(pose_volume_path(base_dir, pose));
        if (sigma == 0) return v;
        return add_noise(v, sigma,
                         mix_seed(cfg.synth.seed, 0x5EED0000ULL + pose));
      };
      const std::vector<PoseDetection> detections = detect_poses(
          volume_at, n_poses, cfg.synth.galvo, cfg.mode, cfg.pipeline);
      // Per-pose failures are tolerated inside a sweep; the remaining pairs
      // must still support a solve.
      SolveOutcome solved =
          solve_detections(gt.robot_poses, detections, cfg.method,
                           cfg.kalman_q, cfg.kalman_r, /*skip_failed=*/true);
      save_transform(solved.transform, sigma_dir / "transform.txt");
      save_error_report(solved.report, sigma_dir / "errors.csv");
      write_detections_csv(detections, sigma_dir / "detections.csv");
      result.reports.emplace_back(std::move(solved.report));
    } catch (const Error& e) {
      result.reports.emplace_back(std::nullopt);
      result.failures.push_back("sigma " + std::to_string(sigma) + ": " +
                                e.what());
    }
  }
  save_sweep_csv(result, cfg.output_dir / "sweep.csv");
  return result;
}

void save_sweep_csv(const NoiseSweepResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sweep csv: " + path.string());
  out << "sigma,n_points,mean_um,median_um,q1_um,q3_um,min_um,max_um,outliers\n";
  char buf[256];
  for (std::size_t i = 0; i < r.sigmas.size(); ++i) {
    if (r.reports[i]) {
      const ErrorReport& rep = *r.reports[i];
      std::snprintf(buf, sizeof(buf), "%d,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n",
                    r.sigmas[i], rep.errors_um.size(), rep.mean, rep.median,
                    rep.q1, rep.q3, rep.min, rep.max,
                    rep.outlier_indices.size());
    } else {
      std::snprintf(buf, sizeof(buf), "%d,0,,,,,,,\n", r.sigmas[i]);
    }
    out << buf;
  }
  if (!out.flush()) throw IoError("failed to write sweep csv");
}

}  // namespace octcal
