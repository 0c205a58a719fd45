#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "octcal/common.hpp"

namespace octcal {

/// Rigid map p -> rotation * p + translation (camera frame to robot frame).
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }
  RigidTransform then(const RigidTransform& outer) const {
    return {outer.rotation * rotation,
            outer.rotation * translation + outer.translation};
  }
};

inline Vec3 apply_transform(const RigidTransform& x, const Vec3& p) {
  return x.apply(p);
}

/// True when rotation^T rotation = I and det = +1 within tol.
bool is_rigid(const RigidTransform& x, double tol = 1e-9);

/// Index-paired robot-frame and camera-frame positions.
struct Correspondences {
  std::vector<Vec3> robot_points;   ///< positions in the robot frame
  std::vector<Vec3> camera_points;  ///< matching detections in the camera frame
};

/// Least-squares rigid transform minimizing sum |robot_i - (R camera_i + T)|^2
/// via cross-covariance SVD with reflection guard. Throws InvalidInput for
/// fewer than 3 pairs or length mismatch, DegenerateInput when the camera
/// points are collinear.
RigidTransform solve_svdt(const Correspondences& c);

/// Same contract as solve_svdt; the rotation is the unit quaternion from the
/// largest eigenvalue of the 4x4 profile matrix, returned with non-negative
/// scalar part.
RigidTransform solve_qt(const Correspondences& c);

/// The unit quaternion picked by solve_qt (scalar part >= 0).
Eigen::Quaterniond solve_qt_quaternion(const Correspondences& c);

/// Per-axis constant-position linear Kalman filter over a position track,
/// initialized at the first measurement. q and r are the process and
/// measurement noise variances (mm^2).
std::vector<Vec3> kalman_filter_track(std::span<const Vec3> measurements,
                                      double q, double r);

enum class SolveMethod { Svdt, Qt, Qkt };

/// Parses "SVDT" / "QT" / "QKT" (case-insensitive); throws on anything else.
SolveMethod parse_method(const std::string& name);
std::string method_name(SolveMethod m);

/// Dispatches to the chosen solver; QKT Kalman-filters the camera points
/// first with the given q and r.
RigidTransform solve_handeye(const Correspondences& c, SolveMethod method,
                             double kalman_q = 1e-6, double kalman_r = 1e-4);

/// Per-point calibration errors in micrometers with box-plot statistics.
/// Whiskers extend 1.0 * IQR beyond the quartiles; points beyond them are
/// outliers. Quartiles use linear interpolation between order statistics.
struct ErrorReport {
  std::vector<double> errors_um;
  double mean = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
  double whisker_lo = 0.0;
  double whisker_hi = 0.0;
  std::vector<int> outlier_indices;
};

/// Builds the summary statistics for a list of per-point errors (um).
ErrorReport make_error_report(std::vector<double> errors_um);

/// e_i = |robot_i - (R camera_i + T)| reported in micrometers.
ErrorReport calib_error(const Correspondences& c, const RigidTransform& x);

/// Text serialization of the 3x4 matrix [R | T], row-major, mm,
/// 15 significant digits.
void save_transform(const RigidTransform& x, const std::filesystem::path& path);
RigidTransform load_transform(const std::filesystem::path& path);

/// CSV export: "index,e_um" rows followed by a summary row.
void save_error_report(const ErrorReport& r, const std::filesystem::path& path);

/// Reads the e_um column back from a CSV produced by save_error_report (the
/// summary row is ignored) and rebuilds the report.
ErrorReport load_error_report(const std::filesystem::path& path);

}  // namespace octcal
