#include "octcal/registration.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace octcal {

bool is_rigid(const RigidTransform& x, double tol) {
  const Mat3 gram = x.rotation.transpose() * x.rotation;
  return (gram - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(x.rotation.determinant() - 1.0) <= tol;
}

namespace {

struct Centered {
  Vec3 robot_mean;
  Vec3 camera_mean;
  Mat3 cross;  ///< sum of (camera - mean)(robot - mean)^T
};

Centered center_pairs(const Correspondences& c) {
  if (c.robot_points.size() != c.camera_points.size())
    throw InvalidInput("solver: robot/camera point counts differ");
  const auto n = c.robot_points.size();
  if (n < 3) throw InvalidInput("solver: need at least 3 point pairs");

  Centered out;
  out.robot_mean = Vec3::Zero();
  out.camera_mean = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    out.robot_mean += c.robot_points[i];
    out.camera_mean += c.camera_points[i];
  }
  out.robot_mean /= static_cast<double>(n);
  out.camera_mean /= static_cast<double>(n);

  // Collinear camera points leave the rotation about the line unobservable.
  Eigen::MatrixXd centered(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    centered.col(static_cast<Eigen::Index>(i)) =
        c.camera_points[i] - out.camera_mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  if (svd.singularValues()(1) < 1e-9 && svd.singularValues()(2) < 1e-9)
    throw DegenerateInput("solver: camera points are collinear");

  out.cross = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i)
    out.cross += (c.camera_points[i] - out.camera_mean) *
                 (c.robot_points[i] - out.robot_mean).transpose();
  return out;
}

}  // namespace

RigidTransform solve_svdt(const Correspondences& c) {
  const Centered ctr = center_pairs(c);
  Eigen::JacobiSVD<Mat3> svd(ctr.cross,
                             Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 rotation = svd.matrixV() * svd.matrixU().transpose();
  if (rotation.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    rotation = svd.matrixV() * flip * svd.matrixU().transpose();
  }
  return {rotation, ctr.robot_mean - rotation * ctr.camera_mean};
}

RigidTransform solve_qt(const Correspondences& c) {
  const Centered ctr = center_pairs(c);
  const Mat3 rotation = solve_qt_quaternion(c).toRotationMatrix();
  return {rotation, ctr.robot_mean - rotation * ctr.camera_mean};
}

Eigen::Quaterniond solve_qt_quaternion(const Correspondences& c) {
  const Centered ctr = center_pairs(c);
  const Mat3& s = ctr.cross;  // s(i, j) = sum camera_i * robot_j

  Eigen::Matrix4d profile;
  profile(0, 0) = s(0, 0) + s(1, 1) + s(2, 2);
  profile(0, 1) = s(1, 2) - s(2, 1);
  profile(0, 2) = s(2, 0) - s(0, 2);
  profile(0, 3) = s(0, 1) - s(1, 0);
  profile(1, 1) = s(0, 0) - s(1, 1) - s(2, 2);
  profile(1, 2) = s(0, 1) + s(1, 0);
  profile(1, 3) = s(2, 0) + s(0, 2);
  profile(2, 2) = -s(0, 0) + s(1, 1) - s(2, 2);
  profile(2, 3) = s(1, 2) + s(2, 1);
  profile(3, 3) = -s(0, 0) - s(1, 1) + s(2, 2);
  profile(1, 0) = profile(0, 1);
  profile(2, 0) = profile(0, 2);
  profile(3, 0) = profile(0, 3);
  profile(2, 1) = profile(1, 2);
  profile(3, 1) = profile(1, 3);
  profile(3, 2) = profile(2, 3);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(profile);
  Eigen::Vector4d q = es.eigenvectors().col(3);  // largest eigenvalue
  if (q(0) < 0.0) q = -q;
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized();
}

std::vector<Vec3> kalman_filter_track(std::span<const Vec3> measurements,
                                      double q, double r) {
  if (measurements.empty())
    throw InvalidInput("kalman_filter_track: empty measurement sequence");
  if (q < 0.0 || r < 0.0)
    throw InvalidInput("kalman_filter_track: noise variances must be >= 0");

  std::vector<Vec3> out;
  out.reserve(measurements.size());
  Vec3 state = measurements[0];
  Vec3 cov = Vec3::Zero();  // posterior after the exact first-sample init
  out.push_back(state);
  for (std::size_t i = 1; i < measurements.size(); ++i) {
    for (int axis = 0; axis < 3; ++axis) {
      const double predicted = cov(axis) + q;
      const double gain = predicted + r > 0.0 ? predicted / (predicted + r) : 1.0;
      state(axis) += gain * (measurements[i](axis) - state(axis));
      cov(axis) = (1.0 - gain) * predicted;
    }
    out.push_back(state);
  }
  return out;
}

SolveMethod parse_method(const std::string& name) {
  std::string up;
  for (char ch : name) up.push_back(static_cast<char>(std::toupper(ch)));
  if (up == "SVDT") return SolveMethod::Svdt;
  if (up == "QT") return SolveMethod::Qt;
  if (up == "QKT") return SolveMethod::Qkt;
  throw InvalidInput("unknown solve method: " + name);
}

std::string method_name(SolveMethod m) {
  switch (m) {
    case SolveMethod::Svdt: return "SVDT";
    case SolveMethod::Qt: return "QT";
    case SolveMethod::Qkt: return "QKT";
  }
  return "?";
}

RigidTransform solve_handeye(const Correspondences& c, SolveMethod method,
                             double kalman_q, double kalman_r) {
  switch (method) {
    case SolveMethod::Svdt:
      return solve_svdt(c);
    case SolveMethod::Qt:
      return solve_qt(c);
    case SolveMethod::Qkt: {
      Correspondences filtered = c;
      filtered.camera_points =
          kalman_filter_track(c.camera_points, kalman_q, kalman_r);
      return solve_qt(filtered);
    }
  }
  throw InvalidInput("solve_handeye: invalid method");
}

namespace {

double quantile_linear(const std::vector<double>& sorted, double p) {
  const auto n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = p * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

ErrorReport make_error_report(std::vector<double> errors_um) {
  if (errors_um.empty())
    throw InvalidInput("make_error_report: empty error list");
  ErrorReport r;
  r.errors_um = std::move(errors_um);

  std::vector<double> sorted = r.errors_um;
  std::sort(sorted.begin(), sorted.end());
  r.min = sorted.front();
  r.max = sorted.back();
  r.mean = 0.0;
  for (double e : r.errors_um) r.mean += e;
  r.mean /= static_cast<double>(r.errors_um.size());
  r.median = quantile_linear(sorted, 0.5);
  r.q1 = quantile_linear(sorted, 0.25);
  r.q3 = quantile_linear(sorted, 0.75);
  const double iqr = r.q3 - r.q1;
  r.whisker_lo = r.q1 - iqr;
  r.whisker_hi = r.q3 + iqr;
  for (std::size_t i = 0; i < r.errors_um.size(); ++i) {
    if (r.errors_um[i] < r.whisker_lo || r.errors_um[i] > r.whisker_hi)
      r.outlier_indices.push_back(static_cast<int>(i));
  }
  return r;
}

ErrorReport calib_error(const Correspondences& c, const RigidTransform& x) {
  if (c.robot_points.size() != c.camera_points.size())
    throw InvalidInput("calib_error: robot/camera point counts differ");
  if (c.robot_points.empty()) throw InvalidInput("calib_error: no point pairs");
  std::vector<double> errors;
  errors.reserve(c.robot_points.size());
  for (std::size_t i = 0; i < c.robot_points.size(); ++i)
    errors.push_back(1000.0 *
                     (c.robot_points[i] - x.apply(c.camera_points[i])).norm());
  return make_error_report(std::move(errors));
}

void save_transform(const RigidTransform& x, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write transform file: " + path.string());
  char buf[256];
  for (int row = 0; row < 3; ++row) {
    std::snprintf(buf, sizeof(buf), "%.15g %.15g %.15g %.15g\n",
                  x.rotation(row, 0), x.rotation(row, 1), x.rotation(row, 2),
                  x.translation(row));
    out << buf;
  }
  if (!out.flush()) throw IoError("failed to write transform file");
}

RigidTransform load_transform(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transform file: " + path.string());
  RigidTransform x;
  for (int row = 0; row < 3; ++row) {
    if (!(in >> x.rotation(row, 0) >> x.rotation(row, 1) >> x.rotation(row, 2) >>
          x.translation(row)))
      throw IoError("malformed transform file: " + path.string());
  }
  return x;
}

void save_error_report(const ErrorReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write error report: " + path.string());
  out << "index,e_um\n";
  char buf[256];
  for (std::size_t i = 0; i < r.errors_um.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, r.errors_um[i]);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "summary,mean=%.9g,median=%.9g,q1=%.9g,q3=%.9g,whisker_lo=%.9g,"
                "whisker_hi=%.9g,min=%.9g,max=%.9g,outliers=%zu\n",
                r.mean, r.median, r.q1, r.q3, r.whisker_lo, r.whisker_hi, r.min,
                r.max, r.outlier_indices.size());
  out << buf;
  if (!out.flush()) throw IoError("failed to write error report");
}

ErrorReport load_error_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open error report: " + path.string());
  std::vector<double> errors;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("index,", 0) == 0 ||
        line.rfind("summary,", 0) == 0)
      continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw IoError("malformed error report row: " + line);
    errors.push_back(std::stod(line.substr(comma + 1)));
  }
  if (errors.empty()) throw IoError("error report has no data rows");
  return make_error_report(std::move(errors));
}

}  // namespace octcal
