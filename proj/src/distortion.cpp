#include "octcal/distortion.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "octcal/segmentation2d.hpp"

namespace octcal {

void validate_galvo(const GalvoParams& g, const ScanGeometry& geom) {
  if (!(std::abs(g.z_xc) > geom.extent_z_mm) ||
      !(std::abs(g.z_yc) > geom.extent_z_mm))
    throw InvalidInput("GalvoParams: pivot depths must exceed the axial extent");
}

GalvoParams load_galvo_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open galvo parameter file: " + path.string());
  GalvoParams g;
  bool seen[4] = {false, false, false, false};
  std::string key;
  double value;
  while (in >> key >> value) {
    if (key == "x_c") g.x_c = value, seen[0] = true;
    else if (key == "z_xc") g.z_xc = value, seen[1] = true;
    else if (key == "y_c") g.y_c = value, seen[2] = true;
    else if (key == "z_yc") g.z_yc = value, seen[3] = true;
  }
  for (bool s : seen)
    if (!s) throw IoError("galvo parameter file is missing a field");
  return g;
}

void save_galvo_params(const GalvoParams& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write galvo parameter file: " + path.string());
  char buf[160];
  std::snprintf(buf, sizeof(buf), "x_c %.9g\nz_xc %.9g\ny_c %.9g\nz_yc %.9g\n",
                g.x_c, g.z_xc, g.y_c, g.z_yc);
  out << buf;
  if (!out.flush()) throw IoError("failed to write galvo parameter file");
}

CircleFit fit_circle(std::span<const Vec2> points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < 3) throw InvalidInput("fit_circle: need at least 3 points");

  // Kasa fit on centroid-shifted coordinates: solve
  //   u^2 + v^2 + D u + E v + F = 0
  // in least squares. Shifting keeps the normal system well conditioned even
  // when the center lies far outside the data.
  Vec2 mean = Vec2::Zero();
  for (const Vec2& p : points) mean += p;
  mean /= static_cast<double>(n);

  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 q = points[static_cast<std::size_t>(i)] - mean;
    A(i, 0) = q.x();
    A(i, 1) = q.y();
    A(i, 2) = 1.0;
    b(i) = -q.squaredNorm();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU |
                                               Eigen::ComputeThinV);
  const double smax = svd.singularValues()(0);
  if (smax <= 0.0 || svd.singularValues()(2) < 1e-12 * smax)
    throw DegenerateInput("fit_circle: points are collinear");
  const Eigen::Vector3d sol = svd.solve(b);

  CircleFit fit;
  const Vec2 center_local(-sol(0) / 2.0, -sol(1) / 2.0);
  fit.center = center_local + mean;
  const double r2 = center_local.squaredNorm() - sol(2);
  if (!(r2 > 0.0)) throw DegenerateInput("fit_circle: degenerate radius");
  fit.radius = std::sqrt(r2);

  double ss = 0.0;
  for (const Vec2& p : points) {
    const double d = (p - fit.center).norm() - fit.radius;
    ss += d * d;
  }
  fit.rms_residual = std::sqrt(ss / static_cast<double>(n));
  return fit;
}

std::vector<Vec2> detect_top_surface(ConstImageView bscan, double pitch_lateral,
                                     double pitch_axial, double threshold) {
  if (bscan.rows <= 0 || bscan.cols <= 0)
    throw InvalidInput("detect_top_surface: empty image");
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(bscan.cols));
  for (int c = 0; c < bscan.cols; ++c) {
    for (int r = 0; r < bscan.rows; ++r) {
      if (bscan(r, c) >= threshold) {
        out.emplace_back((c + 0.5) * pitch_lateral, (r + 0.5) * pitch_axial);
        break;
      }
    }
  }
  return out;
}

namespace {

double adaptive_surface_threshold(ConstImageView img, double k) {
  // Floor at one intensity quantum so an all-zero slice reports "no surface"
  // instead of matching every pixel.
  return std::max(mean_plus_k_sigma(img, k), 1.0);
}

/// Gauss-Newton iterations on the radial residuals. The algebraic fit treats
/// the noisy depth as a coordinate, which dilates the curvature estimate on
/// the shallow calibration arcs; geometric least squares does not.
CircleFit refine_circle_geometric(std::span<const Vec2> pts, CircleFit fit) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd jac(n, 3);
  Eigen::VectorXd res(n);
  for (int iter = 0; iter < 25; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec2 d = pts[static_cast<std::size_t>(i)] - fit.center;
      const double dist = d.norm();
      if (dist < 1e-12) return fit;
      jac(i, 0) = -d.x() / dist;
      jac(i, 1) = -d.y() / dist;
      jac(i, 2) = -1.0;
      res(i) = dist - fit.radius;
    }
    const Eigen::Vector3d step =
        jac.colPivHouseholderQr().solve(-res);
    if (!step.allFinite()) break;
    fit.center.x() += step(0);
    fit.center.y() += step(1);
    fit.radius += step(2);
    if (step.norm() < 1e-10 * std::max(1.0, fit.radius)) break;
  }
  double ss = 0.0;
  for (const Vec2& p : pts) {
    const double d = (p - fit.center).norm() - fit.radius;
    ss += d * d;
  }
  fit.rms_residual = std::sqrt(ss / static_cast<double>(n));
  return fit;
}

Vec2 fit_slice_center(ConstImageView img, double pitch_lateral,
                      double pitch_axial, double k, const char* what, int index) {
  const double thr = adaptive_surface_threshold(img, k);
  std::vector<Vec2> pts =
      detect_top_surface(img, pitch_lateral, pitch_axial, thr);
  if (pts.size() < 3)
    throw DegenerateInput(std::string("calibrate_galvo: no detectable surface in ") +
                          what + " " + std::to_string(index));
  CircleFit fit = refine_circle_geometric(pts, fit_circle(pts));
  return fit.center;
}

}  // namespace

GalvoParams calibrate_galvo(const Volume& flat_x, const Volume& flat_y,
                            double threshold_k) {
  const ScanGeometry& gx = flat_x.geometry();
  const ScanGeometry& gy = flat_y.geometry();

  // (x_c, z_xc): average circle centers over the x-z B-scans of flat_x.
  Vec2 sum_x = Vec2::Zero();
  for (int iy = 0; iy < gx.n_y; ++iy) {
    sum_x += fit_slice_center(flat_x.bscan(iy), gx.pitch_x(), gx.pitch_z(),
                              threshold_k, "B-scan", iy);
  }
  sum_x /= gx.n_y;

  // (y_c, z_yc): average circle centers over y-z slices of flat_y.
  std::vector<std::uint8_t> slice(static_cast<std::size_t>(gy.n_z) * gy.n_y);
  Vec2 sum_y = Vec2::Zero();
  for (int ix = 0; ix < gy.n_x; ++ix) {
    for (int iz = 0; iz < gy.n_z; ++iz)
      for (int iy = 0; iy < gy.n_y; ++iy)
        slice[static_cast<std::size_t>(iz) * gy.n_y + iy] =
            flat_y.at(iy, iz, ix);
    ConstImageView view{slice.data(), gy.n_z, gy.n_y};
    sum_y += fit_slice_center(view, gy.pitch_y(), gy.pitch_z(), threshold_k,
                              "lateral slice", ix);
  }
  sum_y /= gy.n_x;

  GalvoParams g;
  g.x_c = sum_x.x();
  g.z_xc = sum_x.y();
  g.y_c = sum_y.x();
  g.z_yc = sum_y.y();
  return g;
}

Vec3 correct_point(const Vec3& p_mm, const GalvoParams& g) {
  // M_x stage: raw x encodes the beam angle about the pivot (x_c, -z_xc),
  // raw z the distance along the beam offset by z_xc.
  const double theta = (p_mm.x() - g.x_c) / g.z_xc;
  const double r_x = p_mm.z() + g.z_xc;
  const double x1 = g.x_c + r_x * std::sin(theta);
  const double z1 = r_x * std::cos(theta) - g.z_xc;
  // M_y stage on the intermediate depth.
  const double phi = (p_mm.y() - g.y_c) / g.z_yc;
  const double r_y = z1 + g.z_yc;
  const double y2 = g.y_c + r_y * std::sin(phi);
  const double z2 = r_y * std::cos(phi) - g.z_yc;
  return Vec3(x1, y2, z2);
}

Vec3 distort_point(const Vec3& p_mm, const GalvoParams& g) {
  // Invert the M_y stage, then the M_x stage.
  const double dy = p_mm.y() - g.y_c;
  const double hy = p_mm.z() + g.z_yc;
  if (!(hy > 0.0))
    throw DegenerateInput("distort_point: point outside the invertible region");
  const double r_y = std::hypot(dy, hy);
  const double phi = std::atan2(dy, hy);
  const double y = g.y_c + phi * g.z_yc;
  const double z1 = r_y - g.z_yc;

  const double dx = p_mm.x() - g.x_c;
  const double hx = z1 + g.z_xc;
  if (!(hx > 0.0))
    throw DegenerateInput("distort_point: point outside the invertible region");
  const double r_x = std::hypot(dx, hx);
  const double theta = std::atan2(dx, hx);
  const double x = g.x_c + theta * g.z_xc;
  const double z = r_x - g.z_xc;
  return Vec3(x, y, z);
}

}  // namespace octcal
