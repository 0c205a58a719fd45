#include "octcal/segmentation2d.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace octcal {

std::size_t Mask2D::count() const {
  return static_cast<std::size_t>(std::accumulate(v.begin(), v.end(), 0LL));
}

double mean_plus_k_sigma(ConstImageView img, double k) {
  if (img.rows <= 0 || img.cols <= 0)
    throw InvalidInput("adaptive_threshold: empty image");
  std::uint64_t sum = 0, sum2 = 0;
  const std::size_t n = img.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t px = img.data[i];
    sum += px;
    sum2 += px * px;
  }
  const double mean = static_cast<double>(sum) / static_cast<double>(n);
  const double var =
      static_cast<double>(sum2) / static_cast<double>(n) - mean * mean;
  return mean + k * std::sqrt(std::max(var, 0.0));
}

Mask2D adaptive_threshold(ConstImageView img, double k) {
  const double thr = mean_plus_k_sigma(img, k);
  Mask2D mask(img.rows, img.cols);
  const std::size_t n = img.size();
  for (std::size_t i = 0; i < n; ++i) mask.v[i] = img.data[i] > thr ? 1 : 0;
  return mask;
}

namespace {

Mask2D median_binary(const Mask2D& mask, int window) {
  const int half = window / 2;
  const int majority = (window * window) / 2 + 1;
  Mask2D out(mask.rows, mask.cols);
  for (int r = 0; r < mask.rows; ++r) {
    const int r0 = std::max(0, r - half), r1 = std::min(mask.rows - 1, r + half);
    for (int c = 0; c < mask.cols; ++c) {
      const int c0 = std::max(0, c - half);
      const int c1 = std::min(mask.cols - 1, c + half);
      int ones = 0;
      for (int rr = r0; rr <= r1; ++rr)
        for (int cc = c0; cc <= c1; ++cc) ones += mask(rr, cc);
      out(r, c) = ones >= majority ? 1 : 0;
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(int window, double sigma) {
  const int half = window / 2;
  std::vector<double> w(static_cast<std::size_t>(window));
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    w[static_cast<std::size_t>(i + half)] =
        std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += w[static_cast<std::size_t>(i + half)];
  }
  for (double& x : w) x /= sum;
  return w;
}

}  // namespace

Mask2D denoise(const Mask2D& mask, int median_window, int gaussian_window,
               double gaussian_sigma) {
  Mask2D med = median_binary(mask, median_window);

  const std::vector<double> kern = gaussian_kernel(gaussian_window, gaussian_sigma);
  const int half = gaussian_window / 2;
  const std::size_t n = static_cast<std::size_t>(med.rows) * med.cols;

  // Separable blur with zero padding, then re-binarize at 0.5.
  std::vector<double> tmp(n, 0.0), blur(n, 0.0);
  for (int r = 0; r < med.rows; ++r)
    for (int c = 0; c < med.cols; ++c) {
      double acc = 0.0;
      for (int i = -half; i <= half; ++i) {
        const int cc = c + i;
        if (cc >= 0 && cc < med.cols)
          acc += kern[static_cast<std::size_t>(i + half)] * med(r, cc);
      }
      tmp[static_cast<std::size_t>(r) * med.cols + c] = acc;
    }
  for (int r = 0; r < med.rows; ++r)
    for (int c = 0; c < med.cols; ++c) {
      double acc = 0.0;
      for (int i = -half; i <= half; ++i) {
        const int rr = r + i;
        if (rr >= 0 && rr < med.rows)
          acc += kern[static_cast<std::size_t>(i + half)] *
                 tmp[static_cast<std::size_t>(rr) * med.cols + c];
      }
      blur[static_cast<std::size_t>(r) * med.cols + c] = acc;
    }

  Mask2D out(med.rows, med.cols);
  for (std::size_t i = 0; i < n; ++i) out.v[i] = blur[i] > 0.5 ? 1 : 0;
  return out;
}

std::vector<ContourGroup> extract_topmost_contours(const Mask2D& mask) {
  std::vector<ContourGroup> groups;
  ContourGroup current;
  int prev_ix = -2;
  for (int ix = 0; ix < mask.cols; ++ix) {
    int hit = -1;
    for (int iz = 0; iz < mask.rows; ++iz) {
      if (mask(iz, ix)) {
        hit = iz;
        break;
      }
    }
    if (hit < 0) continue;
    if (ix != prev_ix + 1 && !current.pixels.empty()) {
      groups.push_back(std::move(current));
      current = ContourGroup{};
    }
    current.pixels.emplace_back(ix, hit);
    prev_ix = ix;
  }
  if (!current.pixels.empty()) groups.push_back(std::move(current));
  return groups;
}

std::vector<ContourGroup> split_groups_on_axial_jump(
    std::vector<ContourGroup> groups, int jump_px) {
  std::vector<ContourGroup> out;
  for (auto& g : groups) {
    ContourGroup current;
    for (const auto& px : g.pixels) {
      if (!current.pixels.empty() &&
          std::abs(px.y() - current.pixels.back().y()) > jump_px) {
        out.push_back(std::move(current));
        current = ContourGroup{};
      }
      current.pixels.push_back(px);
    }
    if (!current.pixels.empty()) out.push_back(std::move(current));
  }
  return out;
}

namespace {

struct Conic {
  // a x^2 + b xy + c y^2 + d x + e y + f = 0
  double a, b, c, d, e, f;
};

EllipseParams conic_to_geometric(const Conic& q) {
  const double disc = 4.0 * q.a * q.c - q.b * q.b;
  if (!(disc > 0.0))
    throw DegenerateInput("fit_ellipse: conic is not an ellipse");
  EllipseParams out;
  out.center.x() = (q.b * q.e - 2.0 * q.c * q.d) / disc;
  out.center.y() = (q.b * q.d - 2.0 * q.a * q.e) / disc;
  // Constant term after translating the conic to its center.
  double mu = q.a * out.center.x() * out.center.x() +
              q.b * out.center.x() * out.center.y() +
              q.c * out.center.y() * out.center.y() + q.d * out.center.x() +
              q.e * out.center.y() + q.f;
  double a2 = q.a, b2 = q.b, c2 = q.c;
  if (mu > 0.0) {
    a2 = -a2;
    b2 = -b2;
    c2 = -c2;
    mu = -mu;
  }
  if (!(mu < 0.0)) throw DegenerateInput("fit_ellipse: degenerate ellipse");

  Eigen::Matrix2d m;
  m << a2, b2 / 2.0, b2 / 2.0, c2;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(m);
  const double l0 = es.eigenvalues()(0), l1 = es.eigenvalues()(1);
  if (!(l0 > 0.0) || !(l1 > 0.0))
    throw DegenerateInput("fit_ellipse: degenerate ellipse");

  out.semi_major = std::sqrt(-mu / l0);
  out.semi_minor = std::sqrt(-mu / l1);
  const Eigen::Vector2d major_dir = es.eigenvectors().col(0);
  double tilt = std::atan2(major_dir.y(), major_dir.x());
  while (tilt > M_PI / 2.0) tilt -= M_PI;
  while (tilt <= -M_PI / 2.0) tilt += M_PI;
  out.tilt = tilt;
  return out;
}

Conic ellipse_to_conic(const EllipseParams& e) {
  const double ct = std::cos(e.tilt), st = std::sin(e.tilt);
  const double ia = 1.0 / (e.semi_major * e.semi_major);
  const double ib = 1.0 / (e.semi_minor * e.semi_minor);
  const double a = ia * ct * ct + ib * st * st;
  const double b = 2.0 * (ia - ib) * ct * st;
  const double c = ia * st * st + ib * ct * ct;
  const double cx = e.center.x(), cy = e.center.y();
  return Conic{a,
               b,
               c,
               -2.0 * a * cx - b * cy,
               -b * cx - 2.0 * c * cy,
               a * cx * cx + b * cx * cy + c * cy * cy - 1.0};
}

}  // namespace

EllipseParams fit_ellipse(const ContourGroup& group) {
  const auto n = static_cast<Eigen::Index>(group.pixels.size());
  if (n < 5) throw InvalidInput("fit_ellipse: need at least 5 pixels");

  // Normalize coordinates for conditioning.
  Vec2 mean = Vec2::Zero();
  for (const auto& px : group.pixels) mean += px.cast<double>();
  mean /= static_cast<double>(n);
  double scale = 0.0;
  for (const auto& px : group.pixels)
    scale += (px.cast<double>() - mean).squaredNorm();
  scale = std::sqrt(scale / static_cast<double>(n));
  if (!(scale > 0.0)) throw DegenerateInput("fit_ellipse: coincident pixels");

  // Direct constrained conic fit (Halir & Flusser formulation).
  Eigen::MatrixXd d1(n, 3), d2(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 p =
        (group.pixels[static_cast<std::size_t>(i)].cast<double>() - mean) /
        scale;
    d1(i, 0) = p.x() * p.x();
    d1(i, 1) = p.x() * p.y();
    d1(i, 2) = p.y() * p.y();
    d2(i, 0) = p.x();
    d2(i, 1) = p.y();
    d2(i, 2) = 1.0;
  }
  const Eigen::Matrix3d s1 = d1.transpose() * d1;
  const Eigen::Matrix3d s2 = d1.transpose() * d2;
  const Eigen::Matrix3d s3 = d2.transpose() * d2;
  Eigen::FullPivLU<Eigen::Matrix3d> lu(s3);
  if (!lu.isInvertible())
    throw DegenerateInput("fit_ellipse: degenerate configuration");
  const Eigen::Matrix3d t = -lu.solve(s2.transpose());
  const Eigen::Matrix3d m_full = s1 + s2 * t;
  Eigen::Matrix3d m;
  m.row(0) = m_full.row(2) / 2.0;
  m.row(1) = -m_full.row(1);
  m.row(2) = m_full.row(0) / 2.0;

  Eigen::EigenSolver<Eigen::Matrix3d> es(m);
  int best = -1;
  double best_cond = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(es.eigenvalues()(i).imag()) >
        1e-9 * (1.0 + std::abs(es.eigenvalues()(i).real())))
      continue;
    const Eigen::Vector3d v = es.eigenvectors().col(i).real();
    const double cond = 4.0 * v(0) * v(2) - v(1) * v(1);
    if (cond > best_cond) {
      best_cond = cond;
      best = i;
    }
  }
  if (best < 0) throw DegenerateInput("fit_ellipse: no elliptical solution");

  const Eigen::Vector3d abc = es.eigenvectors().col(best).real();
  const Eigen::Vector3d def = t * abc;

  // Undo normalization: substitute x -> (X - mx)/s, y -> (Y - my)/s.
  const double s = scale, mx = mean.x(), my = mean.y();
  Conic q;
  q.a = abc(0) / (s * s);
  q.b = abc(1) / (s * s);
  q.c = abc(2) / (s * s);
  q.d = (-2.0 * abc(0) * mx - abc(1) * my) / (s * s) + def(0) / s;
  q.e = (-abc(1) * mx - 2.0 * abc(2) * my) / (s * s) + def(1) / s;
  q.f = (abc(0) * mx * mx + abc(1) * mx * my + abc(2) * my * my) / (s * s) -
        (def(0) * mx + def(1) * my) / s + def(2);
  return conic_to_geometric(q);
}

double ellipse_boundary_distance(const EllipseParams& e, const Vec2& p) {
  const Conic q = ellipse_to_conic(e);
  const double val = q.a * p.x() * p.x() + q.b * p.x() * p.y() +
                     q.c * p.y() * p.y() + q.d * p.x() + q.e * p.y() + q.f;
  const double gx = 2.0 * q.a * p.x() + q.b * p.y() + q.d;
  const double gy = q.b * p.x() + 2.0 * q.c * p.y() + q.e;
  const double gn = std::hypot(gx, gy);
  if (gn < 1e-12) return std::numeric_limits<double>::infinity();
  return std::abs(val) / gn;
}

LabeledBScan label_needle_pixels(ConstImageView bscan, double m_e_px,
                                 const SegmentationParams& params) {
  if (!(m_e_px > 0)) throw InvalidInput("label_needle_pixels: m_e must be > 0");
  LabeledBScan out;
  out.foreground =
      denoise(adaptive_threshold(bscan, params.k), params.median_window,
              params.gaussian_window, params.gaussian_sigma);
  out.needle = Mask2D(bscan.rows, bscan.cols);

  std::vector<ContourGroup> groups = split_groups_on_axial_jump(
      extract_topmost_contours(out.foreground), params.contour_jump_px);

  for (const ContourGroup& g : groups) {
    if (g.pixels.size() < 5) continue;
    EllipseParams ellipse;
    try {
      ellipse = fit_ellipse(g);
    } catch (const Error&) {
      continue;  // non-elliptical group
    }
    if (!(2.0 * ellipse.semi_minor < m_e_px)) continue;

    const int reach =
        static_cast<int>(std::ceil(ellipse.semi_major + params.d_tol_px)) + 1;
    const int x0 = std::max(0, static_cast<int>(ellipse.center.x()) - reach);
    const int x1 =
        std::min(bscan.cols - 1, static_cast<int>(ellipse.center.x()) + reach);
    const int z0 = std::max(0, static_cast<int>(ellipse.center.y()) - reach);
    const int z1 =
        std::min(bscan.rows - 1, static_cast<int>(ellipse.center.y()) + reach);
    for (int iz = z0; iz <= z1; ++iz)
      for (int ix = x0; ix <= x1; ++ix) {
        if (!out.foreground(iz, ix) || out.needle(iz, ix)) continue;
        if (ellipse_boundary_distance(ellipse, Vec2(ix, iz)) <= params.d_tol_px)
          out.needle(iz, ix) = 1;
      }
  }
  return out;
}

void save_label_image(const LabeledBScan& labels,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write label image: " + path.string());
  out << "P5\n" << labels.foreground.cols << " " << labels.foreground.rows
      << "\n255\n";
  const std::size_t n = labels.foreground.v.size();
  std::vector<std::uint8_t> bytes(n);
  for (std::size_t i = 0; i < n; ++i)
    bytes[i] = labels.needle.v[i] ? 255 : (labels.foreground.v[i] ? 128 : 0);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(n));
  if (!out.flush()) throw IoError("failed to write label image");
}

}  // namespace octcal
