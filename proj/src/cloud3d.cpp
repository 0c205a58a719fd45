#include "octcal/cloud3d.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <unordered_map>

namespace octcal {

PointCloud volume_to_cloud(const Volume& v, std::span<const LabeledBScan> labels,
                           double leaf_mm) {
  const ScanGeometry& g = v.geometry();
  if (static_cast<int>(labels.size()) != g.n_y)
    throw InvalidInput("volume_to_cloud: need one labeled B-scan per slice");
  if (!(leaf_mm > 0)) throw InvalidInput("volume_to_cloud: leaf must be > 0");

  struct Cell {
    Vec3 sum = Vec3::Zero();
    int count = 0;
    bool b = false;
  };
  // In-field coordinates are non-negative, so 21 bits per axis suffice.
  auto key_of = [leaf_mm](const Vec3& p) {
    const auto cx = static_cast<std::uint64_t>(p.x() / leaf_mm);
    const auto cy = static_cast<std::uint64_t>(p.y() / leaf_mm);
    const auto cz = static_cast<std::uint64_t>(p.z() / leaf_mm);
    return (cx << 42) | (cy << 21) | cz;
  };

  std::unordered_map<std::uint64_t, Cell> cells;
  for (int iy = 0; iy < g.n_y; ++iy) {
    const Mask2D& fg = labels[static_cast<std::size_t>(iy)].foreground;
    const Mask2D& nd = labels[static_cast<std::size_t>(iy)].needle;
    if (fg.rows != g.n_z || fg.cols != g.n_x)
      throw InvalidInput("volume_to_cloud: label mask size mismatch");
    for (int iz = 0; iz < g.n_z; ++iz)
      for (int ix = 0; ix < g.n_x; ++ix) {
        if (!fg(iz, ix)) continue;
        const Vec3 p = v.voxel_to_mm(ix, iy, iz);
        Cell& cell = cells[key_of(p)];
        cell.sum += p;
        cell.count += 1;
        cell.b = cell.b || nd(iz, ix) != 0;
      }
  }

  std::vector<std::pair<std::uint64_t, Cell>> ordered(cells.begin(), cells.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  PointCloud cloud;
  cloud.geometry = g;
  cloud.points.reserve(ordered.size());
  for (const auto& [key, cell] : ordered)
    cloud.points.push_back({cell.sum / cell.count, cell.b});
  return cloud;
}

namespace {

/// Minimal 3D kd-tree for fixed-radius neighbor queries.
class KdTree3 {
 public:
  explicit KdTree3(const std::vector<LabeledPoint>& pts) : pts_(pts) {
    index_.resize(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) index_[i] = static_cast<int>(i);
    if (!pts.empty()) build(0, static_cast<int>(pts.size()), 0);
  }

  /// Indices of points with strict distance < radius from q.
  void radius_search(const Vec3& q, double radius, std::vector<int>& out) const {
    out.clear();
    if (!pts_.empty())
      search(0, static_cast<int>(pts_.size()), 0, q, radius * radius, out);
  }

 private:
  void build(int lo, int hi, int depth) {
    if (hi - lo <= 1) return;
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    std::nth_element(index_.begin() + lo, index_.begin() + mid,
                     index_.begin() + hi, [&](int a, int b) {
                       return pts_[static_cast<std::size_t>(a)].position(axis) <
                              pts_[static_cast<std::size_t>(b)].position(axis);
                     });
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
  }

  void search(int lo, int hi, int depth, const Vec3& q, double r2,
              std::vector<int>& out) const {
    if (lo >= hi) return;
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    const Vec3& p = pts_[static_cast<std::size_t>(index_[static_cast<std::size_t>(mid)])].position;
    if ((p - q).squaredNorm() < r2)
      out.push_back(index_[static_cast<std::size_t>(mid)]);
    const double delta = q(axis) - p(axis);
    if (delta < 0 || delta * delta < r2) search(lo, mid, depth + 1, q, r2, out);
    if (delta > 0 || delta * delta < r2)
      search(mid + 1, hi, depth + 1, q, r2, out);
  }

  const std::vector<LabeledPoint>& pts_;
  std::vector<int> index_;
};

}  // namespace

std::vector<Cluster> cluster_euclidean(const PointCloud& cloud, double t_mm) {
  if (!(t_mm > 0)) throw InvalidInput("cluster_euclidean: threshold must be > 0");
  const int n = static_cast<int>(cloud.points.size());
  std::vector<Cluster> clusters;
  if (n == 0) return clusters;

  KdTree3 tree(cloud.points);
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<int> frontier, neighbors;
  for (int seed = 0; seed < n; ++seed) {
    if (visited[static_cast<std::size_t>(seed)]) continue;
    Cluster cluster;
    frontier.assign(1, seed);
    visited[static_cast<std::size_t>(seed)] = 1;
    while (!frontier.empty()) {
      const int i = frontier.back();
      frontier.pop_back();
      cluster.members.push_back(i);
      if (cloud.points[static_cast<std::size_t>(i)].b) ++cluster.votes;
      tree.radius_search(cloud.points[static_cast<std::size_t>(i)].position,
                         t_mm, neighbors);
      for (int j : neighbors) {
        if (!visited[static_cast<std::size_t>(j)]) {
          visited[static_cast<std::size_t>(j)] = 1;
          frontier.push_back(j);
        }
      }
    }
    std::sort(cluster.members.begin(), cluster.members.end());
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

const Cluster& segment_needle(std::span<const Cluster> clusters) {
  if (clusters.empty()) throw InvalidInput("segment_needle: no clusters");
  int max_vote = 0;
  std::size_t max_index = 0;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i].votes > max_vote) {
      max_vote = clusters[i].votes;
      max_index = i;
    }
  }
  if (max_vote == 0)
    throw NoNeedleEvidence("segment_needle: no cluster has needle votes");
  return clusters[max_index];
}

Vec3 locate_tip(const Cluster& needle, const PointCloud& cloud,
                const GalvoParams& g, bool reversed_scan) {
  if (needle.members.empty()) throw InvalidInput("locate_tip: empty cluster");
  const double pitch_y = cloud.geometry.pitch_y();
  auto slice_of = [pitch_y](const Vec3& p) {
    return static_cast<int>(std::lround(p.y() / pitch_y - 0.5));
  };

  int tip_slice = slice_of(cloud.points[static_cast<std::size_t>(needle.members[0])].position);
  for (int idx : needle.members) {
    const int s = slice_of(cloud.points[static_cast<std::size_t>(idx)].position);
    if (reversed_scan ? s > tip_slice : s < tip_slice) tip_slice = s;
  }

  Vec3 sum = Vec3::Zero();
  int count = 0;
  for (int idx : needle.members) {
    const Vec3& p = cloud.points[static_cast<std::size_t>(idx)].position;
    if (slice_of(p) == tip_slice) {
      sum += p;
      ++count;
    }
  }
  return correct_point(sum / count, g);
}

namespace {

bool circumsphere(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3,
                  Vec3& center, double& radius) {
  Mat3 a;
  Vec3 rhs;
  const Vec3 pts[3] = {p1, p2, p3};
  for (int i = 0; i < 3; ++i) {
    a.row(i) = 2.0 * (pts[i] - p0).transpose();
    rhs(i) = pts[i].squaredNorm() - p0.squaredNorm();
  }
  const double det = a.determinant();
  if (std::abs(det) < 1e-12) return false;
  center = a.partialPivLu().solve(rhs);
  radius = (p0 - center).norm();
  return radius > 0.0;
}

/// Algebraic least-squares sphere (centroid-shifted for conditioning).
bool sphere_least_squares(const std::vector<Vec3>& pts, Vec3& center,
                          double& radius) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : pts) mean += p;
  mean /= static_cast<double>(n);

  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 q = pts[static_cast<std::size_t>(i)] - mean;
    a(i, 0) = q.x();
    a(i, 1) = q.y();
    a(i, 2) = q.z();
    a(i, 3) = 1.0;
    b(i) = -q.squaredNorm();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU |
                                               Eigen::ComputeThinV);
  if (svd.singularValues()(3) < 1e-12 * svd.singularValues()(0)) return false;
  const Eigen::Vector4d sol = svd.solve(b);
  const Vec3 c_local(-sol(0) / 2.0, -sol(1) / 2.0, -sol(2) / 2.0);
  const double r2 = c_local.squaredNorm() - sol(3);
  if (!(r2 > 0.0)) return false;
  center = c_local + mean;
  radius = std::sqrt(r2);
  return true;
}

int count_inliers(const PointCloud& cloud, const Vec3& center, double radius,
                  double tol, std::vector<int>* out) {
  int count = 0;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const double d =
        std::abs((cloud.points[i].position - center).norm() - radius);
    if (d <= tol) {
      ++count;
      if (out) out->push_back(static_cast<int>(i));
    }
  }
  return count;
}

}  // namespace

SphereFit fit_sphere_ransac(const PointCloud& cloud, double radius_hint,
                            int iters, double inlier_tol, std::uint64_t seed) {
  const int n = static_cast<int>(cloud.points.size());
  if (n < 4) throw InvalidInput("fit_sphere_ransac: need at least 4 points");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, n - 1);

  Vec3 best_center = Vec3::Zero();
  double best_radius = 0.0;
  int best_count = 0;
  for (int it = 0; it < iters; ++it) {
    int idx[4];
    for (int k = 0; k < 4;) {
      const int candidate = pick(rng);
      bool dup = false;
      for (int j = 0; j < k; ++j) dup = dup || idx[j] == candidate;
      if (!dup) idx[k++] = candidate;
    }
    Vec3 center;
    double radius;
    if (!circumsphere(cloud.points[static_cast<std::size_t>(idx[0])].position,
                      cloud.points[static_cast<std::size_t>(idx[1])].position,
                      cloud.points[static_cast<std::size_t>(idx[2])].position,
                      cloud.points[static_cast<std::size_t>(idx[3])].position,
                      center, radius))
      continue;
    if (radius_hint > 0.0 &&
        (radius < 0.8 * radius_hint || radius > 1.2 * radius_hint))
      continue;
    const int count = count_inliers(cloud, center, radius, inlier_tol, nullptr);
    if (count > best_count) {
      best_count = count;
      best_center = center;
      best_radius = radius;
    }
  }

  const int min_support = std::max(4, (n + 3) / 4);
  if (best_count < min_support)
    throw DegenerateInput(
        "fit_sphere_ransac: no candidate reached the minimum inlier support");

  std::vector<int> inliers;
  count_inliers(cloud, best_center, best_radius, inlier_tol, &inliers);
  std::vector<Vec3> pts;
  pts.reserve(inliers.size());
  for (int i : inliers) pts.push_back(cloud.points[static_cast<std::size_t>(i)].position);

  SphereFit fit;
  fit.center = best_center;
  fit.radius = best_radius;
  Vec3 refined_center;
  double refined_radius;
  if (sphere_least_squares(pts, refined_center, refined_radius)) {
    fit.center = refined_center;
    fit.radius = refined_radius;
  }
  fit.inlier_count = count_inliers(cloud, fit.center, fit.radius, inlier_tol, nullptr);
  return fit;
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write cloud file: " + path.string());
  char buf[128];
  for (const LabeledPoint& p : cloud.points) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d\n", p.position.x(),
                  p.position.y(), p.position.z(), p.b ? 1 : 0);
    out << buf;
  }
  if (!out.flush()) throw IoError("failed to write cloud file");
}

}  // namespace octcal
