#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "octcal/common.hpp"
#include "octcal/distortion.hpp"
#include "octcal/segmentation2d.hpp"
#include "octcal/volume.hpp"

namespace octcal {

struct LabeledPoint {
  Vec3 position;   ///< mm, raw (uncorrected) scanner space
  bool b = false;  ///< needle-membership vote
};

struct PointCloud {
  std::vector<LabeledPoint> points;
  ScanGeometry geometry;  ///< geometry of the source volume
};

/// Converts labeled B-scans to a voxel-grid-filtered point cloud: every
/// foreground pixel becomes a point at its voxel-center position, each
/// occupied leaf cell is replaced by the centroid of its points, and the
/// centroid's b flag is the OR of the merged flags. `labels` must hold one
/// entry per B-scan.
PointCloud volume_to_cloud(const Volume& v, std::span<const LabeledBScan> labels,
                           double leaf_mm = 0.02);

struct Cluster {
  std::vector<int> members;  ///< indices into the parent cloud, ascending
  int votes = 0;             ///< members with b == true
};

/// Euclidean cluster extraction: points closer than t are connected, distinct
/// clusters are >= t apart. Neighbor search uses a kd-tree and matches brute
/// force exactly. Clusters are ordered by their smallest member index.
std::vector<Cluster> cluster_euclidean(const PointCloud& cloud, double t_mm);

/// Returns the cluster with the greatest vote count; ties keep the earliest
/// cluster. Throws InvalidInput on an empty set, NoNeedleEvidence when the
/// winner has zero votes.
const Cluster& segment_needle(std::span<const Cluster> clusters);

/// Tip = centroid of the needle cluster's points in its first occupied
/// B-scan slice (minimal y index; maximal when reversed_scan), passed through
/// the distortion correction.
Vec3 locate_tip(const Cluster& needle, const PointCloud& cloud,
                const GalvoParams& g, bool reversed_scan = false);

struct SphereFit {
  Vec3 center;
  double radius = 0.0;
  int inlier_count = 0;
};

inline constexpr std::uint64_t kDefaultRansacSeed = 946'424ULL;

/// RANSAC sphere fit over random 4-point minimal samples, followed by a
/// least-squares refinement over the consensus set. Candidates with radius
/// outside +/-20% of radius_hint are rejected (pass hint <= 0 to disable).
/// Requires consensus support of at least 25% of the cloud.
SphereFit fit_sphere_ransac(const PointCloud& cloud, double radius_hint,
                            int iters = 500, double inlier_tol = 0.02,
                            std::uint64_t seed = kDefaultRansacSeed);

/// Plain-text export, one "x_mm y_mm z_mm b" line per point.
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace octcal
