#include <doctest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>

#include "octcal/cloud3d.hpp"
#include "test_util.hpp"

using namespace octcal;

namespace {

const GalvoParams kNearIdentity{1.5, 1e6, 1.5, 1e6};

PointCloud make_cloud(std::vector<LabeledPoint> pts) {
  PointCloud c;
  c.points = std::move(pts);
  c.geometry = ScanGeometry{};
  return c;
}

/// O(n^2) union-find clustering oracle with the same strict-< rule.
std::vector<std::vector<int>> brute_force_clusters(const PointCloud& cloud,
                                                   double t) {
  const int n = static_cast<int>(cloud.points.size());
  std::vector<int> parent(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
  std::function<int(int)> find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      parent[static_cast<std::size_t>(a)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
      a = parent[static_cast<std::size_t>(a)];
    }
    return a;
  };
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((cloud.points[static_cast<std::size_t>(i)].position -
           cloud.points[static_cast<std::size_t>(j)].position)
              .norm() < t)
        parent[static_cast<std::size_t>(find(i))] = find(j);

  std::map<int, std::vector<int>> by_root;
  for (int i = 0; i < n; ++i) by_root[find(i)].push_back(i);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : by_root) out.push_back(members);
  // order clusters by smallest member for comparability
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

}  // namespace

TEST_CASE("voxel filter merges points that share a leaf cell") {
  ScanGeometry g;
  g.n_x = 16;
  g.n_y = 2;
  g.n_z = 4;
  g.extent_x_mm = 0.032;  // pitch 2 um: five adjacent centers fit in one cell
  g.extent_y_mm = 0.08;
  g.extent_z_mm = 0.08;
  Volume v(g);
  std::vector<LabeledBScan> labels(2);
  for (auto& lb : labels) {
    lb.foreground = Mask2D(g.n_z, g.n_x);
    lb.needle = Mask2D(g.n_z, g.n_x);
  }
  for (int ix = 0; ix < 5; ++ix) labels[0].foreground(0, ix) = 1;
  labels[0].needle(0, 2) = 1;  // one vote among the merged points

  const PointCloud cloud = volume_to_cloud(v, labels, 0.02);
  REQUIRE(cloud.points.size() == 1);
  CHECK(cloud.points[0].position.x() == doctest::Approx(0.005));  // centroid
  CHECK(cloud.points[0].b);  // OR aggregation keeps the vote
}

TEST_CASE("voxel filter keeps spaced points apart") {
  ScanGeometry g;
  g.n_x = 8;
  g.n_y = 2;
  g.n_z = 2;
  g.extent_x_mm = 0.4;  // pitch 50 um > leaf
  g.extent_y_mm = 0.1;
  g.extent_z_mm = 0.1;
  Volume v(g);
  std::vector<LabeledBScan> labels(2);
  for (auto& lb : labels) {
    lb.foreground = Mask2D(g.n_z, g.n_x);
    lb.needle = Mask2D(g.n_z, g.n_x);
  }
  for (int ix = 0; ix < 8; ++ix) labels[0].foreground(0, ix) = 1;
  const PointCloud cloud = volume_to_cloud(v, labels, 0.02);
  CHECK(cloud.points.size() == 8);
}

TEST_CASE("voxel filter output count matches an independent cell hash") {
  ScanGeometry g;
  g.n_x = 64;
  g.n_y = 16;
  g.n_z = 64;
  g.extent_x_mm = 0.9;
  g.extent_y_mm = 0.5;
  g.extent_z_mm = 1.1;
  Volume v(g);
  std::vector<LabeledBScan> labels(static_cast<std::size_t>(g.n_y));
  std::mt19937_64 rng(31);
  std::set<std::tuple<long, long, long>> cells;
  const double leaf = 0.02;
  int placed = 0;
  for (int iy = 0; iy < g.n_y; ++iy) {
    labels[static_cast<std::size_t>(iy)].foreground = Mask2D(g.n_z, g.n_x);
    labels[static_cast<std::size_t>(iy)].needle = Mask2D(g.n_z, g.n_x);
  }
  while (placed < 10000) {
    const int ix = static_cast<int>(rng() % static_cast<std::uint64_t>(g.n_x));
    const int iy = static_cast<int>(rng() % static_cast<std::uint64_t>(g.n_y));
    const int iz = static_cast<int>(rng() % static_cast<std::uint64_t>(g.n_z));
    if (labels[static_cast<std::size_t>(iy)].foreground(iz, ix)) continue;
    labels[static_cast<std::size_t>(iy)].foreground(iz, ix) = 1;
    const Vec3 p = v.voxel_to_mm(ix, iy, iz);
    cells.insert({static_cast<long>(p.x() / leaf),
                  static_cast<long>(p.y() / leaf),
                  static_cast<long>(p.z() / leaf)});
    ++placed;
  }
  const PointCloud cloud = volume_to_cloud(v, labels, leaf);
  CHECK(cloud.points.size() == cells.size());
}

TEST_CASE("clustering by distance threshold") {
  PointCloud close = make_cloud(
      {{Vec3(0.0, 0.0, 0.0), false}, {Vec3(0.05, 0.0, 0.0), false}});
  CHECK(cluster_euclidean(close, 0.1).size() == 1);

  PointCloud apart = make_cloud(
      {{Vec3(0.0, 0.0, 0.0), false}, {Vec3(0.2, 0.0, 0.0), false}});
  CHECK(cluster_euclidean(apart, 0.1).size() == 2);

  CHECK(cluster_euclidean(make_cloud({}), 0.1).empty());
  CHECK_THROWS_AS(cluster_euclidean(close, 0.0), InvalidInput);
}

TEST_CASE("clustering matches the brute-force union-find oracle") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<LabeledPoint> pts;
    const int n = 50 + static_cast<int>(rng() % 150);
    for (int i = 0; i < n; ++i)
      pts.push_back({Vec3(u(rng), u(rng), u(rng)), rng() % 2 == 0});
    const PointCloud cloud = make_cloud(std::move(pts));
    const double t = 0.07;

    const auto clusters = cluster_euclidean(cloud, t);
    const auto oracle = brute_force_clusters(cloud, t);
    REQUIRE(clusters.size() == oracle.size());
    for (std::size_t i = 0; i < clusters.size(); ++i)
      CHECK(clusters[i].members == oracle[i]);

    // distinct clusters are at least t apart
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b)
        for (int i : clusters[a].members)
          for (int j : clusters[b].members)
            CHECK((cloud.points[static_cast<std::size_t>(i)].position -
                   cloud.points[static_cast<std::size_t>(j)].position)
                      .norm() >= t);

    // vote counts recount correctly
    for (const Cluster& c : clusters) {
      int votes = 0;
      for (int i : c.members)
        votes += cloud.points[static_cast<std::size_t>(i)].b ? 1 : 0;
      CHECK(votes == c.votes);
    }
  }
}

TEST_CASE("needle segmentation picks the first maximum vote") {
  std::vector<Cluster> clusters(2);
  clusters[0].members = {0, 1, 2, 3, 4};
  clusters[0].votes = 5;
  clusters[1].members = {5, 6};
  clusters[1].votes = 2;
  CHECK(&segment_needle(clusters) == &clusters[0]);

  clusters[0].votes = 3;
  clusters[1].votes = 3;
  CHECK(&segment_needle(clusters) == &clusters[0]);  // tie keeps the first

  clusters[0].votes = 0;
  clusters[1].votes = 0;
  CHECK_THROWS_AS(segment_needle(clusters), NoNeedleEvidence);
  CHECK_THROWS_AS(segment_needle(std::span<const Cluster>{}), InvalidInput);
}

TEST_CASE("tip is the corrected centroid of the first occupied slice") {
  ScanGeometry g;  // default: pitch_y = 3.10/128
  const double y40 = (40 + 0.5) * g.pitch_y();
  std::vector<LabeledPoint> pts;
  pts.push_back({Vec3(1.00, y40, 1.00), true});
  pts.push_back({Vec3(1.02, y40, 1.04), true});
  for (int s = 41; s < 128; ++s)
    pts.push_back({Vec3(1.0, (s + 0.5) * g.pitch_y(), 1.1), true});
  PointCloud cloud = make_cloud(pts);

  Cluster needle;
  for (int i = 0; i < static_cast<int>(cloud.points.size()); ++i)
    needle.members.push_back(i);
  needle.votes = static_cast<int>(cloud.points.size());

  const Vec3 tip = locate_tip(needle, cloud, kNearIdentity);
  const Vec3 expected = correct_point(Vec3(1.01, y40, 1.02), kNearIdentity);
  CHECK((tip - expected).norm() < 1e-12);

  // single-point cluster: that point, corrected
  PointCloud one = make_cloud({{Vec3(0.7, 0.9, 1.1), true}});
  Cluster single;
  single.members = {0};
  single.votes = 1;
  CHECK((locate_tip(single, one, kNearIdentity) -
         correct_point(Vec3(0.7, 0.9, 1.1), kNearIdentity))
            .norm() < 1e-12);

  Cluster empty;
  CHECK_THROWS_AS(locate_tip(empty, cloud, kNearIdentity), InvalidInput);
}

TEST_CASE("tip localization ignores point ordering") {
  ScanGeometry g;
  std::mt19937_64 rng(33);
  std::vector<LabeledPoint> pts;
  for (int s = 20; s < 60; ++s)
    for (int k = 0; k < 3; ++k)
      pts.push_back({Vec3(1.0 + 0.01 * k, (s + 0.5) * g.pitch_y(),
                          1.2 + 0.005 * k),
                     true});
  PointCloud cloud = make_cloud(pts);
  Cluster all;
  for (int i = 0; i < static_cast<int>(cloud.points.size()); ++i)
    all.members.push_back(i);
  const Vec3 tip = locate_tip(all, cloud, kNearIdentity);

  std::shuffle(cloud.points.begin(), cloud.points.end(), rng);
  Cluster shuffled;
  for (int i = 0; i < static_cast<int>(cloud.points.size()); ++i)
    shuffled.members.push_back(i);
  CHECK((locate_tip(shuffled, cloud, kNearIdentity) - tip).norm() < 1e-12);
}

TEST_CASE("reversed scan direction flips the tip slice") {
  ScanGeometry g;
  std::vector<LabeledPoint> pts;
  for (int s = 10; s <= 50; ++s)
    pts.push_back({Vec3(1.0, (s + 0.5) * g.pitch_y(), 1.0), true});
  PointCloud cloud = make_cloud(pts);
  Cluster all;
  for (int i = 0; i < static_cast<int>(cloud.points.size()); ++i)
    all.members.push_back(i);
  const Vec3 forward = locate_tip(all, cloud, kNearIdentity, false);
  const Vec3 reversed = locate_tip(all, cloud, kNearIdentity, true);
  CHECK(forward.y() < reversed.y());
}

TEST_CASE("sphere fit recovers exact samples") {
  std::vector<LabeledPoint> pts;
  const Vec3 center(1.0, 1.0, 1.0);
  const double radius = 0.25;
  for (int i = 0; i < 500; ++i) {
    // spiral over the upper hemisphere
    const double t = static_cast<double>(i) / 499.0;
    const double phi = std::acos(1.0 - t);  // polar angle in [0, pi/2]
    const double theta = 2.399963 * i;      // golden angle
    pts.push_back({center + radius * Vec3(std::sin(phi) * std::cos(theta),
                                          std::sin(phi) * std::sin(theta),
                                          -std::cos(phi)),
                   false});
  }
  const PointCloud cloud = make_cloud(pts);
  const SphereFit fit = fit_sphere_ransac(cloud, 0.25, 500, 0.005);
  CHECK((fit.center - center).norm() < 1e-6);
  CHECK(fit.radius == doctest::Approx(radius).epsilon(1e-6));
  CHECK(fit.inlier_count == 500);
}

TEST_CASE("sphere fit survives 20% outliers") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<LabeledPoint> pts;
  const Vec3 center(1.0, 0.9, 1.1);
  const double radius = 0.25;
  for (int i = 0; i < 400; ++i) {
    const double t = static_cast<double>(i) / 399.0;
    const double phi = std::acos(1.0 - t);
    const double theta = 2.399963 * i;
    pts.push_back({center + radius * Vec3(std::sin(phi) * std::cos(theta),
                                          std::sin(phi) * std::sin(theta),
                                          -std::cos(phi)),
                   false});
  }
  for (int i = 0; i < 100; ++i) pts.push_back({Vec3(u(rng), u(rng), u(rng)), false});
  const PointCloud cloud = make_cloud(pts);
  const SphereFit fit = fit_sphere_ransac(cloud, 0.25, 500, 0.002);
  CHECK((fit.center - center).norm() < 2e-3);  // within 2 um
  CHECK(fit.radius == doctest::Approx(radius).epsilon(1e-2));
}

TEST_CASE("sphere fit error paths and determinism") {
  PointCloud three = make_cloud({{Vec3(0, 0, 0), false},
                                 {Vec3(1, 0, 0), false},
                                 {Vec3(0, 1, 0), false}});
  CHECK_THROWS_AS(fit_sphere_ransac(three, 0.0, 100, 0.01), InvalidInput);

  // random junk reaches no consensus at a strict tolerance
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<LabeledPoint> junk;
  for (int i = 0; i < 60; ++i) junk.push_back({Vec3(u(rng), u(rng), u(rng)), false});
  const PointCloud cloud = make_cloud(junk);
  CHECK_THROWS_AS(fit_sphere_ransac(cloud, 0.25, 50, 1e-7), DegenerateInput);

  std::vector<LabeledPoint> pts;
  const Vec3 center(1.0, 1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double t = static_cast<double>(i) / 199.0;
    const double phi = std::acos(1.0 - t);
    const double theta = 2.399963 * i;
    pts.push_back({center + 0.25 * Vec3(std::sin(phi) * std::cos(theta),
                                        std::sin(phi) * std::sin(theta),
                                        -std::cos(phi)),
                   false});
  }
  const PointCloud sphere = make_cloud(pts);
  const SphereFit a = fit_sphere_ransac(sphere, 0.25, 300, 0.004, 777);
  const SphereFit b = fit_sphere_ransac(sphere, 0.25, 300, 0.004, 777);
  CHECK(a.center == b.center);
  CHECK(a.radius == b.radius);
  CHECK(a.inlier_count == b.inlier_count);
}

TEST_CASE("cloud export writes one labeled point per line") {
  testutil::TempDir tmp("cloud");
  PointCloud cloud = make_cloud(
      {{Vec3(0.1, 0.2, 0.3), true}, {Vec3(0.4, 0.5, 0.6), false}});
  save_cloud(cloud, tmp.path() / "c.txt");
  std::ifstream in(tmp.path() / "c.txt");
  double x, y, z;
  int b;
  REQUIRE((in >> x >> y >> z >> b));
  CHECK(x == doctest::Approx(0.1));
  CHECK(b == 1);
  REQUIRE((in >> x >> y >> z >> b));
  CHECK(b == 0);
}
