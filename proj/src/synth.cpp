#include "octcal/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace octcal {

namespace {

using json = nlohmann::ordered_json;

// Interior samples dimmer than this are not splatted; the background wins
// the max-splat anyway at typical levels.
constexpr double kInteriorCutoff = 8.0;

// Needle voxels at least this bright count toward the visible-tip record,
// mirroring what an adaptive threshold keeps of the band plus its tail.
constexpr std::uint8_t kVisibleLevel = 30;

// Lateral padding around object footprints and the scan field so the forward
// warp (tens of micrometers) cannot open holes at the borders.
constexpr double kWarpPad = 0.08;

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

void fill_background(Volume& vol, double level, double speckle_sigma,
                     std::uint64_t seed) {
  const ScanGeometry& g = vol.geometry();
  const std::size_t bscan_size =
      static_cast<std::size_t>(g.n_z) * static_cast<std::size_t>(g.n_x);
  if (speckle_sigma <= 0.0) {
    std::fill(vol.data().begin(), vol.data().end(), clamp_u8(level));
    return;
  }
  parallel_for(g.n_y, [&](int iy) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(iy)));
    std::normal_distribution<double> noise(0.0, speckle_sigma);
    std::uint8_t* row = vol.data().data() + bscan_size * static_cast<std::size_t>(iy);
    for (std::size_t i = 0; i < bscan_size; ++i)
      row[i] = clamp_u8(level + noise(rng));
  });
}

struct ColumnSpan {
  double z_top;
  double z_bottom;
};

/// Intersection of the vertical line (x, y) with the needle cylinder: the
/// shaft runs from `tip` along `axis`, starting at arc length trunc.
std::optional<ColumnSpan> needle_column(const NeedleSpec& n, double trunc,
                                        double x, double y) {
  const double dx = x - n.tip.x();
  const double dy = y - n.tip.y();
  const double c0 = dx * n.axis.x() + dy * n.axis.y();
  const double c1 = n.axis.z();

  const double qa = 1.0 - c1 * c1;
  const double qb = -2.0 * c0 * c1;
  const double qc = dx * dx + dy * dy - c0 * c0 - n.radius_mm * n.radius_mm;
  if (qa <= 0.0) return std::nullopt;  // axis parallel to the beam
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double u_lo = (-qb - sq) / (2.0 * qa);
  double u_hi = (-qb + sq) / (2.0 * qa);

  // Keep only the shaft side of the tip plane: c0 + c1 u >= trunc.
  if (c1 > 1e-12) {
    u_lo = std::max(u_lo, (trunc - c0) / c1);
  } else if (c1 < -1e-12) {
    u_hi = std::min(u_hi, (trunc - c0) / c1);
  } else if (c0 < trunc) {
    return std::nullopt;
  }
  if (u_lo > u_hi) return std::nullopt;
  return ColumnSpan{n.tip.z() + u_lo, n.tip.z() + u_hi};
}

}  // namespace

std::pair<Volume, SceneTruth> render_scene(const Scene& scene,
                                           const ScanGeometry& geom,
                                           const GalvoParams& g,
                                           double noise_sigma,
                                           std::uint64_t seed) {
  geom.validate();
  validate_galvo(g, geom);
  if (noise_sigma < 0.0) throw InvalidInput("render_scene: negative noise sigma");

  auto in_field = [&](const Vec3& p) {
    return p.x() >= 0.0 && p.x() <= geom.extent_x_mm && p.y() >= 0.0 &&
           p.y() <= geom.extent_y_mm && p.z() >= 0.0 &&
           p.z() <= geom.extent_z_mm;
  };
  if (scene.needle && !in_field(scene.needle->tip))
    throw InvalidInput("render_scene: needle tip outside the scan field");
  if (scene.needle && !(scene.needle->axis.y() > 0.0))
    throw InvalidInput("render_scene: needle axis must have positive y");
  if (scene.ball && !in_field(scene.ball->center))
    throw InvalidInput("render_scene: ball center outside the scan field");
  if (scene.surface && !(scene.surface->depth_mm >= 0.0 &&
                         scene.surface->depth_mm <= geom.extent_z_mm))
    throw InvalidInput("render_scene: surface depth outside the scan field");

  Volume vol(geom);
  fill_background(vol, scene.background_level, scene.speckle_sigma, seed);

  const double dx = geom.pitch_x() / 2.0;
  const double dz = geom.pitch_z() / 2.0;
  const double band_mm = scene.band_voxels * geom.pitch_z();

  // One acquisition row per B-scan, like the scanner itself: the corrected
  // row position is chosen so its forward warp lands on the raw row center
  // at the object's reference depth.
  auto warp_aligned_row = [&](int k, double x_ref, double z_ref) {
    const double y_row = (k + 0.5) * geom.pitch_y();
    double y_star = y_row;
    for (int iter = 0; iter < 3; ++iter)
      y_star += y_row - distort_point(Vec3(x_ref, y_star, z_ref), g).y();
    return y_star;
  };

  // Needle voxels are tracked so the visible tip can be reported.
  std::unordered_map<std::size_t, std::uint8_t> needle_voxels;

  auto splat_column = [&](double x, double y, const ColumnSpan& span,
                          double refl, bool is_needle) {
    double render_end = span.z_bottom;
    if (refl > kInteriorCutoff)
      render_end = std::min(
          render_end, span.z_top + band_mm +
                          scene.attenuation_length_mm *
                              std::log(refl / kInteriorCutoff));
    for (double z = span.z_top; z <= render_end; z += dz) {
      const double depth_in = z - span.z_top;
      const double intensity =
          depth_in <= band_mm
              ? refl
              : refl * std::exp(-(depth_in - band_mm) /
                                scene.attenuation_length_mm);
      if (intensity < kInteriorCutoff) break;
      const Vec3 raw = distort_point(Vec3(x, y, z), g);
      const Eigen::Vector3i iv = vol.mm_to_voxel(raw);
      if (!vol.in_range(iv.y(), iv.z(), iv.x())) continue;
      std::uint8_t& voxel = vol.at(iv.y(), iv.z(), iv.x());
      const std::uint8_t value = clamp_u8(intensity);
      if (value > voxel) voxel = value;
      if (is_needle) {
        const std::size_t key =
            (static_cast<std::size_t>(iv.y()) * geom.n_z +
             static_cast<std::size_t>(iv.z())) *
                geom.n_x +
            static_cast<std::size_t>(iv.x());
        auto [it, inserted] = needle_voxels.try_emplace(key, value);
        if (!inserted && value > it->second) it->second = value;
      }
    }
  };

  if (scene.surface) {
    for (int k = 0; k < geom.n_y; ++k) {
      const double y = warp_aligned_row(k, g.x_c, scene.surface->depth_mm);
      for (double x = -kWarpPad; x <= geom.extent_x_mm + kWarpPad; x += dx)
        splat_column(x, y, ColumnSpan{scene.surface->depth_mm, geom.extent_z_mm},
                     scene.surface->reflectivity, false);
    }
  }

  if (scene.ball) {
    const BallSpec& b = *scene.ball;
    const double r = b.radius_mm;
    const int k_first = std::max(
        0, static_cast<int>((b.center.y() - r - kWarpPad) / geom.pitch_y()));
    for (int k = k_first; k < geom.n_y; ++k) {
      const double y = warp_aligned_row(k, b.center.x(), b.center.z());
      const double dyc = y - b.center.y();
      if (dyc > r + kWarpPad) break;
      const double w2 = r * r - dyc * dyc;
      if (w2 <= 0.0) continue;
      const double w = std::sqrt(w2);
      const double x_first = std::ceil((b.center.x() - w) / dx) * dx;
      for (double x = x_first; x <= b.center.x() + w; x += dx) {
        const double dxc = x - b.center.x();
        const double h2 = w2 - dxc * dxc;
        if (h2 <= 0.0) continue;
        const double h = std::sqrt(h2);
        splat_column(x, y, ColumnSpan{b.center.z() - h, b.center.z() + h},
                     b.reflectivity, false);
      }
    }
  }

  if (scene.needle) {
    const NeedleSpec& n = *scene.needle;
    Vec3 axis = n.axis.normalized();
    NeedleSpec unit = n;
    unit.axis = axis;
    const double trunc = n.tip_truncation_mm;
    // Lateral half-width of the tilted cylinder's footprint per y row.
    const double halfwidth =
        n.radius_mm / std::sqrt(std::max(1.0 - axis.x() * axis.x(), 1e-6)) +
        3.0 * geom.pitch_x();
    const double y_start = n.tip.y() + trunc * axis.y() - n.radius_mm - kWarpPad;
    const int k_first =
        std::max(0, static_cast<int>(std::floor(y_start / geom.pitch_y())));
    for (int k = k_first; k < geom.n_y; ++k) {
      const double y_star = warp_aligned_row(k, n.tip.x(), n.tip.z());
      const double s_at_y = (y_star - n.tip.y()) / axis.y();
      const double center_x = n.tip.x() + s_at_y * axis.x();
      const double x_first = std::ceil((center_x - halfwidth) / dx) * dx;
      for (double x = x_first; x <= center_x + halfwidth; x += dx) {
        const auto span = needle_column(unit, trunc, x, y_star);
        if (span) splat_column(x, y_star, *span, n.reflectivity, true);
      }
    }
  }

  SceneTruth truth;
  truth.galvo = g;
  truth.noise_sigma = noise_sigma;
  truth.seed = seed;
  if (scene.ball) truth.ball_center = scene.ball->center;
  if (scene.needle) {
    truth.needle_tip_geometric = scene.needle->tip;
    int min_iy = geom.n_y;
    for (const auto& [key, value] : needle_voxels) {
      if (value < kVisibleLevel) continue;
      const int iy = static_cast<int>(key / (static_cast<std::size_t>(geom.n_z) * geom.n_x));
      min_iy = std::min(min_iy, iy);
    }
    if (min_iy < geom.n_y) {
      Vec3 sum = Vec3::Zero();
      double count = 0.0;
      for (const auto& [key, value] : needle_voxels) {
        if (value < kVisibleLevel) continue;
        const int iy = static_cast<int>(key / (static_cast<std::size_t>(geom.n_z) * geom.n_x));
        if (iy != min_iy) continue;
        const int iz = static_cast<int>(key / geom.n_x % geom.n_z);
        const int ix = static_cast<int>(key % static_cast<std::size_t>(geom.n_x));
        sum += vol.voxel_to_mm(ix, iy, iz);
        count += 1.0;
      }
      truth.needle_tip_visible = correct_point(sum / count, g);
    }
  }

  if (noise_sigma > 0.0)
    vol = add_noise(vol, noise_sigma, mix_seed(seed, 0xA11CEULL));
  return {std::move(vol), std::move(truth)};
}

Volume add_noise(const Volume& v, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw InvalidInput("add_noise: negative sigma");
  Volume out = v;
  if (sigma == 0.0) return out;
  const ScanGeometry& g = v.geometry();
  const std::size_t bscan_size =
      static_cast<std::size_t>(g.n_z) * static_cast<std::size_t>(g.n_x);
  parallel_for(g.n_y, [&](int iy) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(iy)));
    std::normal_distribution<double> noise(0.0, sigma);
    std::uint8_t* row = out.data().data() + bscan_size * static_cast<std::size_t>(iy);
    for (std::size_t i = 0; i < bscan_size; ++i)
      row[i] = clamp_u8(static_cast<double>(row[i]) + noise(rng));
  });
  return out;
}

TrajectoryPattern parse_trajectory_pattern(const std::string& name) {
  if (name == "traj1") return TrajectoryPattern::Traj1;
  if (name == "traj2") return TrajectoryPattern::Traj2;
  if (name == "custom") return TrajectoryPattern::Custom;
  throw InvalidInput("unknown trajectory pattern: " + name);
}

std::vector<Vec3> make_trajectory(const TrajectorySpec& spec) {
  if (!(spec.step_um > 0.0))
    throw InvalidInput("make_trajectory: step size must be > 0");

  int steps = spec.steps_per_leg;
  int repeats = spec.repeats;
  std::string order = spec.axis_order;
  switch (spec.pattern) {
    case TrajectoryPattern::Traj1:
      steps = 10;
      repeats = 1;
      order = "xzy";
      break;
    case TrajectoryPattern::Traj2:
      steps = 5;
      repeats = 2;
      order = "xzy";
      break;
    case TrajectoryPattern::Custom:
      break;
  }
  if (steps < 1 || repeats < 1 || order.empty())
    throw InvalidInput("make_trajectory: invalid custom trajectory");

  const double step_mm = spec.step_um / 1000.0;
  std::vector<Vec3> out;
  out.reserve(1 + static_cast<std::size_t>(steps) * order.size() * repeats);
  Vec3 pos = spec.start;
  out.push_back(pos);
  for (int rep = 0; rep < repeats; ++rep) {
    for (char axis : order) {
      int index;
      switch (axis) {
        case 'x': index = 0; break;
        case 'y': index = 1; break;
        case 'z': index = 2; break;
        default:
          throw InvalidInput("make_trajectory: axis order may only use x, y, z");
      }
      for (int i = 0; i < steps; ++i) {
        pos(index) += step_mm;
        out.push_back(pos);
      }
    }
  }
  return out;
}

DetectMode parse_detect_mode(const std::string& name) {
  if (name == "needle") return DetectMode::Needle;
  if (name == "marker") return DetectMode::Marker;
  throw InvalidInput("unknown detect mode: " + name);
}

std::string detect_mode_name(DetectMode m) {
  return m == DetectMode::Needle ? "needle" : "marker";
}

namespace {

json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3)
    throw IoError("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json transform_to_json(const RigidTransform& x) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r)
    rows.push_back(json::array(
        {x.rotation(r, 0), x.rotation(r, 1), x.rotation(r, 2)}));
  return json{{"rotation", rows}, {"translation", vec_to_json(x.translation)}};
}

RigidTransform transform_from_json(const json& j) {
  RigidTransform x;
  if (j.contains("rotation")) {
    const json& rows = j.at("rotation");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        x.rotation(r, c) = rows.at(static_cast<std::size_t>(r))
                               .at(static_cast<std::size_t>(c))
                               .get<double>();
  } else if (j.contains("axis")) {
    const Vec3 axis = vec_from_json(j.at("axis")).normalized();
    const double angle = j.at("angle_deg").get<double>() * M_PI / 180.0;
    x.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  }
  if (j.contains("translation"))
    x.translation = vec_from_json(j.at("translation"));
  else if (j.contains("translation_mm"))
    x.translation = vec_from_json(j.at("translation_mm"));
  return x;
}

json galvo_to_json(const GalvoParams& g) {
  return json{{"x_c", g.x_c}, {"z_xc", g.z_xc}, {"y_c", g.y_c}, {"z_yc", g.z_yc}};
}

GalvoParams galvo_from_json(const json& j) {
  return GalvoParams{j.at("x_c").get<double>(), j.at("z_xc").get<double>(),
                     j.at("y_c").get<double>(), j.at("z_yc").get<double>()};
}

}  // namespace

SynthConfig load_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synth config: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed synth config: " + std::string(e.what()));
  }

  try {
    SynthConfig cfg;
    if (j.contains("geometry")) {
      const json& gj = j["geometry"];
      ScanGeometry& g = cfg.geometry;
      g.n_x = gj.value("n_x", g.n_x);
      g.n_y = gj.value("n_y", g.n_y);
      g.n_z = gj.value("n_z", g.n_z);
      g.extent_x_mm = gj.value("extent_x_mm", g.extent_x_mm);
      g.extent_y_mm = gj.value("extent_y_mm", g.extent_y_mm);
      g.extent_z_mm = gj.value("extent_z_mm", g.extent_z_mm);
    }
    if (j.contains("galvo")) cfg.galvo = galvo_from_json(j["galvo"]);
    if (j.contains("handeye"))
      cfg.camera_to_robot = transform_from_json(j["handeye"]);
    if (j.contains("scene")) {
      const json& sj = j["scene"];
      Scene& s = cfg.scene;
      if (sj.contains("needle") && !sj["needle"].is_null()) {
        NeedleSpec n;
        const json& nj = sj["needle"];
        if (nj.contains("axis")) n.axis = vec_from_json(nj["axis"]);
        if (nj.contains("tip_mm")) n.tip = vec_from_json(nj["tip_mm"]);
        n.radius_mm = nj.value("radius_mm", n.radius_mm);
        n.reflectivity = nj.value("reflectivity", n.reflectivity);
        n.tip_truncation_mm = nj.value("tip_truncation_mm", n.tip_truncation_mm);
        s.needle = n;
      }
      if (sj.contains("ball") && !sj["ball"].is_null()) {
        BallSpec b;
        const json& bj = sj["ball"];
        if (bj.contains("center_mm")) b.center = vec_from_json(bj["center_mm"]);
        b.radius_mm = bj.value("radius_mm", b.radius_mm);
        b.reflectivity = bj.value("reflectivity", b.reflectivity);
        s.ball = b;
      }
      if (sj.contains("surface") && !sj["surface"].is_null()) {
        SurfaceSpec f;
        const json& fj = sj["surface"];
        f.depth_mm = fj.value("depth_mm", f.depth_mm);
        f.reflectivity = fj.value("reflectivity", f.reflectivity);
        s.surface = f;
      }
      s.background_level = sj.value("background_level", s.background_level);
      s.speckle_sigma = sj.value("speckle_sigma", s.speckle_sigma);
      s.band_voxels = sj.value("band_voxels", s.band_voxels);
      s.attenuation_length_mm =
          sj.value("attenuation_length_mm", s.attenuation_length_mm);
    }
    if (j.contains("trajectory")) {
      const json& tj = j["trajectory"];
      TrajectorySpec& t = cfg.trajectory;
      t.pattern = parse_trajectory_pattern(tj.value("pattern", "traj1"));
      t.step_um = tj.value("step_um", t.step_um);
      t.steps_per_leg = tj.value("steps_per_leg", t.steps_per_leg);
      t.repeats = tj.value("repeats", t.repeats);
      t.axis_order = tj.value("axis_order", t.axis_order);
    }
    cfg.mode = parse_detect_mode(j.value("mode", "needle"));
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
  } catch (const json::exception& e) {
    throw IoError("malformed synth config: " + std::string(e.what()));
  }
}

void save_synth_config(const SynthConfig& cfg, const std::filesystem::path& path) {
  json j;
  j["geometry"] = json{{"n_x", cfg.geometry.n_x},
                       {"n_y", cfg.geometry.n_y},
                       {"n_z", cfg.geometry.n_z},
                       {"extent_x_mm", cfg.geometry.extent_x_mm},
                       {"extent_y_mm", cfg.geometry.extent_y_mm},
                       {"extent_z_mm", cfg.geometry.extent_z_mm}};
  j["galvo"] = galvo_to_json(cfg.galvo);
  j["handeye"] = transform_to_json(cfg.camera_to_robot);
  json sj;
  if (cfg.scene.needle) {
    const NeedleSpec& n = *cfg.scene.needle;
    sj["needle"] = json{{"axis", vec_to_json(n.axis)},
                        {"tip_mm", vec_to_json(n.tip)},
                        {"radius_mm", n.radius_mm},
                        {"reflectivity", n.reflectivity},
                        {"tip_truncation_mm", n.tip_truncation_mm}};
  }
  if (cfg.scene.ball) {
    const BallSpec& b = *cfg.scene.ball;
    sj["ball"] = json{{"center_mm", vec_to_json(b.center)},
                      {"radius_mm", b.radius_mm},
                      {"reflectivity", b.reflectivity}};
  }
  if (cfg.scene.surface) {
    const SurfaceSpec& f = *cfg.scene.surface;
    sj["surface"] =
        json{{"depth_mm", f.depth_mm}, {"reflectivity", f.reflectivity}};
  }
  sj["background_level"] = cfg.scene.background_level;
  sj["speckle_sigma"] = cfg.scene.speckle_sigma;
  sj["band_voxels"] = cfg.scene.band_voxels;
  sj["attenuation_length_mm"] = cfg.scene.attenuation_length_mm;
  j["scene"] = sj;
  j["trajectory"] = json{{"pattern", cfg.trajectory.pattern == TrajectoryPattern::Traj1
                                         ? "traj1"
                                         : cfg.trajectory.pattern == TrajectoryPattern::Traj2
                                               ? "traj2"
                                               : "custom"},
                         {"step_um", cfg.trajectory.step_um},
                         {"steps_per_leg", cfg.trajectory.steps_per_leg},
                         {"repeats", cfg.trajectory.repeats},
                         {"axis_order", cfg.trajectory.axis_order}};
  j["mode"] = detect_mode_name(cfg.mode);
  j["noise_sigma"] = cfg.noise_sigma;
  j["seed"] = cfg.seed;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write synth config: " + path.string());
  out << j.dump(2) << "\n";
  if (!out.flush()) throw IoError("failed to write synth config");
}

void save_ground_truth(const DatasetGroundTruth& gt,
                       const std::filesystem::path& path) {
  json j;
  j["camera_to_robot"] = transform_to_json(gt.camera_to_robot);
  j["galvo"] = galvo_to_json(gt.galvo);
  j["noise_sigma"] = gt.noise_sigma;
  j["seed"] = gt.seed;
  json poses = json::array();
  for (std::size_t i = 0; i < gt.robot_poses.size(); ++i) {
    poses.push_back(json{
        {"robot_mm", vec_to_json(gt.robot_poses[i])},
        {"camera_tip_mm", vec_to_json(gt.camera_tips[i])},
        {"camera_tip_visible_mm", vec_to_json(gt.camera_tips_visible[i])},
        {"robot_tip_visible_mm", vec_to_json(gt.robot_tips_visible[i])}});
  }
  j["poses"] = poses;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ground truth: " + path.string());
  out << j.dump(2) << "\n";
  if (!out.flush()) throw IoError("failed to write ground truth");
}

DatasetGroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth: " + path.string());
  json j;
  try {
    j = json::parse(in);
    DatasetGroundTruth gt;
    gt.camera_to_robot = transform_from_json(j.at("camera_to_robot"));
    gt.galvo = galvo_from_json(j.at("galvo"));
    gt.noise_sigma = j.at("noise_sigma").get<double>();
    gt.seed = j.at("seed").get<std::uint64_t>();
    for (const json& p : j.at("poses")) {
      gt.robot_poses.push_back(vec_from_json(p.at("robot_mm")));
      gt.camera_tips.push_back(vec_from_json(p.at("camera_tip_mm")));
      gt.camera_tips_visible.push_back(
          vec_from_json(p.at("camera_tip_visible_mm")));
      gt.robot_tips_visible.push_back(
          vec_from_json(p.at("robot_tip_visible_mm")));
    }
    return gt;
  } catch (const json::exception& e) {
    throw IoError("malformed ground truth: " + std::string(e.what()));
  }
}

DatasetGroundTruth generate_dataset_volumes(
    const SynthConfig& cfg,
    const std::function<void(int, const Volume&)>& sink) {
  if (cfg.mode == DetectMode::Needle && !cfg.scene.needle)
    throw InvalidInput("generate_dataset: needle mode needs a needle in the scene");
  if (cfg.mode == DetectMode::Marker && !cfg.scene.ball)
    throw InvalidInput("generate_dataset: marker mode needs a ball in the scene");

  const Vec3 tracked0 = cfg.mode == DetectMode::Needle
                            ? cfg.scene.needle->tip
                            : cfg.scene.ball->center;
  TrajectorySpec traj = cfg.trajectory;
  traj.start = cfg.camera_to_robot.apply(tracked0);
  const std::vector<Vec3> robot_poses = make_trajectory(traj);
  const RigidTransform robot_to_camera = cfg.camera_to_robot.inverse();

  DatasetGroundTruth gt;
  gt.camera_to_robot = cfg.camera_to_robot;
  gt.galvo = cfg.galvo;
  gt.noise_sigma = cfg.noise_sigma;
  gt.seed = cfg.seed;
  gt.robot_poses = robot_poses;

  for (std::size_t i = 0; i < robot_poses.size(); ++i) {
    const Vec3 delta = robot_to_camera.apply(robot_poses[i]) - tracked0;
    Scene scene = cfg.scene;
    if (scene.needle) scene.needle->tip += delta;
    if (scene.ball) scene.ball->center += delta;

    auto [volume, truth] =
        render_scene(scene, cfg.geometry, cfg.galvo, cfg.noise_sigma,
                     mix_seed(cfg.seed, i));
    sink(static_cast<int>(i), volume);

    const Vec3 tracked = tracked0 + delta;
    Vec3 visible = tracked;
    if (cfg.mode == DetectMode::Needle && truth.needle_tip_visible)
      visible = *truth.needle_tip_visible;
    else if (cfg.mode == DetectMode::Marker && truth.ball_center)
      visible = *truth.ball_center;
    gt.camera_tips.push_back(tracked);
    gt.camera_tips_visible.push_back(visible);
    gt.robot_tips_visible.push_back(cfg.camera_to_robot.apply(visible));
  }
  return gt;
}

DatasetGroundTruth generate_dataset(const SynthConfig& cfg,
                                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  DatasetGroundTruth gt =
      generate_dataset_volumes(cfg, [&](int pose, const Volume& volume) {
        char name[32];
        std::snprintf(name, sizeof(name), "pose_%03d.oct", pose);
        save_volume(volume, out_dir / name);
      });

  std::ofstream csv(out_dir / "robot_poses.csv");
  if (!csv) throw IoError("cannot write robot_poses.csv");
  csv << "pose,x_mm,y_mm,z_mm\n";
  char buf[160];
  for (std::size_t i = 0; i < gt.robot_poses.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", i,
                  gt.robot_poses[i].x(), gt.robot_poses[i].y(),
                  gt.robot_poses[i].z());
    csv << buf;
  }
  if (!csv.flush()) throw IoError("failed to write robot_poses.csv");

  save_galvo_params(cfg.galvo, out_dir / "galvo.txt");
  save_ground_truth(gt, out_dir / "ground_truth.json");
  save_synth_config(cfg, out_dir / "config_used.json");
  return gt;
}

}  // namespace octcal
