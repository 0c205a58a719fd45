#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "octcal/common.hpp"
#include "octcal/volume.hpp"

namespace octcal {

/// Virtual pivot centers of the two scan mirrors, in mm. x_c / y_c are the
/// lateral pivot coordinates; z_xc / z_yc are the pivot depths as fitted from
/// flat-surface arcs (positive magnitudes; the physical pivots sit above the
/// volume at z = -z_xc and z = -z_yc).
struct GalvoParams {
  double x_c = 0.0;
  double z_xc = 0.0;
  double y_c = 0.0;
  double z_yc = 0.0;
};

/// Throws InvalidInput unless both pivot depths clear the axial extent, which
/// keeps the correction map injective over the scan field.
void validate_galvo(const GalvoParams& g, const ScanGeometry& geom);

GalvoParams load_galvo_params(const std::filesystem::path& path);
void save_galvo_params(const GalvoParams& g, const std::filesystem::path& path);

struct CircleFit {
  Vec2 center;
  double radius = 0.0;
  double rms_residual = 0.0;  ///< RMS of radial residuals
};

/// Algebraic least-squares circle through 2D points. Throws InvalidInput for
/// fewer than 3 points, DegenerateInput for collinear configurations.
CircleFit fit_circle(std::span<const Vec2> points);

/// For each lateral column of a B-scan, the shallowest pixel with intensity
/// >= threshold, reported as (x_mm, z_mm) voxel centers. Columns without a
/// hit are omitted.
std::vector<Vec2> detect_top_surface(ConstImageView bscan, double pitch_lateral,
                                     double pitch_axial, double threshold);

/// Estimates pivot centers from two flat-surface volumes: (x_c, z_xc) from
/// per-B-scan circle fits of flat_x, (y_c, z_yc) from per-lateral-slice fits
/// of flat_y (the volume resampled into y-z images). The per-slice surface
/// threshold is the slice's adaptive mean + k*sigma value.
GalvoParams calibrate_galvo(const Volume& flat_x, const Volume& flat_y,
                            double threshold_k = 2.0);

/// Fan-distortion correction: maps a raw-volume position to metric space.
/// The M_x unwarp runs first (producing an intermediate depth), then the M_y
/// unwarp. Points on the pivot column x = x_c (resp. row y = y_c) are fixed.
Vec3 correct_point(const Vec3& p_mm, const GalvoParams& g);

/// Exact inverse of correct_point: metric position to raw-volume coordinates.
/// Throws DegenerateInput outside the invertible region.
Vec3 distort_point(const Vec3& p_mm, const GalvoParams& g);

}  // namespace octcal
