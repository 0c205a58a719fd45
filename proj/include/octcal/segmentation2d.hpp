#pragma once

#include <filesystem>
#include <vector>

#include "octcal/common.hpp"
#include "octcal/volume.hpp"

namespace octcal {

/// Binary image, one byte per pixel (0 or 1), row-major.
struct Mask2D {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> v;

  Mask2D() = default;
  Mask2D(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0) {}

  std::uint8_t operator()(int r, int c) const {
    return v[static_cast<std::size_t>(r) * cols + c];
  }
  std::uint8_t& operator()(int r, int c) {
    return v[static_cast<std::size_t>(r) * cols + c];
  }
  std::size_t count() const;

  bool operator==(const Mask2D&) const = default;
};

/// Tunables for the per-B-scan needle labeling pipeline.
struct SegmentationParams {
  double k = 2.0;               ///< adaptive threshold: mean + k * sigma
  int median_window = 3;        ///< median filter window (odd)
  int gaussian_window = 5;      ///< Gaussian window (odd)
  double gaussian_sigma = 1.0;  ///< Gaussian width in px
  double d_tol_px = 2.0;        ///< ellipse boundary membership band
  int contour_jump_px = 4;      ///< axial jump that splits a contour group
};

/// Population mean + k * standard deviation of an image's intensities.
double mean_plus_k_sigma(ConstImageView img, double k);

/// Foreground = pixels strictly above the image's mean + k * sigma.
Mask2D adaptive_threshold(ConstImageView img, double k = 2.0);

/// Median filter then Gaussian blur on the 0/1 image, re-binarized at 0.5.
/// Outside-image pixels are treated as background.
Mask2D denoise(const Mask2D& mask, int median_window = 3,
               int gaussian_window = 5, double gaussian_sigma = 1.0);

/// One laterally connected run of topmost-contour pixels (ix, iz),
/// sorted by ix with consecutive ix differing by 1.
struct ContourGroup {
  std::vector<Eigen::Vector2i> pixels;
};

/// Per column, the shallowest foreground pixel; maximal runs of laterally
/// adjacent hits form groups, ordered left to right.
std::vector<ContourGroup> extract_topmost_contours(const Mask2D& mask);

/// Splits groups additionally where the contour depth jumps by more than
/// jump_px between adjacent columns, so occlusion boundaries (e.g. needle
/// edge over tissue) separate into distinct groups.
std::vector<ContourGroup> split_groups_on_axial_jump(
    std::vector<ContourGroup> groups, int jump_px);

/// Geometric ellipse parameters in pixel units.
struct EllipseParams {
  Vec2 center;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double tilt = 0.0;  ///< radians, in (-pi/2, pi/2]
};

/// Direct least-squares conic fit constrained to ellipses. Throws
/// InvalidInput for fewer than 5 pixels, DegenerateInput when no valid
/// ellipse exists.
EllipseParams fit_ellipse(const ContourGroup& group);

/// Evaluates the ellipse's implicit conic and its first-order geometric
/// distance (|Q| / |grad Q|) at a point.
double ellipse_boundary_distance(const EllipseParams& e, const Vec2& p);

/// Result of the needle labeling pipeline for one B-scan.
struct LabeledBScan {
  Mask2D foreground;  ///< denoised foreground mask
  Mask2D needle;      ///< subset of foreground near an accepted ellipse
};

/// Full per-B-scan pipeline: adaptive threshold, denoise, topmost contours,
/// per-group ellipse fit; accepts ellipses whose minor axis (2 * semi_minor)
/// is below m_e_px and flags foreground pixels within d_tol of an accepted
/// boundary.
LabeledBScan label_needle_pixels(ConstImageView bscan, double m_e_px,
                                 const SegmentationParams& params = {});

/// Writes foreground/needle labels as an 8-bit PGM image
/// (0 background, 128 foreground, 255 needle).
void save_label_image(const LabeledBScan& labels,
                      const std::filesystem::path& path);

}  // namespace octcal
