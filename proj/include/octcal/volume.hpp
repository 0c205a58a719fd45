#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "octcal/common.hpp"

namespace octcal {

/// Physical scan geometry of a volume: metric extents and sample counts.
/// Axis convention: x is lateral within a B-scan, z is depth (increasing into
/// the scene), y runs across B-scans.
struct ScanGeometry {
  double extent_x_mm = 3.01;
  double extent_y_mm = 3.10;
  double extent_z_mm = 2.60;
  int n_x = 512;  ///< lateral samples per B-scan
  int n_y = 128;  ///< number of B-scans
  int n_z = 512;  ///< axial samples per A-scan

  double pitch_x() const { return extent_x_mm / n_x; }
  double pitch_y() const { return extent_y_mm / n_y; }
  double pitch_z() const { return extent_z_mm / n_z; }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(n_x) * static_cast<std::size_t>(n_y) *
           static_cast<std::size_t>(n_z);
  }

  /// Throws InvalidInput unless extents are positive and counts >= 2.
  void validate() const;

  bool operator==(const ScanGeometry&) const = default;
};

/// Non-owning view of one grayscale image (rows x cols, contiguous row-major).
struct ConstImageView {
  const std::uint8_t* data = nullptr;
  int rows = 0;
  int cols = 0;

  std::uint8_t operator()(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  std::size_t size() const {
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
};

/// A stack of 8-bit B-scans with physical geometry. Voxels are stored in
/// (iy, iz, ix) row-major order so one B-scan is contiguous. Treat instances
/// as immutable once filled; readers may then share them across threads.
class Volume {
 public:
  explicit Volume(const ScanGeometry& g);

  const ScanGeometry& geometry() const { return geom_; }

  std::uint8_t at(int iy, int iz, int ix) const {
    return voxels_[index(iy, iz, ix)];
  }
  std::uint8_t& at(int iy, int iz, int ix) { return voxels_[index(iy, iz, ix)]; }

  /// Contiguous n_z x n_x view of B-scan iy.
  ConstImageView bscan(int iy) const;

  /// Center-of-voxel physical position in mm. Throws on out-of-range indices.
  Vec3 voxel_to_mm(int ix, int iy, int iz) const;

  /// Nearest voxel of a physical position; inverse of voxel_to_mm on centers.
  /// May return indices outside the grid for out-of-field positions.
  Eigen::Vector3i mm_to_voxel(const Vec3& p_mm) const;

  bool in_range(int iy, int iz, int ix) const {
    return iy >= 0 && iy < geom_.n_y && iz >= 0 && iz < geom_.n_z && ix >= 0 &&
           ix < geom_.n_x;
  }

  std::vector<std::uint8_t>& data() { return voxels_; }
  const std::vector<std::uint8_t>& data() const { return voxels_; }

  bool operator==(const Volume&) const = default;

 private:
  std::size_t index(int iy, int iz, int ix) const {
    return (static_cast<std::size_t>(iy) * geom_.n_z +
            static_cast<std::size_t>(iz)) *
               geom_.n_x +
           static_cast<std::size_t>(ix);
  }

  ScanGeometry geom_;
  std::vector<std::uint8_t> voxels_;
};

/// Reads the text header at `path` and the companion raw file `path + ".raw"`.
/// Throws IoError on missing files, malformed headers, or size mismatch.
Volume load_volume(const std::filesystem::path& path);

/// Writes the text header to `path` and the voxels to `path + ".raw"`.
/// load_volume(path) reproduces the volume bit-exactly.
void save_volume(const Volume& v, const std::filesystem::path& path);

}  // namespace octcal
