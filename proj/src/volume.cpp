#include "octcal/volume.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace octcal {

void ScanGeometry::validate() const {
  if (!(extent_x_mm > 0) || !(extent_y_mm > 0) || !(extent_z_mm > 0))
    throw InvalidInput("ScanGeometry: extents must be positive");
  if (n_x < 2 || n_y < 2 || n_z < 2)
    throw InvalidInput("ScanGeometry: sample counts must be >= 2");
  if (!std::isfinite(pitch_x()) || !std::isfinite(pitch_y()) ||
      !std::isfinite(pitch_z()))
    throw InvalidInput("ScanGeometry: voxel pitch is not finite");
}

Volume::Volume(const ScanGeometry& g) : geom_(g) {
  geom_.validate();
  voxels_.assign(geom_.voxel_count(), 0);
}

ConstImageView Volume::bscan(int iy) const {
  if (iy < 0 || iy >= geom_.n_y) throw InvalidInput("bscan index out of range");
  return ConstImageView{voxels_.data() + static_cast<std::size_t>(iy) *
                                             geom_.n_z * geom_.n_x,
                        geom_.n_z, geom_.n_x};
}

Vec3 Volume::voxel_to_mm(int ix, int iy, int iz) const {
  if (!in_range(iy, iz, ix)) throw InvalidInput("voxel index out of range");
  return Vec3((ix + 0.5) * geom_.pitch_x(), (iy + 0.5) * geom_.pitch_y(),
              (iz + 0.5) * geom_.pitch_z());
}

Eigen::Vector3i Volume::mm_to_voxel(const Vec3& p_mm) const {
  auto idx = [](double v, double pitch) {
    return static_cast<int>(std::lround(v / pitch - 0.5));
  };
  return Eigen::Vector3i(idx(p_mm.x(), geom_.pitch_x()),
                         idx(p_mm.y(), geom_.pitch_y()),
                         idx(p_mm.z(), geom_.pitch_z()));
}

namespace {

std::filesystem::path raw_path(const std::filesystem::path& header) {
  std::filesystem::path p = header;
  p += ".raw";
  return p;
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream hdr(path);
  if (!hdr) throw IoError("cannot open volume header: " + path.string());

  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(hdr, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key, value;
    if (ss >> key >> value) kv[key] = value;
  }

  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end())
      throw IoError(std::string("volume header missing field: ") + key);
    return it->second;
  };

  ScanGeometry g;
  try {
    g.n_x = std::stoi(get("n_x"));
    g.n_y = std::stoi(get("n_y"));
    g.n_z = std::stoi(get("n_z"));
    g.extent_x_mm = std::stod(get("extent_x_mm"));
    g.extent_y_mm = std::stod(get("extent_y_mm"));
    g.extent_z_mm = std::stod(get("extent_z_mm"));
  } catch (const std::logic_error&) {
    throw IoError("volume header has a malformed numeric field: " +
                  path.string());
  }
  try {
    g.validate();
  } catch (const InvalidInput& e) {
    throw IoError(std::string("volume header invalid: ") + e.what());
  }

  Volume v(g);
  std::ifstream raw(raw_path(path), std::ios::binary);
  if (!raw) throw IoError("cannot open raw voxel file: " + raw_path(path).string());
  raw.seekg(0, std::ios::end);
  auto file_size = static_cast<std::uint64_t>(raw.tellg());
  if (file_size != g.voxel_count())
    throw IoError("raw voxel file size mismatch: expected " +
                  std::to_string(g.voxel_count()) + " bytes, found " +
                  std::to_string(file_size));
  raw.seekg(0, std::ios::beg);
  raw.read(reinterpret_cast<char*>(v.data().data()),
           static_cast<std::streamsize>(v.data().size()));
  if (!raw) throw IoError("failed to read raw voxel file");
  return v;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  const ScanGeometry& g = v.geometry();
  std::ofstream hdr(path);
  if (!hdr) throw IoError("cannot write volume header: " + path.string());
  char buf[64];
  auto fmt = [&](double d) {
    std::snprintf(buf, sizeof(buf), "%.9g", d);
    return std::string(buf);
  };
  hdr << "n_x " << g.n_x << "\n"
      << "n_y " << g.n_y << "\n"
      << "n_z " << g.n_z << "\n"
      << "extent_x_mm " << fmt(g.extent_x_mm) << "\n"
      << "extent_y_mm " << fmt(g.extent_y_mm) << "\n"
      << "extent_z_mm " << fmt(g.extent_z_mm) << "\n";
  if (!hdr.flush()) throw IoError("failed to write volume header");

  std::ofstream raw(raw_path(path), std::ios::binary);
  if (!raw) throw IoError("cannot write raw voxel file");
  raw.write(reinterpret_cast<const char*>(v.data().data()),
            static_cast<std::streamsize>(v.data().size()));
  if (!raw.flush()) throw IoError("failed to write raw voxel file");
}

}  // namespace octcal
