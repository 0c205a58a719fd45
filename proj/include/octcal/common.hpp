#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace octcal {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File or stream level failure (missing file, size mismatch, bad header).
struct IoError : Error {
  using Error::Error;
};

/// Input violates an operation precondition (too few points, bad index, ...).
struct InvalidInput : Error {
  using Error::Error;
};

/// Geometric configuration admits no unique solution (collinear points, ...).
struct DegenerateInput : Error {
  using Error::Error;
};

/// Needle voting found no cluster with a positive vote count.
struct NoNeedleEvidence : Error {
  using Error::Error;
};

/// SplitMix64 step; used to derive independent per-stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Runs fn(i) for i in [0, n). Work is chunked over hardware threads; fn must
/// write only to per-index slots so the result is schedule independent.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  int n_threads = std::max(1, std::min(hw, n));
  if (n_threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += n_threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace octcal
