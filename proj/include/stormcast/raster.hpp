#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stormcast {

// Single-channel row-major grid on the satellite pixel lattice.
struct Raster {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> values;

  Raster() = default;
  Raster(std::size_t rows, std::size_t cols, double fill = 0.0) : h(rows), w(cols), values(rows * cols, fill) {}
  Raster(std::size_t rows, std::size_t cols, std::vector<double> v) : h(rows), w(cols), values(std::move(v)) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * w + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * w + c]; }
  std::size_t size() const { return values.size(); }
  bool same_dims(const Raster& o) const { return h == o.h && w == o.w; }
};

// Channel-major stack of equally sized rasters (the on-disk unit).
struct RasterStack {
  std::size_t channels = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> values;

  RasterStack() = default;
  RasterStack(std::size_t c, std::size_t rows, std::size_t cols)
      : channels(c), h(rows), w(cols), values(c * rows * cols, 0.0) {}

  std::span<double> channel(std::size_t c) { return {values.data() + c * h * w, h * w}; }
  std::span<const double> channel(std::size_t c) const { return {values.data() + c * h * w, h * w}; }

  Raster raster(std::size_t c) const {
    auto ch = channel(c);
    return Raster(h, w, std::vector<double>(ch.begin(), ch.end()));
  }
  void set_raster(std::size_t c, const Raster& r);
  static RasterStack from_rasters(std::span<const Raster> rasters);
};

}  // namespace stormcast
