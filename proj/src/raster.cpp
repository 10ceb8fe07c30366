#include "stormcast/raster.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

#include "stormcast/error.hpp"
#include "stormcast/log.hpp"

namespace stormcast {

void RasterStack::set_raster(std::size_t c, const Raster& r) {
  if (r.h != h || r.w != w || c >= channels)
    throw Error(Errc::shape, "raster does not fit stack channel " + std::to_string(c));
  std::copy(r.values.begin(), r.values.end(), channel(c).begin());
}

RasterStack RasterStack::from_rasters(std::span<const Raster> rasters) {
  if (rasters.empty()) throw Error(Errc::invalid_argument, "empty raster list");
  RasterStack s(rasters.size(), rasters[0].h, rasters[0].w);
  for (std::size_t c = 0; c < rasters.size(); ++c) s.set_raster(c, rasters[c]);
  return s;
}

namespace {
std::atomic<bool> g_warnings{true};
}

void warn(std::string_view message) {
  if (g_warnings.load()) std::cerr << "WARN: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

unsigned worker_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("STORMCAST_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

}  // namespace stormcast
