#include "stormcast/preprocess.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "stormcast/error.hpp"
#include "stormcast/log.hpp"
#include "stormcast/parallel.hpp"

namespace stormcast {

namespace {

void require_sorted(std::span<const LightningEvent> events) {
  const bool sorted = std::is_sorted(events.begin(), events.end(),
                                     [](const LightningEvent& a, const LightningEvent& b) { return a.time < b.time; });
  if (!sorted) throw Error(Errc::invalid_argument, "lightning events must be sorted by time");
}

}  // namespace

Accumulation accumulate_lightning(std::span<const LightningEvent> events, Timestamp start, Timestamp end,
                                  std::size_t h, std::size_t w) {
  require_sorted(events);
  Accumulation acc{Raster(h, w), 0};
  auto first = std::lower_bound(events.begin(), events.end(), start,
                                [](const LightningEvent& e, Timestamp t) { return e.time < t; });
  for (auto it = first; it != events.end() && it->time < end; ++it) {
    if (it->row < 0 || it->col < 0 || it->row >= long(h) || it->col >= long(w)) {
      ++acc.rejected;
      continue;
    }
    acc.counts(static_cast<std::size_t>(it->row), static_cast<std::size_t>(it->col)) += 1.0;
  }
  return acc;
}

Accumulation lightning_feature_counts(std::span<const LightningEvent> events, Timestamp t, std::size_t h,
                                      std::size_t w) {
  return accumulate_lightning(events, t - kFrameStep, t, h, w);
}

Raster build_target(std::span<const LightningEvent> events, Timestamp t, std::size_t h, std::size_t w,
                    std::size_t* rejected) {
  Accumulation acc = accumulate_lightning(events, t, t + kFrameStep, h, w);
  for (double& v : acc.counts.values) v = v > 0.0 ? 1.0 : 0.0;
  if (rejected) *rejected = acc.rejected;
  return std::move(acc.counts);
}

NormStats NormStats::empty(std::size_t channels) {
  return {std::vector<double>(channels, std::numeric_limits<double>::infinity()),
          std::vector<double>(channels, -std::numeric_limits<double>::infinity())};
}

void NormStats::accumulate(const RasterStack& stack) {
  if (min.size() != stack.channels) throw Error(Errc::shape, "norm stats channel count mismatch");
  for (std::size_t c = 0; c < stack.channels; ++c) {
    const auto [lo, hi] = std::minmax_element(stack.channel(c).begin(), stack.channel(c).end());
    min[c] = std::min(min[c], *lo);
    max[c] = std::max(max[c], *hi);
  }
}

RasterStack raw_feature_stack(std::span<const Raster> error_rasters, const Raster& lightning_counts) {
  if (error_rasters.size() != kErrorChannels)
    throw Error(Errc::invalid_argument, "expected " + std::to_string(kErrorChannels) + " error channels, got " +
                                            std::to_string(error_rasters.size()));
  RasterStack stack(kFeatureChannels, lightning_counts.h, lightning_counts.w);
  for (std::size_t c = 0; c < kErrorChannels; ++c) stack.set_raster(c, error_rasters[c]);
  auto lightning = stack.channel(kLightningChannel);
  for (std::size_t i = 0; i < lightning.size(); ++i)
    lightning[i] = std::min(lightning_counts.values[i], kLightningClip) / kLightningClip;
  return stack;
}

RasterStack normalize(const RasterStack& raw, const NormStats& stats) {
  if (!stats.valid() || stats.min.size() != raw.channels)
    throw Error(Errc::invalid_argument, "norm stats do not cover " + std::to_string(raw.channels) + " channels");
  RasterStack out = raw;
  for (std::size_t c = 0; c < raw.channels; ++c) {
    auto ch = out.channel(c);
    const double lo = stats.min[c];
    const double span = stats.max[c] - lo;
    if (!(span > 0.0)) {
      warn("channel " + std::to_string(c) + " is constant in the training statistics; emitting zeros");
      std::fill(ch.begin(), ch.end(), 0.0);
      continue;
    }
    for (double& v : ch) v = std::clamp((v - lo) / span, 0.0, 1.0);
  }
  return out;
}

RasterStack assemble_stack(std::span<const Raster> error_rasters, const Raster& lightning_counts,
                           const NormStats& stats) {
  return normalize(raw_feature_stack(error_rasters, lightning_counts), stats);
}

RasterStack compute_raw_features(const RasterStack& frame_m30, const RasterStack& frame_m15,
                                 const RasterStack& frame_0, std::span<const LightningEvent> events, Timestamp t,
                                 const FlowParams& flow) {
  for (const RasterStack* f : {&frame_m30, &frame_m15, &frame_0}) {
    if (f->channels != kErrorChannels)
      throw Error(Errc::invalid_argument, "satellite frames must carry " + std::to_string(kErrorChannels) +
                                              " channels, got " + std::to_string(f->channels));
    if (f->h != frame_0.h || f->w != frame_0.w) throw Error(Errc::shape, "satellite frames differ in size");
  }
  std::vector<Raster> errors(kErrorChannels);
  parallel_for(kErrorChannels, [&](std::size_t c) {
    errors[c] = nowcast_error(frame_m30.raster(c), frame_m15.raster(c), frame_0.raster(c), flow);
  });
  const Accumulation counts = lightning_feature_counts(events, t, frame_0.h, frame_0.w);
  return raw_feature_stack(errors, counts.counts);
}

std::pair<std::size_t, std::size_t> tile_axis(std::size_t frame, std::size_t tile) {
  if (tile == 0 || frame < tile)
    throw Error(Errc::shape, "frame side " + std::to_string(frame) + " smaller than tile side " + std::to_string(tile));
  const std::size_t extra = frame - tile;
  if (extra == 0) return {1, 0};
  for (std::size_t n = (extra + tile - 1) / tile + 1;; ++n) {
    if (extra % (n - 1) == 0) return {n, extra / (n - 1)};
  }
}

std::vector<TileIndex> tile_grid(std::size_t frame_h, std::size_t frame_w, const TileGeometry& g, Timestamp time) {
  const auto [rows, row_stride] = tile_axis(frame_h, g.tile_h);
  const auto [cols, col_stride] = tile_axis(frame_w, g.tile_w);
  std::vector<TileIndex> grid;
  grid.reserve(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) grid.push_back({time, i, j, i * row_stride, j * col_stride});
  return grid;
}

TiledFrame tile_frame(const RasterStack& frame, const TileGeometry& g, Timestamp time) {
  TiledFrame out;
  out.index = tile_grid(frame.h, frame.w, g, time);
  out.tiles.reserve(out.index.size());
  for (const TileIndex& t : out.index) {
    RasterStack tile(frame.channels, g.tile_h, g.tile_w);
    for (std::size_t c = 0; c < frame.channels; ++c) {
      const auto src = frame.channel(c);
      auto dst = tile.channel(c);
      for (std::size_t r = 0; r < g.tile_h; ++r) {
        const auto row = src.subspan((t.r0 + r) * frame.w + t.c0, g.tile_w);
        std::copy(row.begin(), row.end(), dst.begin() + static_cast<long>(r * g.tile_w));
      }
    }
    out.tiles.push_back(std::move(tile));
  }
  return out;
}

Raster stitch_predictions(std::span<const Raster> tiles, std::span<const TileIndex> index, std::size_t frame_h,
                          std::size_t frame_w, const TileGeometry& g) {
  const auto grid = tile_grid(frame_h, frame_w, g);
  if (tiles.size() != index.size()) throw Error(Errc::invalid_argument, "tile and index counts differ");
  std::vector<int> seen(grid.size(), 0);
  const std::size_t cols = grid.back().tile_col + 1;
  Raster out(frame_h, frame_w, -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const TileIndex& t = index[k];
    const std::size_t slot = t.tile_row * cols + t.tile_col;
    if (slot >= grid.size() || grid[slot].r0 != t.r0 || grid[slot].c0 != t.c0)
      throw Error(Errc::invalid_argument, "tile (" + std::to_string(t.tile_row) + "," + std::to_string(t.tile_col) +
                                              ") does not belong to the frame grid");
    if (tiles[k].h != g.tile_h || tiles[k].w != g.tile_w) throw Error(Errc::shape, "tile has wrong dimensions");
    ++seen[slot];
    for (std::size_t r = 0; r < g.tile_h; ++r)
      for (std::size_t c = 0; c < g.tile_w; ++c) {
        double& dst = out(t.r0 + r, t.c0 + c);
        dst = std::max(dst, tiles[k](r, c));
      }
  }
  for (std::size_t s = 0; s < seen.size(); ++s)
    if (seen[s] != 1)
      throw Error(Errc::invalid_argument, "tile (" + std::to_string(grid[s].tile_row) + "," +
                                              std::to_string(grid[s].tile_col) + ") " +
                                              (seen[s] == 0 ? "missing" : "duplicated"));
  return out;
}

Tensor make_batch(std::span<const RasterStack> samples) {
  if (samples.empty()) throw Error(Errc::invalid_argument, "empty batch");
  const RasterStack& first = samples[0];
  const Shape shape{samples.size(), first.channels, first.h, first.w};
  std::vector<double> values;
  values.reserve(shape.size());
  for (const RasterStack& s : samples) {
    if (s.channels != first.channels || s.h != first.h || s.w != first.w)
      throw Error(Errc::shape, "batch samples differ in shape");
    values.insert(values.end(), s.values.begin(), s.values.end());
  }
  return Tensor(shape, std::move(values));
}

std::vector<FrameSample> preprocess_frames(std::span<const FrameRef> frames, std::span<const LightningEvent> events,
                                           const FlowParams& flow, std::size_t* skipped) {
  std::size_t missing = 0;
  std::vector<FrameSample> out;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (k > 0 && frames[k].time <= frames[k - 1].time)
      throw Error(Errc::invalid_argument, "frames must be sorted by time without duplicates");
    // Predecessors sit at most two positions back when no frame is missing.
    const RasterStack* m15 = nullptr;
    const RasterStack* m30 = nullptr;
    for (std::size_t back = 1; back <= 2 && back <= k; ++back) {
      const FrameRef& p = frames[k - back];
      if (p.time == frames[k].time - kFrameStep) m15 = p.stack;
      if (p.time == frames[k].time - 2 * kFrameStep) m30 = p.stack;
    }
    if (!m15 || !m30) {
      ++missing;
      continue;
    }
    const RasterStack& now = *frames[k].stack;
    FrameSample s;
    s.time = frames[k].time;
    s.features = compute_raw_features(*m30, *m15, now, events, s.time, flow);
    s.target = build_target(events, s.time, now.h, now.w);
    out.push_back(std::move(s));
  }
  if (skipped) *skipped = missing;
  return out;
}

}  // namespace stormcast
