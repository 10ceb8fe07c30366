#pragma once

// Feature stacks, lightning maps, targets and the frame tiling used for
// training and stitched inference.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "stormcast/flow.hpp"
#include "stormcast/raster.hpp"
#include "stormcast/tensor.hpp"
#include "stormcast/timeutil.hpp"

namespace stormcast {

inline constexpr std::size_t kErrorChannels = 9;
inline constexpr std::size_t kFeatureChannels = 10;
inline constexpr std::size_t kLightningChannel = 9;
inline constexpr double kLightningClip = 10.0;

struct LightningEvent {
  Timestamp time;
  long row = 0;
  long col = 0;
  friend bool operator==(const LightningEvent&, const LightningEvent&) = default;
};

struct Accumulation {
  Raster counts;
  std::size_t rejected = 0;  // events inside the window but outside the frame
};

// Per-cell event counts over the half-open window [start, end). Events must
// be sorted by time (Errc::invalid_argument otherwise).
Accumulation accumulate_lightning(std::span<const LightningEvent> events, Timestamp start, Timestamp end,
                                  std::size_t h, std::size_t w);

// Lightning observed during the 15 minutes before t: [t - 15 min, t).
Accumulation lightning_feature_counts(std::span<const LightningEvent> events, Timestamp t, std::size_t h,
                                      std::size_t w);

// 1 where at least one event falls in [t, t + 15 min), else 0.
Raster build_target(std::span<const LightningEvent> events, Timestamp t, std::size_t h, std::size_t w,
                    std::size_t* rejected = nullptr);

struct NormStats {
  std::vector<double> min;
  std::vector<double> max;

  static NormStats empty(std::size_t channels);
  void accumulate(const RasterStack& stack);
  bool valid() const { return !min.empty() && min.size() == max.size(); }
};

// Channels 0-8 hold raw nowcast errors; channel 9 holds lightning counts
// clipped at 10 and divided by 10. Values are not yet min-max normalized.
RasterStack raw_feature_stack(std::span<const Raster> error_rasters, const Raster& lightning_counts);

// (x - min) / (max - min) clamped to [0, 1]; constant channels become zero.
RasterStack normalize(const RasterStack& raw, const NormStats& stats);

// raw_feature_stack followed by normalize.
RasterStack assemble_stack(std::span<const Raster> error_rasters, const Raster& lightning_counts,
                           const NormStats& stats);

// Nine nowcast-error rasters (one per satellite channel) plus the lightning
// counts of the preceding window, before normalization.
RasterStack compute_raw_features(const RasterStack& frame_m30, const RasterStack& frame_m15,
                                 const RasterStack& frame_0, std::span<const LightningEvent> events, Timestamp t,
                                 const FlowParams& flow = {});

// One preprocessed frame: raw (unnormalized) ten-channel features and the
// binary target of the following window.
struct FrameSample {
  Timestamp time;
  RasterStack features;
  Raster target;
};

struct FrameRef {
  Timestamp time;
  const RasterStack* stack;
};

// Builds a sample for every frame whose two predecessors (t - 15 min and
// t - 30 min) exist; frames lacking them are skipped and counted in *skipped.
// Frames must be sorted by time.
std::vector<FrameSample> preprocess_frames(std::span<const FrameRef> frames, std::span<const LightningEvent> events,
                                           const FlowParams& flow = {}, std::size_t* skipped = nullptr);

struct TileGeometry {
  std::size_t tile_h = 144;
  std::size_t tile_w = 160;
};

struct TileIndex {
  Timestamp time{};
  std::size_t tile_row = 0;
  std::size_t tile_col = 0;
  std::size_t r0 = 0;
  std::size_t c0 = 0;
  friend bool operator==(const TileIndex&, const TileIndex&) = default;
};

// Tile count and stride along one axis: the smallest count that covers the
// frame with a uniform integer stride (1114/160 -> 7 @ 159, 956/144 -> 8 @ 116).
std::pair<std::size_t, std::size_t> tile_axis(std::size_t frame, std::size_t tile);

std::vector<TileIndex> tile_grid(std::size_t frame_h, std::size_t frame_w, const TileGeometry& g,
                                 Timestamp time = {});

struct TiledFrame {
  std::vector<RasterStack> tiles;
  std::vector<TileIndex> index;
};

TiledFrame tile_frame(const RasterStack& frame, const TileGeometry& g, Timestamp time = {});

// Overlapping pixels take the maximum over tiles. Throws Errc::invalid_argument
// when the tile set does not match the grid for the frame.
Raster stitch_predictions(std::span<const Raster> tiles, std::span<const TileIndex> index, std::size_t frame_h,
                          std::size_t frame_w, const TileGeometry& g);

// Stacks equally shaped rasters into a [B, C, H, W] tensor.
Tensor make_batch(std::span<const RasterStack> samples);

}  // namespace stormcast
