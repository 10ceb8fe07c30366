#pragma once

// On-disk formats: SCR1 raster stacks, lightning event CSV, SCKP model
// checkpoints and preprocessed sample directories. All binary fields are
// little-endian regardless of host.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stormcast/model.hpp"
#include "stormcast/preprocess.hpp"
#include "stormcast/raster.hpp"
#include "stormcast/training.hpp"

namespace stormcast {

namespace fs = std::filesystem;

// SCR1: "SCR1", u32 channels, u32 H, u32 W, then C*H*W float32 row-major,
// channel-major. Values are widened to double on read.
std::vector<std::uint8_t> encode_raster(const RasterStack& stack);
RasterStack decode_raster(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");
void write_raster(const fs::path& path, const RasterStack& stack);
RasterStack read_raster(const fs::path& path);

// Header "timestamp,row,col"; rows sorted by timestamp. When h and w are
// non-zero, positions outside the frame raise Errc::parse.
void write_events(const fs::path& path, std::span<const LightningEvent> events);
std::vector<LightningEvent> read_events(const fs::path& path, std::size_t h = 0, std::size_t w = 0);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig model;
  NormStats stats;
  double pos_weight = 0.0;
  std::vector<std::pair<std::string, std::string>> train_config;  // echo of the effective settings
};

std::vector<std::pair<std::string, std::string>> describe(const TrainConfig& c);

std::vector<std::uint8_t> encode_checkpoint(Model& model, const CheckpointMeta& meta);
void save_checkpoint(const fs::path& path, Model& model, const CheckpointMeta& meta);

// Header only (no model needed).
CheckpointMeta read_checkpoint_meta(const fs::path& path);

// Restores parameters, running statistics and the batchnorm-initialized flag
// into an existing model. Blobs are checked in file order: a blob whose shape
// differs from the model's raises Errc::shape_mismatch naming it; a model
// tensor absent from the file raises Errc::missing_blob.
CheckpointMeta load_checkpoint(const fs::path& path, Model& model);
CheckpointMeta decode_checkpoint(std::span<const std::uint8_t> bytes, Model& model);

// Builds the model described by the checkpoint header, then loads it.
std::pair<Model, CheckpointMeta> load_model(const fs::path& path);

// ---------------------------------------------------------------------------
// Frame and sample directories

// "frame_YYYYMMDDTHHMM.scr" files of a directory, sorted by time.
std::vector<std::pair<Timestamp, fs::path>> list_frames(const fs::path& dir);
fs::path frame_path(const fs::path& dir, Timestamp t);

// Preprocessed samples: features_<stamp>.scr (raw, ten channels),
// target_<stamp>.scr (one channel) and index.csv listing the timestamps.
void write_samples(const fs::path& dir, std::span<const FrameSample> samples);
std::vector<FrameSample> read_samples(const fs::path& dir);

void write_norm_stats(const fs::path& path, const NormStats& stats);

}  // namespace stormcast
