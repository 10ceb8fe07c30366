#pragma once

// Synthetic storm sequences: Gaussian cells advecting over nine correlated
// "satellite" channels, with lightning concentrated in freshly initiated
// cells (the part a persistence/advection nowcast cannot anticipate).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "stormcast/config.hpp"
#include "stormcast/preprocess.hpp"
#include "stormcast/raster.hpp"
#include "stormcast/timeutil.hpp"

namespace stormcast {

struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 9;
  std::size_t frames = 480;
  Timestamp start = Timestamp{std::chrono::sys_days{std::chrono::year{2017} / 6 / 1}};

  std::size_t initial_blobs = 6;    // mature cells present at the first frame
  double amplitude = 1.0;           // peak latent intensity
  double blob_sigma = 3.0;          // px
  double velocity_row = 1.0;        // px per 15-min step
  double velocity_col = 0.5;
  // New cells per step per 64x64 pixels. Negative means "derive from
  // positive_fraction".
  double initiation_rate = -1.0;
  double positive_fraction = 0.001;  // target share of positive target pixels
  int lifetime = 12;                 // steps at full amplitude before decaying
  double decay = 0.8;                // amplitude factor per step after lifetime

  double lightning_rate = 8.0;       // mean events per step of a newly initiated cell
  double mature_lightning_rate = 0.001;  // mean events per step of an older cell
  double lightning_jitter = 0.35;    // px, spread of strike positions around the cell core
  double intensity_threshold = 0.5;  // events only where latent intensity exceeds this

  double noise = 0.01;               // per-pixel channel noise (std)
  double drop_probability = 0.0;     // frames omitted from the output
  std::uint64_t seed = 1;

  // Throws Errc::invalid_argument.
  void validate() const;
  static SynthConfig from(KeyValueConfig& kv);
  // Initiation rate actually used (resolves the automatic setting).
  double effective_initiation_rate() const;
};

struct SynthFrame {
  Timestamp time;
  RasterStack stack;
};

struct SynthSequence {
  std::vector<SynthFrame> frames;         // dropped frames are absent
  std::vector<LightningEvent> events;     // sorted by time
  std::size_t dropped = 0;
};

SynthSequence gen_sequence(const SynthConfig& config);

// frame_<stamp>.scr files plus events.csv.
void write_sequence(const std::filesystem::path& dir, const SynthSequence& seq);

}  // namespace stormcast
