#pragma once

// Deep-supervised weighted-BCE training with a plateau learning-rate
// schedule, and temporal cross-validation folds with exclusion margins.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stormcast/config.hpp"
#include "stormcast/evaluation.hpp"
#include "stormcast/model.hpp"
#include "stormcast/preprocess.hpp"
#include "stormcast/timeutil.hpp"

namespace stormcast {

struct TrainConfig {
  int epochs = 30;
  double lr0 = 0.01;
  double lr_drop_factor = 10.0;
  int plateau_window = 5;
  double plateau_threshold = 0.01;  // relative improvement
  double weight_decay = 0.1;
  std::size_t frames_per_batch = 2;  // 2 frames x 56 tiles = 112 samples
  std::optional<double> pos_weight;  // derived from the training targets when unset
  std::uint64_t seed = 0;
  int eval_every = 5;
  double threshold = 0.5;
  TileGeometry geometry{};
  hours margin{12};

  // Throws Errc::invalid_argument when an invariant is violated.
  void validate() const;
  // Reads the training keys only. Model keys (variant, base_width) and the
  // unknown-key check are left to the caller.
  static TrainConfig from(KeyValueConfig& kv);
};

// ---------------------------------------------------------------------------
// Loss

// Same as the tensor op; re-exported here for discoverability.
using stormcast::weighted_bce;

// #negative / #positive pixels over all targets; throws
// Errc::invalid_argument when there is no positive pixel.
double class_weight(std::span<const Raster> targets);

// Sum of weighted_bce over every head.
Tensor deep_loss(std::span<const Tensor> heads, const Tensor& target, double pos_weight);

// ---------------------------------------------------------------------------
// Optimizer and schedule

// w <- w - lr * (g + weight_decay * w); decay applies to conv weights only.
// Throws Errc::numeric (leaving every parameter untouched) if any gradient is
// non-finite.
void sgd_step(std::span<NamedParam> params, double lr, double weight_decay);

// Minimum loss before the last `window` epochs vs minimum within them; if the
// relative improvement is below threshold the rate is divided by drop_factor.
// Histories shorter than window + 1 keep the rate.
double plateau_lr(std::span<const double> losses, double lr, int window = 5, double threshold = 0.01,
                  double drop_factor = 10.0);

// Applies plateau_lr to the losses seen since the last drop, so each drop
// needs a fresh full window of evidence.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, int window, double threshold, double drop_factor);
  double step(double epoch_loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  int window_;
  double threshold_;
  double drop_factor_;
  std::vector<double> history_;
};

// ---------------------------------------------------------------------------
// Cross-validation

struct TimeRange {
  Timestamp start;
  Timestamp end;  // inclusive
};

struct FoldSpec {
  int id = 0;                      // 1-based
  TimeRange test;                  // first and last test sample
  std::vector<TimeRange> train;    // sample-snapped ranges outside the margin
  hours margin{12};

  bool in_test(Timestamp t) const { return t >= test.start && t <= test.end; }
  bool in_train(Timestamp t) const { return t <= test.start - margin || t >= test.end + margin; }
};

// Splits a sorted sample timeline into n equal test ranges separated by the
// margin; training samples keep at least `margin` distance from the test range.
std::vector<FoldSpec> make_folds(std::span<const Timestamp> timeline, hours margin = hours{12}, int n_folds = 4);

// ---------------------------------------------------------------------------
// Data and loop

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> tpr;
  std::optional<double> tnr;
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

void write_epoch_csv(const std::string& path, std::span<const EpochLog> logs);

struct TrainResult {
  std::vector<EpochLog> logs;
  NormStats stats;
  double pos_weight = 0.0;
  bool aborted = false;  // non-finite loss or gradient; params hold the last good epoch
  std::string abort_reason;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  // Returning true stops after the current epoch.
  std::function<bool(const EpochLog&)> stop;
};

// Trains model on the fold's training frames. Normalization statistics come
// from the training frames only; test frames are evaluated every
// config.eval_every epochs at config.threshold.
TrainResult train(Model& model, std::span<const FrameSample> frames, const FoldSpec& fold, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// Tiles a normalized frame, runs the inference head, applies the sigmoid and
// stitches the probabilities back to frame size.
Raster predict_frame(Model& model, const RasterStack& normalized_features, const TileGeometry& geometry);

// Confusion counts over full frames (features normalized with stats).
ConfusionMatrix evaluate_frames(Model& model, std::span<const FrameSample> frames, const NormStats& stats,
                                const TileGeometry& geometry, double threshold);

NormStats training_stats(std::span<const FrameSample> frames);

}  // namespace stormcast
