#include "stormcast/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "stormcast/error.hpp"

namespace stormcast {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::invalid_argument, "train config: " + m); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(lr0 > 0.0)) fail("lr0 must be > 0");
  if (!(lr_drop_factor > 1.0)) fail("lr_drop_factor must be > 1");
  if (plateau_window < 1 || plateau_window > epochs) fail("plateau_window must lie in [1, epochs]");
  if (!(plateau_threshold > 0.0)) fail("plateau_threshold must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (frames_per_batch < 1) fail("frames_per_batch must be >= 1");
  if (pos_weight && !(*pos_weight > 0.0)) fail("pos_weight must be > 0");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must lie in (0, 1)");
  if (geometry.tile_h % 8 != 0 || geometry.tile_w % 8 != 0 || geometry.tile_h == 0 || geometry.tile_w == 0)
    fail("tile sides must be positive multiples of 8");
  if (margin.count() < 0) fail("margin must be >= 0");
}

TrainConfig TrainConfig::from(KeyValueConfig& kv) {
  TrainConfig c;
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.lr0 = kv.get_double("lr0", c.lr0);
  c.lr_drop_factor = kv.get_double("lr_drop_factor", c.lr_drop_factor);
  c.plateau_window = static_cast<int>(kv.get_int("plateau_window", c.plateau_window));
  c.plateau_threshold = kv.get_double("plateau_threshold", c.plateau_threshold);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.frames_per_batch = static_cast<std::size_t>(kv.get_int("frames_per_batch", long(c.frames_per_batch)));
  if (kv.get_string("pos_weight", "auto") != "auto") c.pos_weight = kv.get_double("pos_weight", 1.0);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", long(c.seed)));
  c.eval_every = static_cast<int>(kv.get_int("eval_every", c.eval_every));
  c.threshold = kv.get_double("threshold", c.threshold);
  c.geometry.tile_h = static_cast<std::size_t>(kv.get_int("tile_h", long(c.geometry.tile_h)));
  c.geometry.tile_w = static_cast<std::size_t>(kv.get_int("tile_w", long(c.geometry.tile_w)));
  c.margin = hours{kv.get_int("margin_hours", c.margin.count())};
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

double class_weight(std::span<const Raster> targets) {
  double positives = 0.0, total = 0.0;
  for (const Raster& t : targets) {
    for (double v : t.values) positives += v > 0.0 ? 1.0 : 0.0;
    total += static_cast<double>(t.size());
  }
  if (positives == 0.0)
    throw Error(Errc::invalid_argument,
                "no positive pixels in the training targets; extend the time range or set pos_weight explicitly");
  return (total - positives) / positives;
}

Tensor deep_loss(std::span<const Tensor> heads, const Tensor& target, double pos_weight) {
  if (heads.empty()) throw Error(Errc::invalid_argument, "deep_loss needs at least one head");
  Tensor total = weighted_bce(heads[0], target, pos_weight);
  for (std::size_t k = 1; k < heads.size(); ++k) total = add(total, weighted_bce(heads[k], target, pos_weight));
  return total;
}

void sgd_step(std::span<NamedParam> params, double lr, double weight_decay) {
  for (const NamedParam& p : params) {
    for (double g : p.tensor.grad())
      if (!std::isfinite(g)) throw Error(Errc::numeric, "non-finite gradient in " + p.name);
  }
  for (NamedParam& p : params) {
    if (!p.tensor.has_grad()) continue;
    const double wd = p.kind == ParamKind::conv_weight ? weight_decay : 0.0;
    auto w = p.tensor.mutable_values();
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + wd * w[i]);
  }
}

double plateau_lr(std::span<const double> losses, double lr, int window, double threshold, double drop_factor) {
  const auto n = static_cast<std::ptrdiff_t>(losses.size());
  if (window < 1 || n < window + 1) return lr;
  const auto split = losses.begin() + (n - window);
  const double before = *std::min_element(losses.begin(), split);
  const double recent = *std::min_element(split, losses.end());
  const double improvement = (before - recent) / before;
  return improvement < threshold ? lr / drop_factor : lr;
}

PlateauScheduler::PlateauScheduler(double lr0, int window, double threshold, double drop_factor)
    : lr_(lr0), window_(window), threshold_(threshold), drop_factor_(drop_factor) {}

double PlateauScheduler::step(double epoch_loss) {
  history_.push_back(epoch_loss);
  const double next = plateau_lr(history_, lr_, window_, threshold_, drop_factor_);
  if (next != lr_) {
    lr_ = next;
    history_ = {epoch_loss};
  }
  return lr_;
}

// ---------------------------------------------------------------------------

std::vector<FoldSpec> make_folds(std::span<const Timestamp> timeline, hours margin, int n_folds) {
  if (n_folds < 1) throw Error(Errc::invalid_argument, "n_folds must be >= 1");
  if (timeline.empty()) throw Error(Errc::invalid_argument, "empty sample timeline");
  if (!std::is_sorted(timeline.begin(), timeline.end()))
    throw Error(Errc::invalid_argument, "sample timeline must be sorted");
  const Timestamp first = timeline.front();
  const Timestamp last = timeline.back();
  const auto span = last - first;
  const auto margin_s = std::chrono::duration_cast<std::chrono::seconds>(margin);
  if (span < n_folds * margin_s)
    throw Error(Errc::invalid_argument, fmt::format("timeline of {} h is shorter than {} x the {} h margin",
                                                    span.count() / 3600.0, n_folds, margin.count()));
  const auto length = (span - (n_folds - 1) * margin_s) / n_folds;

  std::vector<FoldSpec> folds;
  for (int k = 0; k < n_folds; ++k) {
    const Timestamp lo = first + k * (length + margin_s);
    const Timestamp hi = k + 1 == n_folds ? last : lo + length;
    auto a = std::lower_bound(timeline.begin(), timeline.end(), lo);
    auto b = std::upper_bound(timeline.begin(), timeline.end(), hi);
    if (a == b) throw Error(Errc::invalid_argument, fmt::format("fold {} has no samples", k + 1));
    FoldSpec f;
    f.id = k + 1;
    f.margin = margin;
    f.test = {*a, *(b - 1)};
    // Sample-snapped training ranges on either side of the test range.
    auto before_end = std::upper_bound(timeline.begin(), timeline.end(), f.test.start - margin);
    if (before_end != timeline.begin()) f.train.push_back({first, *(before_end - 1)});
    auto after_begin = std::lower_bound(timeline.begin(), timeline.end(), f.test.end + margin);
    if (after_begin != timeline.end()) f.train.push_back({*after_begin, last});
    folds.push_back(std::move(f));
  }
  return folds;
}

// ---------------------------------------------------------------------------

void write_epoch_csv(const std::string& path, std::span<const EpochLog> logs) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out << "epoch,loss,lr,tpr,tnr\n";
  for (const EpochLog& l : logs) {
    out << fmt::format("{},{:.17g},{:.17g},{},{}\n", l.epoch, l.loss, l.lr,
                       l.tpr ? fmt::format("{:.17g}", *l.tpr) : "", l.tnr ? fmt::format("{:.17g}", *l.tnr) : "");
  }
  if (!out) throw Error(Errc::io, "failed writing " + path);
}

NormStats training_stats(std::span<const FrameSample> frames) {
  if (frames.empty()) throw Error(Errc::invalid_argument, "no training frames for normalization statistics");
  NormStats stats = NormStats::empty(frames.front().features.channels);
  for (const FrameSample& f : frames) stats.accumulate(f.features);
  return stats;
}

Raster predict_frame(Model& model, const RasterStack& normalized_features, const TileGeometry& geometry) {
  const TiledFrame tiled = tile_frame(normalized_features, geometry);
  const Tensor logits = model.forward(make_batch(tiled.tiles), Mode::inference).front();
  const Tensor probs = sigmoid(logits);
  std::vector<Raster> tiles;
  const std::size_t plane = geometry.tile_h * geometry.tile_w;
  for (std::size_t k = 0; k < tiled.tiles.size(); ++k) {
    const auto v = probs.values().subspan(k * plane, plane);
    tiles.emplace_back(geometry.tile_h, geometry.tile_w, std::vector<double>(v.begin(), v.end()));
  }
  return stitch_predictions(tiles, tiled.index, normalized_features.h, normalized_features.w, geometry);
}

ConfusionMatrix evaluate_frames(Model& model, std::span<const FrameSample> frames, const NormStats& stats,
                                const TileGeometry& geometry, double threshold) {
  ConfusionMatrix cm;
  for (const FrameSample& f : frames)
    cm += confuse(predict_frame(model, normalize(f.features, stats), geometry), f.target, threshold);
  return cm;
}

namespace {

struct TileSet {
  std::vector<RasterStack> features;
  std::vector<RasterStack> targets;
};

TileSet tile_sample(const FrameSample& f, const NormStats& stats, const TileGeometry& g) {
  TileSet out;
  out.features = tile_frame(normalize(f.features, stats), g).tiles;
  RasterStack target(1, f.target.h, f.target.w);
  target.set_raster(0, f.target);
  out.targets = tile_frame(target, g).tiles;
  return out;
}

struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> buffers;
};

Snapshot snapshot(Model& m) {
  Snapshot s;
  for (const NamedParam& p : m.parameters()) s.params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  for (const NamedBuffer& b : m.buffers()) s.buffers.push_back(*b.values);
  return s;
}

void restore(Model& m, const Snapshot& s) {
  auto params = m.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto v = params[k].tensor.mutable_values();
    std::copy(s.params[k].begin(), s.params[k].end(), v.begin());
  }
  auto buffers = m.buffers();
  for (std::size_t k = 0; k < buffers.size(); ++k) *buffers[k].values = s.buffers[k];
  m.zero_grad();
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

TrainResult train(Model& model, std::span<const FrameSample> frames, const FoldSpec& fold, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  std::vector<const FrameSample*> train_frames, test_frames;
  for (const FrameSample& f : frames) {
    if (fold.in_test(f.time)) test_frames.push_back(&f);
    else if (fold.in_train(f.time)) train_frames.push_back(&f);
  }
  if (train_frames.empty()) throw Error(Errc::invalid_argument, fmt::format("fold {} has no training frames", fold.id));
  std::sort(train_frames.begin(), train_frames.end(), [](auto* a, auto* b) { return a->time < b->time; });

  TrainResult result;
  result.stats = NormStats::empty(train_frames.front()->features.channels);
  for (const FrameSample* f : train_frames) result.stats.accumulate(f->features);

  std::vector<TileSet> tiles;
  tiles.reserve(train_frames.size());
  std::vector<Raster> target_tiles;
  for (const FrameSample* f : train_frames) {
    tiles.push_back(tile_sample(*f, result.stats, config.geometry));
    for (const RasterStack& t : tiles.back().targets) target_tiles.push_back(t.raster(0));
  }
  result.pos_weight = config.pos_weight ? *config.pos_weight : class_weight(target_tiles);
  target_tiles.clear();

  std::vector<FrameSample> test_copy;
  for (const FrameSample* f : test_frames) test_copy.push_back(*f);

  // Batches: consecutive groups of frames_per_batch training frames.
  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t s = 0; s < tiles.size(); s += config.frames_per_batch)
    batches.emplace_back(s, std::min(tiles.size(), s + config.frames_per_batch));

  std::mt19937_64 rng(config.seed);
  PlateauScheduler scheduler(config.lr0, config.plateau_window, config.plateau_threshold, config.lr_drop_factor);
  Snapshot good = snapshot(model);
  bool good_bn = model.batchnorm_initialized();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = batches.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(batches[i - 1], batches[pick(rng)]);
    }
    const double lr = scheduler.lr();
    double loss_sum = 0.0;
    try {
      for (const auto& [lo, hi] : batches) {
        std::vector<RasterStack> xs, ys;
        for (std::size_t k = lo; k < hi; ++k) {
          xs.insert(xs.end(), tiles[k].features.begin(), tiles[k].features.end());
          ys.insert(ys.end(), tiles[k].targets.begin(), tiles[k].targets.end());
        }
        model.zero_grad();
        const auto heads = model.forward(make_batch(xs), Mode::training);
        const Tensor loss = deep_loss(heads, make_batch(ys), result.pos_weight);
        if (!finite(loss.item())) throw Error(Errc::numeric, fmt::format("non-finite loss in epoch {}", epoch));
        backward(loss);
        auto params = model.parameters();
        sgd_step(params, lr, config.weight_decay);
        loss_sum += loss.item();
      }
    } catch (const Error& e) {
      if (e.code() != Errc::numeric && e.code() != Errc::non_finite) throw;
      restore(model, good);
      if (good_bn) model.mark_batchnorm_initialized();
      result.aborted = true;
      result.abort_reason = e.what();
      return result;
    }

    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(batches.size());
    log.lr = lr;
    if (epoch % config.eval_every == 0 && !test_copy.empty()) {
      const MetricReport r =
          metrics(evaluate_frames(model, test_copy, result.stats, config.geometry, config.threshold), config.threshold);
      log.tpr = r.tpr;
      log.tnr = r.tnr;
    }
    scheduler.step(log.loss);
    result.logs.push_back(log);
    good = snapshot(model);
    good_bn = model.batchnorm_initialized();
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (hooks.stop && hooks.stop(log)) break;
  }
  return result;
}

}  // namespace stormcast
