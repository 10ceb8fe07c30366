#include "stormcast/synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>

#include "stormcast/error.hpp"
#include "stormcast/io.hpp"

namespace stormcast {

namespace {

constexpr double kStepSeconds = 900.0;

// Per-channel (offset, gain) applied to the latent field; negative gains play
// the role of infrared channels where cloud tops are cold.
constexpr std::array<std::pair<double, double>, 9> kChannelMap{{
    {0.20, 0.60}, {0.25, 0.50}, {0.80, -0.40}, {0.75, -0.50}, {0.30, 0.30},
    {0.20, 0.45}, {0.70, -0.35}, {0.15, 0.55}, {0.40, 0.25},
}};

struct Cell {
  double row = 0.0;
  double col = 0.0;
  double amplitude = 0.0;
  int age = 0;  // steps since initiation
};

double latent_at(const std::vector<Cell>& cells, double sigma, double r, double c) {
  double v = 0.0;
  const double k = 1.0 / (2.0 * sigma * sigma);
  for (const Cell& cell : cells) {
    const double dr = r - cell.row, dc = c - cell.col;
    v += cell.amplitude * std::exp(-(dr * dr + dc * dc) * k);
  }
  return v;
}

Raster render_latent(const std::vector<Cell>& cells, const SynthConfig& cfg) {
  Raster out(cfg.height, cfg.width);
  const double reach = 4.0 * cfg.blob_sigma;
  const double k = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
  for (const Cell& cell : cells) {
    const long r0 = std::max(0L, static_cast<long>(std::floor(cell.row - reach)));
    const long r1 = std::min(static_cast<long>(cfg.height) - 1, static_cast<long>(std::ceil(cell.row + reach)));
    const long c0 = std::max(0L, static_cast<long>(std::floor(cell.col - reach)));
    const long c1 = std::min(static_cast<long>(cfg.width) - 1, static_cast<long>(std::ceil(cell.col + reach)));
    for (long r = r0; r <= r1; ++r)
      for (long c = c0; c <= c1; ++c) {
        const double dr = double(r) - cell.row, dc = double(c) - cell.col;
        out(std::size_t(r), std::size_t(c)) += cell.amplitude * std::exp(-(dr * dr + dc * dc) * k);
      }
  }
  return out;
}

struct Strike {
  double dt;  // seconds into the window
  double row;
  double col;
};

// Strike positions of one cell over one window: uniformly timed, drifting with
// the cell, scattered around its core.
template <class Rng>
std::vector<Strike> sample_strikes(Rng& rng, const Cell& cell, double rate, const SynthConfig& cfg) {
  std::vector<Strike> out;
  if (rate <= 0.0) return out;
  std::poisson_distribution<int> count(rate);
  std::uniform_real_distribution<double> when(0.0, kStepSeconds);
  std::normal_distribution<double> jitter(0.0, cfg.lightning_jitter);
  const int n = count(rng);
  for (int k = 0; k < n; ++k) {
    const double dt = std::floor(when(rng));
    const double frac = dt / kStepSeconds;
    const double r = cell.row + cfg.velocity_row * frac + jitter(rng);
    const double c = cell.col + cfg.velocity_col * frac + jitter(rng);
    out.push_back({dt, r, c});
  }
  return out;
}

// Expected number of distinct pixels one freshly initiated cell lights up,
// estimated with a fixed-seed Monte Carlo so it does not depend on the
// sequence seed.
double pixels_per_new_cell(const SynthConfig& cfg) {
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  constexpr int trials = 4000;
  double total = 0.0;
  for (int t = 0; t < trials; ++t) {
    Cell cell{frac(rng), frac(rng), cfg.amplitude, 0};
    std::set<std::pair<long, long>> hit;
    for (const Strike& s : sample_strikes(rng, cell, cfg.lightning_rate, cfg))
      hit.insert({std::lround(s.row), std::lround(s.col)});
    total += static_cast<double>(hit.size());
  }
  return total / trials;
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::invalid_argument, "synth config: " + m); };
  if (height < 8 || width < 8) fail("frame dims must be at least 8x8");
  if (channels < 1) fail("channels must be >= 1");
  if (frames < 3) fail("need at least 3 frames");
  if (!(amplitude > 0.0)) fail("amplitude must be > 0");
  if (!(blob_sigma > 0.0)) fail("blob_sigma must be > 0");
  if (!std::isfinite(velocity_row) || !std::isfinite(velocity_col)) fail("velocity must be finite");
  if (!std::isfinite(initiation_rate)) fail("initiation_rate must be finite");
  if (initiation_rate < 0.0 && !(positive_fraction > 0.0 && positive_fraction < 1.0))
    fail("automatic initiation_rate needs positive_fraction in (0, 1)");
  if (lifetime < 0) fail("lifetime must be >= 0");
  if (!(decay >= 0.0 && decay < 1.0)) fail("decay must lie in [0, 1)");
  if (lightning_rate < 0.0 || mature_lightning_rate < 0.0) fail("lightning rates must be >= 0");
  if (lightning_jitter < 0.0) fail("lightning_jitter must be >= 0");
  if (noise < 0.0) fail("noise must be >= 0");
  if (!(drop_probability >= 0.0 && drop_probability < 1.0)) fail("drop_probability must lie in [0, 1)");
}

double SynthConfig::effective_initiation_rate() const {
  if (initiation_rate >= 0.0) return initiation_rate;
  // Positives per frame ~ rate * (pixels of a new cell + mature cells above
  // threshold * their strike rate). Cells stay above threshold for roughly
  // lifetime plus the steps the decay needs to halve them.
  const double above = lifetime + (decay > 0.0 ? std::log(0.5) / std::log(decay) : 0.0);
  const double per_cell = pixels_per_new_cell(*this) + above * mature_lightning_rate;
  const double area = double(height) * double(width);
  const double per_frame = positive_fraction * area / per_cell;
  return per_frame * (64.0 * 64.0) / area;
}

SynthConfig SynthConfig::from(KeyValueConfig& kv) {
  SynthConfig c;
  c.height = static_cast<std::size_t>(kv.get_int("height", long(c.height)));
  c.width = static_cast<std::size_t>(kv.get_int("width", long(c.width)));
  c.channels = static_cast<std::size_t>(kv.get_int("channels", long(c.channels)));
  c.frames = static_cast<std::size_t>(kv.get_int("frames", long(c.frames)));
  if (kv.has("start")) c.start = parse_timestamp(kv.get_string("start", ""));
  c.initial_blobs = static_cast<std::size_t>(kv.get_int("initial_blobs", long(c.initial_blobs)));
  c.amplitude = kv.get_double("amplitude", c.amplitude);
  c.blob_sigma = kv.get_double("blob_sigma", c.blob_sigma);
  c.velocity_row = kv.get_double("velocity_row", c.velocity_row);
  c.velocity_col = kv.get_double("velocity_col", c.velocity_col);
  if (kv.get_string("initiation_rate", "auto") != "auto") c.initiation_rate = kv.get_double("initiation_rate", 0.0);
  c.positive_fraction = kv.get_double("positive_fraction", c.positive_fraction);
  c.lifetime = static_cast<int>(kv.get_int("lifetime", c.lifetime));
  c.decay = kv.get_double("decay", c.decay);
  c.lightning_rate = kv.get_double("lightning_rate", c.lightning_rate);
  c.mature_lightning_rate = kv.get_double("mature_lightning_rate", c.mature_lightning_rate);
  c.lightning_jitter = kv.get_double("lightning_jitter", c.lightning_jitter);
  c.intensity_threshold = kv.get_double("intensity_threshold", c.intensity_threshold);
  c.noise = kv.get_double("noise", c.noise);
  c.drop_probability = kv.get_double("drop_probability", c.drop_probability);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", long(c.seed)));
  c.validate();
  return c;
}

SynthSequence gen_sequence(const SynthConfig& cfg) {
  cfg.validate();
  const double births_per_step = cfg.effective_initiation_rate() * double(cfg.height * cfg.width) / (64.0 * 64.0);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::poisson_distribution<int> births(std::max(births_per_step, 1e-300));
  const double H = double(cfg.height), W = double(cfg.width);
  const double reach = 4.0 * cfg.blob_sigma;

  std::vector<Cell> cells;
  for (std::size_t k = 0; k < cfg.initial_blobs; ++k) {
    Cell c;
    c.row = unit(rng) * H;
    c.col = unit(rng) * W;
    c.amplitude = cfg.amplitude;
    c.age = 1 + static_cast<int>(unit(rng) * std::max(1, cfg.lifetime));
    cells.push_back(c);
  }

  SynthSequence seq;
  for (std::size_t step = 0; step < cfg.frames; ++step) {
    const Timestamp t = cfg.start + step * kFrameStep;

    // Lightning during [t, t + 15 min) from the state at t.
    for (const Cell& cell : cells) {
      const double rate = cell.age == 0 ? cfg.lightning_rate : cfg.mature_lightning_rate;
      for (const Strike& s : sample_strikes(rng, cell, rate, cfg)) {
        const long r = std::lround(s.row), c = std::lround(s.col);
        if (r < 0 || c < 0 || r >= long(cfg.height) || c >= long(cfg.width)) continue;
        if (latent_at(cells, cfg.blob_sigma, double(r), double(c)) < cfg.intensity_threshold) continue;
        seq.events.push_back({t + std::chrono::seconds(long(s.dt)), r, c});
      }
    }

    const Raster latent = render_latent(cells, cfg);
    RasterStack stack(cfg.channels, cfg.height, cfg.width);
    for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
      const auto [offset, gain] = kChannelMap[ch % kChannelMap.size()];
      auto out = stack.channel(ch);
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp(offset + gain * latent.values[i] + cfg.noise * gauss(rng), 0.0, 1.0);
    }
    const bool drop = unit(rng) < cfg.drop_probability;
    if (drop) ++seq.dropped;
    else seq.frames.push_back({t, std::move(stack)});

    // Advance to the next step: advect, age, decay, retire, initiate.
    for (Cell& cell : cells) {
      cell.row += cfg.velocity_row;
      cell.col += cfg.velocity_col;
      ++cell.age;
      if (cell.age > cfg.lifetime) cell.amplitude *= cfg.decay;
    }
    std::erase_if(cells, [&](const Cell& c) {
      return c.amplitude < 0.01 * cfg.amplitude || c.row < -reach || c.col < -reach || c.row > H + reach ||
             c.col > W + reach;
    });
    const int n = births_per_step > 0.0 ? births(rng) : 0;
    for (int k = 0; k < n; ++k) {
      Cell c;
      c.row = unit(rng) * H;
      c.col = unit(rng) * W;
      c.amplitude = cfg.amplitude;
      c.age = 0;
      cells.push_back(c);
    }
  }
  std::stable_sort(seq.events.begin(), seq.events.end(), [](const LightningEvent& a, const LightningEvent& b) {
    return std::tie(a.time, a.row, a.col) < std::tie(b.time, b.row, b.col);
  });
  return seq;
}

void write_sequence(const std::filesystem::path& dir, const SynthSequence& seq) {
  std::filesystem::create_directories(dir);
  for (const SynthFrame& f : seq.frames) write_raster(frame_path(dir, f.time), f.stack);
  write_events(dir / "events.csv", seq.events);
}

}  // namespace stormcast
