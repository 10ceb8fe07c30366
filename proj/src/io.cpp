#include "stormcast/io.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "stormcast/error.hpp"

namespace stormcast {

namespace {

// Little-endian byte sink / source.
class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t k = 0; k < sizeof(U); ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, Errc short_code, std::string origin)
      : in_(in), short_code_(short_code), origin_(std::move(origin)) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n)
      throw Error(short_code_, fmt::format("{}: {} needs {} bytes at offset {}, only {} left", origin_, what, n, pos_,
                                           in_.size() - pos_));
  }
  template <class U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) v |= static_cast<U>(in_[pos_ + k]) << (8 * k);
    pos_ += sizeof(U);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  std::string str(const char* what) {
    const auto n = uint<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  Errc short_code_;
  std::string origin_;
};

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "failed writing " + path.string());
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

long parse_long(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw Error(Errc::parse, where + ": expected an integer, got '" + s + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Rasters

std::vector<std::uint8_t> encode_raster(const RasterStack& stack) {
  if (stack.values.size() != stack.channels * stack.h * stack.w)
    throw Error(Errc::shape, "raster stack value count does not match its dims");
  Writer w;
  w.bytes("SCR1", 4);
  w.uint(static_cast<std::uint32_t>(stack.channels));
  w.uint(static_cast<std::uint32_t>(stack.h));
  w.uint(static_cast<std::uint32_t>(stack.w));
  w.data().reserve(16 + 4 * stack.values.size());
  for (double v : stack.values) {
    if (!std::isfinite(v)) throw Error(Errc::non_finite, "refusing to write a non-finite raster value");
    w.f32(static_cast<float>(v));
  }
  return std::move(w.data());
}

RasterStack decode_raster(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SCR1", 4) != 0)
    throw Error(Errc::bad_magic, origin + ": expected an SCR1 raster");
  Reader r(bytes.subspan(4), Errc::truncated, origin);
  const std::size_t c = r.uint<std::uint32_t>("header");
  const std::size_t h = r.uint<std::uint32_t>("header");
  const std::size_t w = r.uint<std::uint32_t>("header");
  const std::size_t expect = 4 * c * h * w;
  if (r.remaining() < expect)
    throw Error(Errc::truncated,
                fmt::format("{}: {}x{}x{} needs {} payload bytes, found {}", origin, c, h, w, expect, r.remaining()));
  if (r.remaining() > expect)
    throw Error(Errc::truncated, fmt::format("{}: {} unexpected trailing bytes", origin, r.remaining() - expect));
  RasterStack out(c, h, w);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const float v = r.f32("payload");
    if (!std::isfinite(v))
      throw Error(Errc::non_finite, fmt::format("{}: value {} (channel {}) is not finite", origin, i, i / (h * w)));
    out.values[i] = v;
  }
  return out;
}

void write_raster(const fs::path& path, const RasterStack& stack) { spit(path, encode_raster(stack)); }

RasterStack read_raster(const fs::path& path) { return decode_raster(slurp(path), path.string()); }

// ---------------------------------------------------------------------------
// Events

void write_events(const fs::path& path, std::span<const LightningEvent> events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << "timestamp,row,col\n";
  for (const LightningEvent& e : events) out << format_timestamp(e.time) << ',' << e.row << ',' << e.col << '\n';
  if (!out) throw Error(Errc::io, "failed writing " + path.string());
}

std::vector<LightningEvent> read_events(const fs::path& path, std::size_t h, std::size_t w) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "timestamp,row,col")
    throw Error(Errc::parse, path.string() + ": expected header 'timestamp,row,col'");
  std::vector<LightningEvent> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::string where = fmt::format("{}:{}", path.string(), lineno);
    const auto f = split(line, ',');
    if (f.size() != 3) throw Error(Errc::parse, where + ": expected 3 fields");
    LightningEvent e;
    e.time = parse_timestamp(f[0]);
    e.row = parse_long(f[1], where);
    e.col = parse_long(f[2], where);
    if (!out.empty() && e.time < out.back().time) throw Error(Errc::parse, where + ": events not sorted by timestamp");
    if (h != 0 && w != 0 && (e.row < 0 || e.col < 0 || e.row >= long(h) || e.col >= long(w)))
      throw Error(Errc::parse, fmt::format("{}: position ({}, {}) outside {}x{} frame", where, e.row, e.col, h, w));
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::pair<std::string, std::string>> describe(const TrainConfig& c) {
  return {
      {"epochs", std::to_string(c.epochs)},
      {"lr0", fmt::format("{}", c.lr0)},
      {"lr_drop_factor", fmt::format("{}", c.lr_drop_factor)},
      {"plateau_window", std::to_string(c.plateau_window)},
      {"plateau_threshold", fmt::format("{}", c.plateau_threshold)},
      {"weight_decay", fmt::format("{}", c.weight_decay)},
      {"frames_per_batch", std::to_string(c.frames_per_batch)},
      {"pos_weight", c.pos_weight ? fmt::format("{}", *c.pos_weight) : "auto"},
      {"seed", std::to_string(c.seed)},
      {"eval_every", std::to_string(c.eval_every)},
      {"threshold", fmt::format("{}", c.threshold)},
      {"tile_h", std::to_string(c.geometry.tile_h)},
      {"tile_w", std::to_string(c.geometry.tile_w)},
      {"margin_hours", std::to_string(c.margin.count())},
  };
}

namespace {

struct Blob {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

struct Slot {
  std::vector<std::uint64_t> dims;
  std::span<double> values;
};

// Every tensor and buffer of the model under its checkpoint name, in order.
std::vector<std::pair<std::string, Slot>> model_slots(Model& model) {
  std::vector<std::pair<std::string, Slot>> out;
  for (NamedParam& p : model.parameters()) {
    const Shape s = p.tensor.shape();
    out.push_back({p.name, Slot{{s.n, s.c, s.h, s.w}, p.tensor.mutable_values()}});
  }
  for (NamedBuffer& b : model.buffers()) out.push_back({b.name, Slot{{b.values->size()}, *b.values}});
  return out;
}

std::string dims_string(const std::vector<std::uint64_t>& d) {
  return fmt::format("[{}]", fmt::join(d, ","));
}

void write_header(Writer& w, const CheckpointMeta& meta, bool bn_initialized) {
  w.bytes("SCKP", 4);
  w.uint(kCheckpointVersion);
  w.str(std::string(to_string(meta.model.variant)));
  w.uint(static_cast<std::uint64_t>(meta.model.base_width));
  w.uint(static_cast<std::uint64_t>(meta.model.in_channels));
  w.uint(static_cast<std::uint64_t>(meta.model.seed));
  w.f64(meta.pos_weight);
  w.uint(static_cast<std::uint8_t>(bn_initialized ? 1 : 0));
  w.uint(static_cast<std::uint32_t>(meta.stats.min.size()));
  for (double v : meta.stats.min) w.f64(v);
  for (double v : meta.stats.max) w.f64(v);
  w.uint(static_cast<std::uint32_t>(meta.train_config.size()));
  for (const auto& [k, v] : meta.train_config) {
    w.str(k);
    w.str(v);
  }
}

CheckpointMeta read_header(Reader& r, std::span<const std::uint8_t> bytes, const std::string& origin,
                           bool* bn_initialized) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SCKP", 4) != 0)
    throw Error(Errc::bad_magic, origin + ": expected an SCKP checkpoint");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw Error(Errc::version_mismatch,
                fmt::format("{}: format version {}, this build reads {}", origin, version, kCheckpointVersion));
  CheckpointMeta meta;
  meta.model.variant = parse_variant(r.str("variant"));
  meta.model.base_width = r.uint<std::uint64_t>("base_width");
  meta.model.in_channels = r.uint<std::uint64_t>("in_channels");
  meta.model.seed = r.uint<std::uint64_t>("seed");
  meta.pos_weight = r.f64("pos_weight");
  *bn_initialized = r.uint<std::uint8_t>("bn flag") != 0;
  const auto channels = r.uint<std::uint32_t>("stats");
  r.need(16ull * channels, "stats");
  meta.stats.min.resize(channels);
  meta.stats.max.resize(channels);
  for (auto& v : meta.stats.min) v = r.f64("stats");
  for (auto& v : meta.stats.max) v = r.f64("stats");
  const auto entries = r.uint<std::uint32_t>("config");
  for (std::uint32_t k = 0; k < entries; ++k) {
    std::string key = r.str("config key");
    std::string value = r.str("config value");
    meta.train_config.emplace_back(std::move(key), std::move(value));
  }
  return meta;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(Model& model, const CheckpointMeta& meta) {
  Writer w;
  CheckpointMeta m = meta;
  m.model = model.config();
  write_header(w, m, model.batchnorm_initialized());
  const auto slots = model_slots(model);
  w.uint(static_cast<std::uint32_t>(slots.size()));
  for (const auto& [name, slot] : slots) {
    w.str(name);
    w.uint(static_cast<std::uint32_t>(slot.dims.size()));
    for (auto d : slot.dims) w.uint(d);
    w.uint(static_cast<std::uint64_t>(8 * slot.values.size()));
    for (double v : slot.values) w.f64(v);
  }
  return std::move(w.data());
}

void save_checkpoint(const fs::path& path, Model& model, const CheckpointMeta& meta) {
  spit(path, encode_checkpoint(model, meta));
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  const auto bytes = slurp(path);
  Reader r(std::span<const std::uint8_t>(bytes).subspan(std::min<std::size_t>(4, bytes.size())), Errc::corrupt, path.string());
  bool bn = false;
  return read_header(r, bytes, path.string(), &bn);
}

namespace {

CheckpointMeta decode_from(std::span<const std::uint8_t> bytes, Model& model, const std::string& origin) {
  Reader r(bytes.subspan(std::min<std::size_t>(4, bytes.size())), Errc::corrupt, origin);
  bool bn_initialized = false;
  CheckpointMeta meta = read_header(r, bytes, origin, &bn_initialized);

  // Parse everything before touching the model so a bad file leaves it intact.
  std::vector<Blob> blobs(r.uint<std::uint32_t>("blob count"));
  for (Blob& b : blobs) {
    b.name = r.str("blob name");
    const auto ndim = r.uint<std::uint32_t>("blob rank");
    if (ndim > 8) throw Error(Errc::corrupt, fmt::format("{}: blob {} has rank {}", origin, b.name, ndim));
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      b.dims.push_back(r.uint<std::uint64_t>("blob dims"));
      count *= b.dims.back();
    }
    const auto length = r.uint<std::uint64_t>("blob length");
    if (length != 8 * count)
      throw Error(Errc::corrupt, fmt::format("{}: blob {} declares {} bytes but shape {} needs {}", origin, b.name,
                                             length, dims_string(b.dims), 8 * count));
    r.need(length, "blob payload");
    b.values.resize(count);
    for (double& v : b.values) {
      v = r.f64("blob payload");
      if (!std::isfinite(v)) throw Error(Errc::non_finite, fmt::format("{}: blob {} holds a non-finite value", origin, b.name));
    }
  }
  if (r.remaining() != 0)
    throw Error(Errc::corrupt, fmt::format("{}: {} trailing bytes after the last blob", origin, r.remaining()));

  auto slots = model_slots(model);
  std::map<std::string, std::size_t> by_name;
  for (std::size_t k = 0; k < slots.size(); ++k) by_name[slots[k].first] = k;
  for (const Blob& b : blobs) {
    auto it = by_name.find(b.name);
    if (it == by_name.end())
      throw Error(Errc::shape_mismatch, fmt::format("{}: blob {} has no counterpart in a {} model", origin, b.name,
                                                    to_string(model.config().variant)));
    const Slot& s = slots[it->second].second;
    if (s.dims != b.dims)
      throw Error(Errc::shape_mismatch, fmt::format("{}: blob {} has shape {}, model expects {}", origin, b.name,
                                                    dims_string(b.dims), dims_string(s.dims)));
  }
  std::map<std::string, const Blob*> present;
  for (const Blob& b : blobs) present[b.name] = &b;
  for (const auto& [name, slot] : slots)
    if (!present.count(name)) throw Error(Errc::missing_blob, fmt::format("{}: no blob named {}", origin, name));

  for (auto& [name, slot] : slots) {
    const Blob& b = *present[name];
    std::copy(b.values.begin(), b.values.end(), slot.values.begin());
  }
  model.zero_grad();
  if (bn_initialized) model.mark_batchnorm_initialized();
  return meta;
}

}  // namespace

CheckpointMeta decode_checkpoint(std::span<const std::uint8_t> bytes, Model& model) {
  return decode_from(bytes, model, "<memory>");
}

CheckpointMeta load_checkpoint(const fs::path& path, Model& model) {
  const auto bytes = slurp(path);
  return decode_from(bytes, model, path.string());
}

std::pair<Model, CheckpointMeta> load_model(const fs::path& path) {
  const auto bytes = slurp(path);
  Reader r(std::span<const std::uint8_t>(bytes).subspan(std::min<std::size_t>(4, bytes.size())), Errc::corrupt, path.string());
  bool bn = false;
  const CheckpointMeta header = read_header(r, bytes, path.string(), &bn);
  Model model(header.model);
  CheckpointMeta meta = decode_from(bytes, model, path.string());
  return {std::move(model), std::move(meta)};
}

// ---------------------------------------------------------------------------
// Directories

fs::path frame_path(const fs::path& dir, Timestamp t) { return dir / ("frame_" + compact_timestamp(t) + ".scr"); }

namespace {

// "YYYYMMDDTHHMM" back to a timestamp.
Timestamp parse_compact(const std::string& s, const std::string& where) {
  if (s.size() != 13 || s[8] != 'T') throw Error(Errc::parse, where + ": bad timestamp '" + s + "'");
  return parse_timestamp(fmt::format("{}-{}-{}T{}:{}", s.substr(0, 4), s.substr(4, 2), s.substr(6, 2),
                                     s.substr(9, 2), s.substr(11, 2)));
}

}  // namespace

std::vector<std::pair<Timestamp, fs::path>> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::io, dir.string() + " is not a directory");
  std::vector<std::pair<Timestamp, fs::path>> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_regular_file() || name.rfind("frame_", 0) != 0 || entry.path().extension() != ".scr") continue;
    out.emplace_back(parse_compact(name.substr(6, name.size() - 10), entry.path().string()), entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_samples(const fs::path& dir, std::span<const FrameSample> samples) {
  fs::create_directories(dir);
  std::ofstream index(dir / "index.csv", std::ios::trunc);
  if (!index) throw Error(Errc::io, "cannot write " + (dir / "index.csv").string());
  index << "timestamp,features,target\n";
  for (const FrameSample& s : samples) {
    const std::string stamp = compact_timestamp(s.time);
    const std::string feat = "features_" + stamp + ".scr";
    const std::string targ = "target_" + stamp + ".scr";
    write_raster(dir / feat, s.features);
    RasterStack t(1, s.target.h, s.target.w);
    t.set_raster(0, s.target);
    write_raster(dir / targ, t);
    index << format_timestamp(s.time) << ',' << feat << ',' << targ << '\n';
  }
  if (!index) throw Error(Errc::io, "failed writing " + (dir / "index.csv").string());
}

std::vector<FrameSample> read_samples(const fs::path& dir) {
  const fs::path index_path = dir / "index.csv";
  std::ifstream in(index_path);
  if (!in) throw Error(Errc::io, "cannot read " + index_path.string() + " (run preprocess first)");
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "timestamp,features,target")
    throw Error(Errc::parse, index_path.string() + ": unexpected header");
  std::vector<FrameSample> out;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw Error(Errc::parse, index_path.string() + ": bad row '" + line + "'");
    FrameSample s;
    s.time = parse_timestamp(f[0]);
    s.features = read_raster(dir / f[1]);
    const RasterStack t = read_raster(dir / f[2]);
    if (t.channels != 1 || t.h != s.features.h || t.w != s.features.w)
      throw Error(Errc::shape, f[2] + ": target dims do not match the features");
    s.target = t.raster(0);
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const FrameSample& a, const FrameSample& b) { return a.time < b.time; });
  return out;
}

void write_norm_stats(const fs::path& path, const NormStats& stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << "channel,min,max\n";
  for (std::size_t c = 0; c < stats.min.size(); ++c) out << fmt::format("{},{:.17g},{:.17g}\n", c, stats.min[c], stats.max[c]);
}

}  // namespace stormcast
