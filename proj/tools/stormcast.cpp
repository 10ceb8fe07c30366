#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "stormcast/config.hpp"
#include "stormcast/error.hpp"
#include "stormcast/evaluation.hpp"
#include "stormcast/flow.hpp"
#include "stormcast/gradcheck.hpp"
#include "stormcast/io.hpp"
#include "stormcast/model.hpp"
#include "stormcast/preprocess.hpp"
#include "stormcast/synth.hpp"
#include "stormcast/training.hpp"

using namespace stormcast;

namespace {

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig::parse("") : KeyValueConfig::load(path);
}

std::string echo(const CheckpointMeta& meta, const std::string& key, const std::string& fallback) {
  for (const auto& [k, v] : meta.train_config)
    if (k == key) return v;
  return fallback;
}

TileGeometry geometry_of(const CheckpointMeta& meta) {
  return {std::stoul(echo(meta, "tile_h", "144")), std::stoul(echo(meta, "tile_w", "160"))};
}

FoldSpec pick_fold(std::span<const FrameSample> samples, hours margin, int fold) {
  std::vector<Timestamp> timeline;
  for (const FrameSample& s : samples) timeline.push_back(s.time);
  return make_folds(timeline, margin).at(std::size_t(fold - 1));
}

std::string pct(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : "n/a"; }

void print_metrics(const std::string& label, const MetricReport& r) {
  fmt::print("{}: tp={} fp={} fn={} tn={} tpr={} tnr={} accuracy={} far={} precision={}\n", label, r.counts.tp,
             r.counts.fp, r.counts.fn, r.counts.tn, pct(r.tpr), pct(r.tnr), pct(r.accuracy), pct(r.far),
             pct(r.precision));
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out_dir;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  KeyValueConfig kv = load_config(a.config);
  SynthConfig cfg = SynthConfig::from(kv);
  kv.reject_unknown();
  if (a.seed) cfg.seed = *a.seed;
  const SynthSequence seq = gen_sequence(cfg);
  write_sequence(a.out_dir, seq);
  fmt::print("wrote {} frames ({} dropped) and {} events to {}\n", seq.frames.size(), seq.dropped, seq.events.size(),
             a.out_dir);
  return 0;
}

struct PreprocessArgs {
  std::string frames_dir, events, out_dir, stats_out;
};

int run_preprocess(const PreprocessArgs& a) {
  const auto listing = list_frames(a.frames_dir);
  if (listing.empty()) throw Error(Errc::io, "no frame_*.scr files in " + a.frames_dir);
  std::vector<RasterStack> stacks;
  stacks.reserve(listing.size());
  for (const auto& [t, path] : listing) {
    stacks.push_back(read_raster(path));
    const RasterStack& s = stacks.back();
    if (s.channels != kErrorChannels || s.h != stacks.front().h || s.w != stacks.front().w)
      throw Error(Errc::shape, fmt::format("{}: expected {} channels at {}x{}", path.string(), kErrorChannels,
                                           stacks.front().h, stacks.front().w));
  }
  std::vector<FrameRef> refs;
  for (std::size_t k = 0; k < listing.size(); ++k) refs.push_back({listing[k].first, &stacks[k]});
  const auto events = read_events(a.events, stacks.front().h, stacks.front().w);
  std::size_t skipped = 0;
  const auto samples = preprocess_frames(refs, events, {}, &skipped);
  write_samples(a.out_dir, samples);
  if (!a.stats_out.empty() && !samples.empty()) write_norm_stats(a.stats_out, training_stats(samples));
  fmt::print("wrote {} samples to {} ({} frames skipped without two predecessors)\n", samples.size(), a.out_dir,
             skipped);
  return 0;
}

struct FlowArgs {
  std::string i0, i1, out;
  std::size_t channel = 0;
};

int run_flow(const FlowArgs& a) {
  const RasterStack s0 = read_raster(a.i0), s1 = read_raster(a.i1);
  if (a.channel >= s0.channels || a.channel >= s1.channels)
    throw Error(Errc::invalid_argument, fmt::format("channel {} not present in the inputs", a.channel));
  const FlowField f = tvl1_flow(s0.raster(a.channel), s1.raster(a.channel));
  RasterStack out(2, f.h, f.w);
  out.set_raster(0, Raster(f.h, f.w, f.u));
  out.set_raster(1, Raster(f.h, f.w, f.v));
  write_raster(a.out, out);
  return 0;
}

struct TrainArgs {
  std::string data_dir, variant, config, out_dir;
  int fold = 1;
};

int run_train(const TrainArgs& a) {
  KeyValueConfig kv = load_config(a.config);
  const TrainConfig cfg = TrainConfig::from(kv);
  ModelConfig mc;
  mc.variant = parse_variant(a.variant);
  mc.base_width = static_cast<std::size_t>(kv.get_int("base_width", long(mc.base_width)));
  mc.seed = cfg.seed;
  kv.reject_unknown();
  if (mc.base_width < 1) throw Error(Errc::invalid_argument, "base_width must be >= 1");

  const auto samples = read_samples(a.data_dir);
  if (samples.empty()) throw Error(Errc::io, "no samples in " + a.data_dir);
  const FoldSpec fold = pick_fold(samples, cfg.margin, a.fold);
  Model model(mc);
  model.init_params(cfg.seed);

  TrainHooks hooks;
  hooks.on_epoch = [](const EpochLog& l) {
    fmt::print("epoch {:3d} loss {:.6f} lr {:g}", l.epoch, l.loss, l.lr);
    if (l.tpr || l.tnr) fmt::print(" tpr {} tnr {}", pct(l.tpr), pct(l.tnr));
    fmt::print("\n");
    std::fflush(stdout);
  };
  const TrainResult r = train(model, samples, fold, cfg, hooks);

  std::filesystem::create_directories(a.out_dir);
  CheckpointMeta meta;
  meta.stats = r.stats;
  meta.pos_weight = r.pos_weight;
  meta.train_config = describe(cfg);
  meta.train_config.emplace_back("fold", std::to_string(a.fold));
  const std::filesystem::path out = a.out_dir;
  save_checkpoint(out / "model.sckp", model, meta);
  write_epoch_csv((out / "epochs.csv").string(), r.logs);
  if (r.aborted) throw Error(Errc::numeric, "training stopped: " + r.abort_reason + " (last good epoch saved)");
  fmt::print("saved {} (pos_weight {:g})\n", (out / "model.sckp").string(), r.pos_weight);
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, data_dir, report, plot_data;
  int fold = 1;
  double threshold = 0.5;
  std::optional<double> reweight;
  bool sweep = false;
};

int run_evaluate(const EvaluateArgs& a) {
  auto [model, meta] = load_model(a.checkpoint);
  const TileGeometry g = geometry_of(meta);
  const hours margin{std::stol(echo(meta, "margin_hours", "12"))};
  const auto samples = read_samples(a.data_dir);
  const FoldSpec fold = pick_fold(samples, margin, a.fold);

  std::vector<std::pair<Raster, const Raster*>> preds;
  for (const FrameSample& s : samples)
    if (fold.in_test(s.time)) preds.emplace_back(predict_frame(model, normalize(s.features, meta.stats), g), &s.target);
  if (preds.empty()) throw Error(Errc::invalid_argument, fmt::format("fold {} has no test frames", a.fold));
  auto counts = [&](double thr) {
    ConfusionMatrix cm;
    for (const auto& [p, t] : preds) cm += confuse(p, *t, thr);
    return cm;
  };

  const MetricReport r = metrics(counts(a.threshold), a.threshold);
  const std::string variant(to_string(model.config().variant));
  print_metrics(fmt::format("fold {} {} @ {:g}", a.fold, variant, a.threshold), r);
  if (a.reweight) print_metrics(fmt::format("re-weighted x{:g}", *a.reweight), metrics(reweight_negatives(r.counts, *a.reweight), a.threshold));
  if (a.sweep) {
    fmt::print("threshold\ttpr\ttnr\tfar\n");
    for (int k = 1; k <= 9; ++k) {
      const double thr = k / 10.0;
      const MetricReport s = metrics(counts(thr), thr);
      fmt::print("{:.1f}\t{}\t{}\t{}\n", thr, pct(s.tpr), pct(s.tnr), pct(s.far));
    }
  }
  const std::vector<FoldReport> folds{{a.fold, variant, r}};
  if (!a.report.empty()) write_report_csv(a.report, folds);
  if (!a.plot_data.empty()) write_plot_data(a.plot_data, variant, r);
  return 0;
}

struct PredictArgs {
  std::string checkpoint, features, out;
};

int run_predict(const PredictArgs& a) {
  auto [model, meta] = load_model(a.checkpoint);
  const RasterStack raw = read_raster(a.features);
  const Raster p = predict_frame(model, normalize(raw, meta.stats), geometry_of(meta));
  RasterStack out(1, p.h, p.w);
  out.set_raster(0, p);
  write_raster(a.out, out);
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  const auto results = gradcheck_suite(seed);
  fmt::print("{:<20} {:>12} {:>10} {:>7}  {}\n", "op", "max_rel_err", "tolerance", "probes", "status");
  bool ok = true;
  for (const GradCheckResult& r : results) {
    fmt::print("{:<20} {:>12.3e} {:>10.0e} {:>7}  {}\n", r.op, r.max_rel_error, r.tolerance, r.probes,
               r.passed() ? "ok" : "FAIL");
    ok &= r.passed();
  }
  if (!ok) throw Error(Errc::numeric, "gradient check failed");
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out, plot_data;
};

int run_report(const ReportArgs& a) {
  std::vector<FoldReport> folds;
  for (const std::string& path : a.inputs) {
    auto rows = read_report_csv(path);
    folds.insert(folds.end(), rows.begin(), rows.end());
  }
  if (folds.empty()) throw Error(Errc::parse, "no fold rows in the inputs");
  const auto by_variant = aggregate_by_variant(folds);
  for (const auto& [variant, r] : by_variant) print_metrics(fmt::format("all folds {}", variant), r);
  if (!a.out.empty()) write_report_csv(a.out, folds);
  if (!a.plot_data.empty()) write_plot_data(a.plot_data, by_variant);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lightning nowcasting from satellite nowcast errors"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic frame sequence and lightning events");
  c_synth->add_option("--config", synth.config, "key = value generator settings")->check(CLI::ExistingFile);
  c_synth->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed, "Override the configured seed");

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Build feature stacks and targets from frames and events");
  c_pre->add_option("--frames-dir", pre.frames_dir, "Directory of frame_*.scr files")->required();
  c_pre->add_option("--events", pre.events, "Lightning event CSV")->required();
  c_pre->add_option("--out-dir", pre.out_dir, "Sample directory to write")->required();
  c_pre->add_option("--stats-out", pre.stats_out, "Optional CSV of per-channel min/max over all samples");

  FlowArgs flow;
  auto* c_flow = app.add_subcommand("flow", "TV-L1 optical flow between two rasters");
  c_flow->add_option("--i0", flow.i0, "Earlier raster")->required();
  c_flow->add_option("--i1", flow.i1, "Later raster")->required();
  c_flow->add_option("--out", flow.out, "Two-channel (u, v) raster to write")->required();
  c_flow->add_option("--channel", flow.channel, "Channel of the inputs to use")->capture_default_str();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train one model on one cross-validation fold");
  c_train->add_option("--data-dir", tr.data_dir, "Preprocessed sample directory")->required();
  c_train->add_option("--fold", tr.fold, "Test fold (1-4)")->required()->check(CLI::Range(1, 4));
  c_train->add_option("--variant", tr.variant, "runetpp or unetpp")
      ->required()
      ->check(CLI::IsMember({"runetpp", "unetpp"}));
  c_train->add_option("--config", tr.config, "key = value training settings")->check(CLI::ExistingFile);
  c_train->add_option("--out-dir", tr.out_dir, "Directory for model.sckp and epochs.csv")->required();

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Score a checkpoint on its fold's test frames");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  c_eval->add_option("--data-dir", ev.data_dir, "Preprocessed sample directory")->required();
  c_eval->add_option("--fold", ev.fold, "Test fold (1-4)")->required()->check(CLI::Range(1, 4));
  c_eval->add_option("--threshold", ev.threshold, "Probability threshold")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  c_eval->add_option("--report", ev.report, "CSV report to write");
  c_eval->add_option("--plot-data", ev.plot_data, "Tab-separated metric/variant/value file to write");
  c_eval->add_option("--reweight", ev.reweight, "Also report with negatives scaled by this factor (e.g. 1500)");
  c_eval->add_flag("--sweep", ev.sweep, "Print TPR/TNR/FAR for thresholds 0.1 to 0.9");

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "Lightning probability map for one raw feature stack");
  c_pred->add_option("--checkpoint", pr.checkpoint, "Model checkpoint")->required();
  c_pred->add_option("--features", pr.features, "Ten-channel raw feature raster (features_*.scr)")->required();
  c_pred->add_option("--out", pr.out, "Probability raster to write")->required();

  std::uint64_t gc_seed = 1;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer and the full model");
  c_gc->add_option("--seed", gc_seed, "Random seed")->capture_default_str();

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Aggregate per-fold report CSVs");
  c_rep->add_option("--inputs", rep.inputs, "Report CSVs from evaluate")->required();
  c_rep->add_option("--out", rep.out, "Combined CSV to write");
  c_rep->add_option("--plot-data", rep.plot_data, "Tab-separated plot data to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR 1: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_pre) return run_preprocess(pre);
    if (*c_flow) return run_flow(flow);
    if (*c_train) return run_train(tr);
    if (*c_eval) return run_evaluate(ev);
    if (*c_pred) return run_predict(pr);
    if (*c_gc) return run_gradcheck(gc_seed);
    if (*c_rep) return run_report(rep);
  } catch (const Error& e) {
    const int code = exit_code(e.code());
    std::cerr << "ERROR " << code << ": " << e.what() << "\n";
    return code;
  } catch (const std::exception& e) {
    std::cerr << "ERROR 2: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
