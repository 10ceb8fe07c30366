#include "stormcast/evaluation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "stormcast/error.hpp"

namespace stormcast {

namespace {

std::optional<double> ratio(double num, double den) {
  if (den > 0.0) return num / den;
  return std::nullopt;
}

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.10g}", *v) : std::string("nan"); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

ConfusionMatrix confuse(std::span<const double> probs, std::span<const double> truth, double threshold) {
  if (probs.size() != truth.size())
    throw Error(Errc::shape, fmt::format("confuse: {} predictions vs {} truth values", probs.size(), truth.size()));
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    if (truth[i] != 0.0 && truth[i] != 1.0) throw Error(Errc::invalid_argument, "truth values must be 0 or 1");
    const bool actual = truth[i] == 1.0;
    if (predicted && actual) cm.tp += 1;
    else if (predicted) cm.fp += 1;
    else if (actual) cm.fn += 1;
    else cm.tn += 1;
  }
  return cm;
}

ConfusionMatrix confuse(const Raster& probs, const Raster& truth, double threshold) {
  if (!probs.same_dims(truth)) throw Error(Errc::shape, "confuse: raster dims differ");
  return confuse(probs.values, truth.values, threshold);
}

MetricReport metrics(const ConfusionMatrix& cm, double threshold) {
  if (cm.tp < 0 || cm.fp < 0 || cm.fn < 0 || cm.tn < 0)
    throw Error(Errc::invalid_argument, "confusion counts must be non-negative");
  if (!(cm.total() > 0.0)) throw Error(Errc::invalid_argument, "metrics of an empty confusion matrix");
  MetricReport r;
  r.counts = cm;
  r.threshold = threshold;
  r.tpr = ratio(cm.tp, cm.tp + cm.fn);
  r.tnr = ratio(cm.tn, cm.tn + cm.fp);
  r.accuracy = ratio(cm.tp + cm.tn, cm.total());
  r.far = ratio(cm.fp, cm.tp + cm.fp);
  r.precision = ratio(cm.tp, cm.tp + cm.fp);
  return r;
}

ConfusionMatrix reweight_negatives(const ConfusionMatrix& cm, double factor) {
  if (!(factor > 0.0)) throw Error(Errc::invalid_argument, "re-weighting factor must be > 0");
  ConfusionMatrix out = cm;
  out.tn *= factor;
  out.fp *= factor;
  return out;
}

MetricReport aggregate(std::span<const FoldReport> folds) {
  if (folds.empty()) throw Error(Errc::invalid_argument, "aggregate needs at least one fold");
  ConfusionMatrix total;
  for (const FoldReport& f : folds) total += f.report.counts;
  return metrics(total, folds.front().report.threshold);
}

void write_report_csv(const std::string& path, std::span<const FoldReport> folds) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out << "fold,variant,threshold,tp,fp,fn,tn,tpr,tnr,accuracy,far,precision\n";
  auto row = [&](const std::string& fold, const std::string& variant, const MetricReport& r) {
    out << fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{},{},{},{},{}\n", fold, variant, r.threshold,
                       r.counts.tp, r.counts.fp, r.counts.fn, r.counts.tn, cell(r.tpr), cell(r.tnr),
                       cell(r.accuracy), cell(r.far), cell(r.precision));
  };
  for (const FoldReport& f : folds) row(std::to_string(f.fold), f.variant, f.report);
  for (const auto& [variant, r] : aggregate_by_variant(folds)) row("all", variant, r);
  if (!out) throw Error(Errc::io, "failed writing " + path);
}

std::vector<FoldReport> read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot read " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("fold,variant,threshold,tp,fp,fn,tn", 0) != 0) throw Error(Errc::parse, path + ": not a report CSV");
  std::vector<FoldReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() < 7) throw Error(Errc::parse, path + ": short row '" + line + "'");
    if (f[0] == "all") continue;
    try {
      ConfusionMatrix cm{std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6])};
      out.push_back({std::stoi(f[0]), f[1], metrics(cm, std::stod(f[2]))});
    } catch (const std::logic_error&) {
      throw Error(Errc::parse, path + ": bad number in '" + line + "'");
    }
  }
  return out;
}

std::vector<std::pair<std::string, MetricReport>> aggregate_by_variant(std::span<const FoldReport> folds) {
  std::vector<std::pair<std::string, MetricReport>> out;
  for (const FoldReport& f : folds) {
    if (std::any_of(out.begin(), out.end(), [&](const auto& p) { return p.first == f.variant; })) continue;
    std::vector<FoldReport> same;
    for (const FoldReport& g : folds)
      if (g.variant == f.variant) same.push_back(g);
    out.emplace_back(f.variant, aggregate(same));
  }
  return out;
}

void write_plot_data(const std::string& path, const std::string& variant, const MetricReport& r) {
  const std::pair<std::string, MetricReport> one{variant, r};
  write_plot_data(path, std::span(&one, 1));
}

void write_plot_data(const std::string& path, std::span<const std::pair<std::string, MetricReport>> reports) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out << "metric\tvariant\tvalue\n";
  for (const auto& [variant, r] : reports) {
    out << fmt::format("FAR\t{}\t{}\n", variant, cell(r.far));
    out << fmt::format("TNR\t{}\t{}\n", variant, cell(r.tnr));
    out << fmt::format("TPR\t{}\t{}\n", variant, cell(r.tpr));
    out << fmt::format("Accuracy\t{}\t{}\n", variant, cell(r.accuracy));
    out << fmt::format("Precision\t{}\t{}\n", variant, cell(r.precision));
  }
  if (!out) throw Error(Errc::io, "failed writing " + path);
}

}  // namespace stormcast
