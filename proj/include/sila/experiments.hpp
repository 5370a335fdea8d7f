#pragma once

// Experiment drivers: A/B training of network pairs across loss arms,
// multi-exit training with anytime/budgeted evaluation, the parameter-noise
// robustness probe and the penultimate feature dump. All results are written
// as CSV under an output directory, one subdirectory per seed.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sila/data_io.hpp"
#include "sila/dynamic_eval.hpp"
#include "sila/error.hpp"
#include "sila/losses.hpp"
#include "sila/models.hpp"
#include "sila/rng.hpp"
#include "sila/training.hpp"

namespace sila {

namespace fs = std::filesystem;

enum class ExperimentKind { pair_ab, multi_exit, robustness_probe, feature_dump };

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "pair_ab") return ExperimentKind::pair_ab;
  if (s == "multi_exit") return ExperimentKind::multi_exit;
  if (s == "robustness_probe") return ExperimentKind::robustness_probe;
  if (s == "feature_dump") return ExperimentKind::feature_dump;
  throw InvalidArgument("unknown experiment kind " + s);
}

inline const char* experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::pair_ab: return "pair_ab";
    case ExperimentKind::multi_exit: return "multi_exit";
    case ExperimentKind::robustness_probe: return "robustness_probe";
    case ExperimentKind::feature_dump: return "feature_dump";
  }
  return "unknown";
}

struct DataSource {
  std::string source = "blobs";  // blobs | mnist | csv
  BlobSpec blobs;
  // mnist
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t validation_size = 5000;  // carved from the end of the MNIST training set
  // csv
  std::string train_csv, validation_csv, test_csv;
  std::size_t classes = 0;
};

struct RobustnessSettings {
  std::vector<double> sigmas{0.0, 0.01, 0.05, 0.1};
  std::size_t repetitions = 20;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::pair_ab;
  DataSource data;
  TrainConfig train;
  std::vector<std::size_t> hidden{16, 16};
  std::vector<std::size_t> hidden2;  // second network; empty = same as first
  std::vector<std::vector<std::size_t>> blocks{{16}, {16}, {16}};
  std::vector<LossMode> arms{LossMode::independent, LossMode::sila, LossMode::dml, LossMode::sila_dml};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> budgets;  // empty: derived from the exit costs
  RobustnessSettings robustness;
  std::string out = "results";

  void validate() const {
    if (seeds.empty()) throw InvalidArgument("experiment config: seed list is empty");
    if (arms.empty()) throw InvalidArgument("experiment config: no arms");
    if (robustness.repetitions == 0) throw InvalidArgument("experiment config: repetitions must be >= 1");
    for (std::size_t i = 1; i < robustness.sigmas.size(); ++i)
      if (!(robustness.sigmas[i] > robustness.sigmas[i - 1]))
        throw InvalidArgument("experiment config: sigmas must be strictly ascending");
  }
};

// ---------------------------------------------------------------------------
// JSON config

namespace detail {

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

inline DataSource data_source_from_json(const nlohmann::json& j) {
  DataSource d;
  detail::read_if(j, "source", d.source);
  detail::read_if(j, "classes", d.blobs.classes);
  detail::read_if(j, "samples_per_class", d.blobs.samples_per_class);
  detail::read_if(j, "center_spread", d.blobs.center_spread);
  detail::read_if(j, "stddev", d.blobs.stddev);
  detail::read_if(j, "dim", d.blobs.dim);
  detail::read_if(j, "seed", d.blobs.seed);
  detail::read_if(j, "train_fraction", d.blobs.train_fraction);
  detail::read_if(j, "validation_fraction", d.blobs.validation_fraction);
  detail::read_if(j, "train_images", d.train_images);
  detail::read_if(j, "train_labels", d.train_labels);
  detail::read_if(j, "test_images", d.test_images);
  detail::read_if(j, "test_labels", d.test_labels);
  detail::read_if(j, "validation_size", d.validation_size);
  detail::read_if(j, "train", d.train_csv);
  detail::read_if(j, "validation", d.validation_csv);
  detail::read_if(j, "test", d.test_csv);
  detail::read_if(j, "classes", d.classes);
  if (d.source != "blobs" && d.source != "mnist" && d.source != "csv")
    throw InvalidArgument("data source must be blobs, mnist or csv, got " + d.source);
  return d;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  detail::read_if(j, "epochs", c.epochs);
  detail::read_if(j, "batch_size", c.batch_size);
  detail::read_if(j, "lr", c.initial_lr);
  detail::read_if(j, "milestones", c.milestones);
  detail::read_if(j, "lr_decay", c.lr_decay);
  detail::read_if(j, "beta", c.beta.beta);
  detail::read_if(j, "lambda_dml", c.lambda_dml);
  detail::read_if(j, "momentum", c.momentum);
  detail::read_if(j, "topk", c.topk);
  if (j.contains("loss_mode")) c.loss_mode = parse_loss_mode(j.at("loss_mode").get<std::string>());
  return c;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    if (j.contains("experiment")) c.kind = parse_experiment_kind(j.at("experiment").get<std::string>());
    if (j.contains("data")) c.data = data_source_from_json(j.at("data"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("network")) detail::read_if(j.at("network"), "hidden", c.hidden);
    if (j.contains("network2")) detail::read_if(j.at("network2"), "hidden", c.hidden2);
    if (j.contains("multi_exit")) detail::read_if(j.at("multi_exit"), "blocks", c.blocks);
    if (j.contains("arms")) {
      c.arms.clear();
      for (const auto& a : j.at("arms")) c.arms.push_back(parse_loss_mode(a.get<std::string>()));
    }
    detail::read_if(j, "seeds", c.seeds);
    detail::read_if(j, "budgets", c.budgets);
    detail::read_if(j, "out", c.out);
    if (j.contains("robustness")) {
      const auto& r = j.at("robustness");
      detail::read_if(r, "sigmas", c.robustness.sigmas);
      detail::read_if(r, "repetitions", c.robustness.repetitions);
      detail::read_if(r, "seed", c.robustness.seed);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("experiment config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  try {
    return experiment_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  std::vector<std::string> arms;
  for (auto a : c.arms) arms.emplace_back(loss_mode_name(a));
  nlohmann::json data = {{"source", c.data.source}};
  if (c.data.source == "blobs")
    data.update({{"classes", c.data.blobs.classes},
                 {"samples_per_class", c.data.blobs.samples_per_class},
                 {"center_spread", c.data.blobs.center_spread},
                 {"stddev", c.data.blobs.stddev},
                 {"dim", c.data.blobs.dim},
                 {"seed", c.data.blobs.seed},
                 {"train_fraction", c.data.blobs.train_fraction},
                 {"validation_fraction", c.data.blobs.validation_fraction}});
  else if (c.data.source == "mnist")
    data.update({{"train_images", c.data.train_images},
                 {"train_labels", c.data.train_labels},
                 {"test_images", c.data.test_images},
                 {"test_labels", c.data.test_labels},
                 {"validation_size", c.data.validation_size}});
  else
    data.update({{"train", c.data.train_csv},
                 {"validation", c.data.validation_csv},
                 {"test", c.data.test_csv},
                 {"classes", c.data.classes}});
  return {{"experiment", experiment_kind_name(c.kind)},
          {"data", data},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"lr", c.train.initial_lr},
            {"milestones", c.train.milestones},
            {"lr_decay", c.train.lr_decay},
            {"beta", c.train.beta.beta},
            {"lambda_dml", c.train.lambda_dml},
            {"momentum", c.train.momentum},
            {"topk", c.train.topk}}},
          {"network", {{"hidden", c.hidden}}},
          {"network2", {{"hidden", c.hidden2.empty() ? c.hidden : c.hidden2}}},
          {"multi_exit", {{"blocks", c.blocks}}},
          {"arms", arms},
          {"seeds", c.seeds},
          {"budgets", c.budgets},
          {"robustness",
           {{"sigmas", c.robustness.sigmas},
            {"repetitions", c.robustness.repetitions},
            {"seed", c.robustness.seed}}},
          {"out", c.out}};
}

inline DatasetSplits load_data(const DataSource& d) {
  if (d.source == "blobs") return generate_blobs(d.blobs);
  if (d.source == "mnist") {
    Dataset full = load_mnist_idx(d.train_images, d.train_labels, Split::train);
    if (d.validation_size == 0 || d.validation_size >= full.size())
      throw InvalidArgument("mnist: validation_size must be in (0, training set size)");
    std::vector<std::size_t> train_idx(full.size() - d.validation_size), val_idx(d.validation_size);
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    std::iota(val_idx.begin(), val_idx.end(), train_idx.size());
    return {full.subset(train_idx, Split::train), full.subset(val_idx, Split::validation),
            load_mnist_idx(d.test_images, d.test_labels, Split::test)};
  }
  if (d.classes < 2) throw InvalidArgument("csv data source needs a class count");
  return {read_dataset_csv(d.train_csv, d.classes, Split::train),
          read_dataset_csv(d.validation_csv, d.classes, Split::validation),
          read_dataset_csv(d.test_csv, d.classes, Split::test)};
}

inline NetworkSpec network_spec(const ExperimentConfig& c, const Dataset& data, bool second = false) {
  NetworkSpec s;
  s.input_dim = data.dim();
  s.classes = data.classes();
  s.hidden = second && !c.hidden2.empty() ? c.hidden2 : c.hidden;
  return s;
}

inline MultiExitSpec multi_exit_spec(const ExperimentConfig& c, const Dataset& data) {
  MultiExitSpec s;
  s.input_dim = data.dim();
  s.classes = data.classes();
  s.blocks = c.blocks;
  return s;
}

// ---------------------------------------------------------------------------
// Small statistics helpers

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw InvalidArgument("median of an empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) throw InvalidArgument("mean of an empty list");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline fs::path seed_dir(const std::string& out, std::uint64_t seed) {
  fs::path p = fs::path(out) / ("seed_" + std::to_string(seed));
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
  return p;
}

inline void ensure_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Pair A/B

struct SummaryRow {
  std::string arm;
  int net = 1;
  std::size_t seeds = 0;
  double top1_median = 0, topk_median = 0, best_median = 0, nll_median = 0;
  double top1_mean = 0, topk_mean = 0, best_mean = 0, nll_mean = 0;
};

struct PairArmRun {
  LossMode arm;
  std::uint64_t seed;
  PairResult result;
};

struct PairAbResult {
  std::vector<PairArmRun> runs;
  std::vector<SummaryRow> summary;
};

inline std::vector<SummaryRow> summarize_pair_runs(const std::vector<PairArmRun>& runs,
                                                   const std::vector<LossMode>& arms) {
  std::vector<SummaryRow> rows;
  for (auto arm : arms)
    for (int net = 1; net <= 2; ++net) {
      std::vector<double> top1, topk, best, nll;
      for (const auto& r : runs) {
        if (r.arm != arm) continue;
        const auto& rep = net == 1 ? r.result.report1 : r.result.report2;
        top1.push_back(rep.final_record().top1);
        topk.push_back(rep.final_record().topk);
        best.push_back(rep.best_top1);
        nll.push_back(rep.final_record().nll);
      }
      if (top1.empty()) continue;
      rows.push_back({loss_mode_name(arm), net, top1.size(), median(top1), median(topk), median(best), median(nll),
                      mean(top1), mean(topk), mean(best), mean(nll)});
    }
  return rows;
}

inline void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << std::setprecision(17)
      << "arm,net,seeds,top1_median,topk_median,best_median,nll_median,top1_mean,topk_mean,best_mean,nll_mean\n";
  for (const auto& r : rows)
    out << r.arm << ',' << r.net << ',' << r.seeds << ',' << r.top1_median << ',' << r.topk_median << ','
        << r.best_median << ',' << r.nll_median << ',' << r.top1_mean << ',' << r.topk_mean << ',' << r.best_mean
        << ',' << r.nll_mean << '\n';
  if (!out) throw IoError("write failed for " + path);
}

/// Trains every arm for every seed with identical data, batch order and
/// initial conditions per seed. Each run is flushed to disk as it finishes.
inline PairAbResult run_pair_ab(const ExperimentConfig& config, const DatasetSplits& data) {
  config.validate();
  PairAbResult out;
  if (!config.out.empty()) ensure_dir(config.out);
  const auto spec1 = network_spec(config, data.train);
  const auto spec2 = network_spec(config, data.train, true);
  for (auto seed : config.seeds) {
    for (auto arm : config.arms) {
      TrainConfig tc = config.train;
      tc.seed = seed;
      tc.loss_mode = arm;
      PairArmRun run{arm, seed, train_pair(spec1, spec2, data.train, data.test, tc)};
      if (!config.out.empty()) {
        auto dir = seed_dir(config.out, seed);
        const std::string stem = loss_mode_name(arm);
        write_report_csv(run.result.report1, (dir / (stem + "_net1.csv")).string());
        write_report_csv(run.result.report2, (dir / (stem + "_net2.csv")).string());
        save_checkpoint((dir / (stem + "_net1.ckpt.json")).string(), run.result.net1);
        save_checkpoint((dir / (stem + "_net2.ckpt.json")).string(), run.result.net2);
      }
      out.runs.push_back(std::move(run));
    }
  }
  out.summary = summarize_pair_runs(out.runs, config.arms);
  if (!config.out.empty()) write_summary_csv(out.summary, (fs::path(config.out) / "summary.csv").string());
  return out;
}

// ---------------------------------------------------------------------------
// Robustness probe

struct RobustnessEntry {
  double sigma = 0.0;
  double mean_delta_nll = 0.0;
  double stddev_delta_nll = 0.0;
};

struct RobustnessReport {
  double base_nll = 0.0;
  std::size_t repetitions = 0;
  std::vector<RobustnessEntry> entries;
};

inline double dataset_nll(const Network& net, const Dataset& data) {
  Tape tape;
  return classification_metrics(forward(tape, net, data.all_features()), data.labels(), 1).nll;
}

/// Mean increase of the NLL on `data` after adding N(0, sigma^2) noise to
/// every parameter. Repetitions come in mirrored pairs (+eps, -eps), which
/// cancels the first-order term of the change exactly; an odd last repetition
/// is unpaired. Repetition r uses the same stream for every sigma, so the
/// perturbation directions are shared across sigmas.
inline RobustnessReport run_robustness_probe(const Network& net, const Dataset& data, const std::vector<double>& sigmas,
                                             std::size_t repetitions, std::uint64_t seed) {
  if (repetitions == 0) throw InvalidArgument("robustness probe: repetitions must be >= 1");
  for (std::size_t i = 1; i < sigmas.size(); ++i)
    if (!(sigmas[i] > sigmas[i - 1])) throw InvalidArgument("robustness probe: sigmas must be strictly ascending");
  RobustnessReport report;
  report.base_nll = dataset_nll(net, data);
  report.repetitions = repetitions;
  for (double sigma : sigmas) {
    std::vector<double> deltas;
    for (std::size_t r = 0; r < repetitions; ++r) {
      Network noisy{net.spec, perturb_parameters(net.params, sigma, derive_seed(seed, r / 2), r % 2 == 1)};
      deltas.push_back(dataset_nll(noisy, data) - report.base_nll);
    }
    const double m = mean(deltas);
    double var = 0.0;
    for (double d : deltas) var += (d - m) * (d - m);
    const double sd = repetitions > 1 ? std::sqrt(var / static_cast<double>(repetitions - 1)) : 0.0;
    report.entries.push_back({sigma, m, sd});
  }
  return report;
}

inline void write_robustness_csv(const RobustnessReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << std::setprecision(17) << "sigma,mean_delta_nll,stddev_delta_nll,repetitions,base_nll\n";
  for (const auto& e : report.entries)
    out << e.sigma << ',' << e.mean_delta_nll << ',' << e.stddev_delta_nll << ',' << report.repetitions << ','
        << report.base_nll << '\n';
  if (!out) throw IoError("write failed for " + path);
}

inline RobustnessReport read_robustness_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "sigma,mean_delta_nll,stddev_delta_nll,repetitions,base_nll")
    throw FormatError(path + ": unexpected header");
  RobustnessReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError(path + ": ragged row");
    try {
      report.entries.push_back({std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2])});
      report.repetitions = std::stoull(cells[3]);
      report.base_nll = std::stod(cells[4]);
    } catch (const std::logic_error&) {
      throw FormatError(path + ": bad number in row");
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Feature dump

/// Writes penultimate features as CSV rows (f0..f{H-1}, label).
inline Dataset run_feature_dump(const Network& net, const Dataset& data, const std::string& path) {
  Tape tape;
  Tensor features = penultimate_features(tape, net, data.all_features());
  Dataset dump(features.cols(), data.classes(), std::vector<double>(features.values().begin(), features.values().end()),
               data.labels(), data.split());
  write_dataset_csv(dump, path);
  return dump;
}

// ---------------------------------------------------------------------------
// Multi-exit

struct MultiExitArmRun {
  LossMode arm;
  std::uint64_t seed;
  MultiExitResult result;
  EvalCurve anytime;
  EvalCurve budgeted;
};

struct MultiExitSummaryRow {
  std::string arm;
  std::size_t exit = 0;  // 1-based in the written file
  double top1_median = 0.0;
  double top1_mean = 0.0;
};

struct MultiExitExperimentResult {
  std::vector<double> anytime_budgets;
  std::vector<double> budgeted_budgets;
  std::vector<MultiExitArmRun> runs;
  std::vector<MultiExitSummaryRow> summary;
};

/// Anytime budgets default to the exit costs; budgeted ones to five evenly
/// spaced points between the cheapest and the full cost.
inline std::vector<double> default_anytime_budgets(const BudgetProfile& p) { return p.cumulative_cost; }

inline std::vector<double> default_budgeted_budgets(const BudgetProfile& p) {
  const double lo = p.cumulative_cost.front(), hi = p.cumulative_cost.back();
  std::vector<double> out;
  for (int i = 0; i < 5; ++i) out.push_back(lo + (hi - lo) * i / 4.0);
  return out;
}

inline void write_multi_exit_summary_csv(const std::vector<MultiExitSummaryRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << std::setprecision(17) << "arm,exit,top1_median,top1_mean\n";
  for (const auto& r : rows) out << r.arm << ',' << r.exit << ',' << r.top1_median << ',' << r.top1_mean << '\n';
  if (!out) throw IoError("write failed for " + path);
}

/// Trains the multi-exit net with siamese coupling and with the per-exit
/// cross-entropy sum, then evaluates both arms under both protocols.
inline MultiExitExperimentResult run_multi_exit(const ExperimentConfig& config, const DatasetSplits& data) {
  config.validate();
  const auto spec = multi_exit_spec(config, data.train);
  spec.validate();
  const auto profile = BudgetProfile::from_spec(spec);
  MultiExitExperimentResult out;
  out.anytime_budgets = config.budgets.empty() ? default_anytime_budgets(profile) : config.budgets;
  out.budgeted_budgets = config.budgets.empty() ? default_budgeted_budgets(profile) : config.budgets;
  if (!config.out.empty()) ensure_dir(config.out);
  for (auto seed : config.seeds) {
    for (auto arm : {LossMode::sila, LossMode::independent}) {
      TrainConfig tc = config.train;
      tc.seed = seed;
      tc.loss_mode = arm;
      MultiExitArmRun run{arm, seed, train_multi_exit(spec, data.train, data.test, tc), {}, {}};
      auto val_preds = collect_exit_predictions(run.result.net, data.validation);
      auto test_preds = collect_exit_predictions(run.result.net, data.test);
      run.anytime = evaluate_anytime(test_preds, profile, out.anytime_budgets);
      std::vector<double> feasible;
      for (double b : out.budgeted_budgets)
        if (b >= profile.cumulative_cost.front()) feasible.push_back(b);
      run.budgeted = evaluate_budgeted(val_preds, test_preds, profile, feasible);
      if (!config.out.empty()) {
        auto dir = seed_dir(config.out, seed);
        const std::string stem = loss_mode_name(arm);
        write_curve_csv(run.anytime, spec.exits(), (dir / (stem + "_anytime.csv")).string());
        write_curve_csv(run.budgeted, spec.exits(), (dir / (stem + "_budgeted.csv")).string());
        for (std::size_t c = 0; c < spec.exits(); ++c)
          write_report_csv(run.result.reports[c], (dir / (stem + "_exit" + std::to_string(c + 1) + ".csv")).string());
        save_checkpoint((dir / (stem + ".ckpt.json")).string(), run.result.net);
      }
      out.runs.push_back(std::move(run));
    }
  }
  for (auto arm : {LossMode::sila, LossMode::independent})
    for (std::size_t c = 0; c < spec.exits(); ++c) {
      std::vector<double> acc;
      for (const auto& r : out.runs)
        if (r.arm == arm) acc.push_back(r.result.reports[c].final_record().top1);
      out.summary.push_back({loss_mode_name(arm), c + 1, median(acc), mean(acc)});
    }
  if (!config.out.empty())
    write_multi_exit_summary_csv(out.summary, (fs::path(config.out) / "multi_exit_summary.csv").string());
  return out;
}

// ---------------------------------------------------------------------------
// Probe and feature experiments train an independent and a siamese pair per
// seed and analyse the first network of each.

inline std::vector<std::pair<LossMode, RobustnessReport>> run_robustness_experiment(const ExperimentConfig& config,
                                                                                    const DatasetSplits& data) {
  ExperimentConfig pair_config = config;
  pair_config.out.clear();
  std::vector<std::pair<LossMode, RobustnessReport>> out;
  for (const auto& run : run_pair_ab(pair_config, data).runs) {
    auto report = run_robustness_probe(run.result.net1, data.train, config.robustness.sigmas,
                                       config.robustness.repetitions, config.robustness.seed);
    if (!config.out.empty())
      write_robustness_csv(report, (seed_dir(config.out, run.seed) /
                                    (std::string("robustness_") + loss_mode_name(run.arm) + ".csv"))
                                       .string());
    out.emplace_back(run.arm, std::move(report));
  }
  return out;
}

inline void run_feature_experiment(const ExperimentConfig& config, const DatasetSplits& data) {
  ExperimentConfig pair_config = config;
  pair_config.out.clear();
  for (const auto& run : run_pair_ab(pair_config, data).runs)
    run_feature_dump(run.result.net1, data.test,
                     (seed_dir(config.out, run.seed) / (std::string("features_") + loss_mode_name(run.arm) + ".csv"))
                         .string());
}

}  // namespace sila
