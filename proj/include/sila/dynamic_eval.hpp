#pragma once

// Anytime prediction and budgeted batch classification for multi-exit
// networks. Exit indices are 0-based.
//
// Budgeted mode follows the geometric exit scheme: for a ratio r >= 0 the
// share of samples leaving at exit k is proportional to r^k. Thresholds for
// a given r are confidence quantiles on a validation set, and r is found by
// bisection so that the validation mean cost stays within the budget.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sila/autodiff.hpp"
#include "sila/data_io.hpp"
#include "sila/error.hpp"
#include "sila/losses.hpp"
#include "sila/models.hpp"

namespace sila {

/// Per-exit cumulative cost and, once calibrated, the C-1 confidence
/// thresholds of the non-final exits.
struct BudgetProfile {
  std::vector<double> cumulative_cost;
  std::vector<double> thresholds;

  static BudgetProfile from_spec(const MultiExitSpec& spec) { return {spec.cumulative_costs(), {}}; }

  std::size_t exits() const noexcept { return cumulative_cost.size(); }
  bool calibrated() const noexcept { return thresholds.size() + 1 == cumulative_cost.size(); }

  void validate() const {
    if (cumulative_cost.empty()) throw InvalidArgument("budget profile: no exits");
    for (std::size_t c = 0; c < cumulative_cost.size(); ++c) {
      if (!(cumulative_cost[c] > 0.0)) throw InvalidArgument("budget profile: costs must be positive");
      if (c > 0 && !(cumulative_cost[c] > cumulative_cost[c - 1]))
        throw InvalidArgument("budget profile: costs must be strictly ascending");
    }
    if (!thresholds.empty() && !calibrated()) throw InvalidArgument("budget profile: need one threshold per non-final exit");
  }
};

/// Threshold that no max-softmax confidence can reach.
inline const double kNeverExit = std::nextafter(1.0, 2.0);

/// Prediction and max-softmax confidence of every exit for every sample.
struct ExitPredictions {
  std::size_t exits = 0;
  std::size_t samples = 0;
  std::vector<std::size_t> predicted;  // [exit * samples + i]
  std::vector<double> confidence;      // [exit * samples + i]
  std::vector<std::size_t> labels;

  std::size_t prediction(std::size_t exit, std::size_t i) const { return predicted[exit * samples + i]; }
  double conf(std::size_t exit, std::size_t i) const { return confidence[exit * samples + i]; }
  bool correct(std::size_t exit, std::size_t i) const { return prediction(exit, i) == labels[i]; }
};

inline ExitPredictions exit_predictions_from_logits(const std::vector<Tensor>& logits, Labels y) {
  ExitPredictions out;
  out.exits = logits.size();
  out.samples = y.size();
  out.labels.assign(y.begin(), y.end());
  for (const auto& z : logits) {
    const std::size_t n = z.cols();
    if (z.rows() != out.samples) throw ShapeError("exit predictions: logits rows do not match labels");
    std::vector<double> probs(z.numel());
    Tape::softmax_rows(z.values(), z.rows(), n, probs);
    for (std::size_t i = 0; i < out.samples; ++i) {
      auto row = std::span<const double>(probs).subspan(i * n, n);
      auto best = std::max_element(row.begin(), row.end());
      out.predicted.push_back(static_cast<std::size_t>(best - row.begin()));
      out.confidence.push_back(*best);
    }
  }
  return out;
}

inline ExitPredictions collect_exit_predictions(const MultiExitNetwork& net, const Dataset& data) {
  Tape tape;
  return exit_predictions_from_logits(forward_multi_exit(tape, net, data.all_features()), data.labels());
}

/// Deepest exit whose cumulative cost fits the budget; exit 0 when none fits.
inline std::size_t anytime_select(const BudgetProfile& profile, double budget) {
  if (!(budget > 0.0)) throw InvalidArgument("anytime_select: budget must be positive");
  std::size_t chosen = 0;
  for (std::size_t c = 0; c < profile.exits(); ++c)
    if (profile.cumulative_cost[c] <= budget) chosen = c;
  return chosen;
}

struct EvalPoint {
  double budget = 0.0;
  double top1 = 0.0;  // percent
  double mean_cost = 0.0;
  std::vector<std::size_t> exit_histogram;

  friend bool operator==(const EvalPoint&, const EvalPoint&) = default;
};

struct EvalCurve {
  std::vector<EvalPoint> points;
  friend bool operator==(const EvalCurve&, const EvalCurve&) = default;
};

namespace detail {

inline void check_predictions(const ExitPredictions& preds, const BudgetProfile& profile) {
  profile.validate();
  if (preds.exits != profile.exits()) throw InvalidArgument("exit predictions and budget profile disagree on exits");
  if (preds.samples == 0) throw InvalidArgument("exit predictions: no samples");
}

inline std::vector<double> sorted_budgets(std::vector<double> budgets) {
  std::sort(budgets.begin(), budgets.end());
  return budgets;
}

inline EvalPoint summarize(const ExitPredictions& preds, const BudgetProfile& profile, double budget,
                           const std::vector<std::size_t>& exit_of) {
  EvalPoint p{budget, 0.0, 0.0, std::vector<std::size_t>(preds.exits, 0)};
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.samples; ++i) {
    const auto c = exit_of[i];
    ++p.exit_histogram[c];
    hits += preds.correct(c, i);
    p.mean_cost += profile.cumulative_cost[c];
  }
  const double n = static_cast<double>(preds.samples);
  p.top1 = 100.0 * static_cast<double>(hits) / n;
  p.mean_cost /= n;
  return p;
}

}  // namespace detail

inline EvalCurve evaluate_anytime(const ExitPredictions& preds, const BudgetProfile& profile,
                                  const std::vector<double>& budgets) {
  detail::check_predictions(preds, profile);
  EvalCurve curve;
  for (double b : detail::sorted_budgets(budgets)) {
    const auto c = anytime_select(profile, b);
    curve.points.push_back(detail::summarize(preds, profile, b, std::vector<std::size_t>(preds.samples, c)));
  }
  return curve;
}

/// Each sample leaves at the first exit whose confidence reaches that exit's
/// threshold; the last exit takes every remaining sample.
inline std::vector<std::size_t> assign_exits(const ExitPredictions& preds, const std::vector<double>& thresholds) {
  if (thresholds.size() + 1 != preds.exits) throw InvalidArgument("assign_exits: need one threshold per non-final exit");
  std::vector<std::size_t> exit_of(preds.samples, preds.exits - 1);
  for (std::size_t i = 0; i < preds.samples; ++i)
    for (std::size_t c = 0; c + 1 < preds.exits; ++c)
      if (preds.conf(c, i) >= thresholds[c]) {
        exit_of[i] = c;
        break;
      }
  return exit_of;
}

inline double mean_exit_cost(const BudgetProfile& profile, const std::vector<std::size_t>& exit_of) {
  double total = 0.0;
  for (auto c : exit_of) total += profile.cumulative_cost[c];
  return total / static_cast<double>(exit_of.size());
}

/// Thresholds that send roughly a share proportional to ratio^k of the
/// samples out at exit k. ratio = infinity sends everything to the last exit.
inline std::vector<double> geometric_thresholds(const ExitPredictions& val, double ratio) {
  const std::size_t exits = val.exits;
  std::vector<double> share(exits, 0.0);
  double w = 1.0, sum = 0.0;
  for (auto& s : share) {
    s = w;
    sum += w;
    w *= ratio;
  }
  if (std::isfinite(sum)) {
    for (auto& s : share) s /= sum;
  } else {
    std::fill(share.begin(), share.end(), 0.0);
    share.back() = 1.0;
  }
  std::vector<bool> remaining(val.samples, true);
  std::vector<double> thresholds;
  for (std::size_t c = 0; c + 1 < exits; ++c) {
    const auto target = static_cast<std::size_t>(std::floor(static_cast<double>(val.samples) * share[c] + 1e-9));
    std::vector<double> conf;
    for (std::size_t i = 0; i < val.samples; ++i)
      if (remaining[i]) conf.push_back(val.conf(c, i));
    std::sort(conf.begin(), conf.end(), std::greater<>());
    double t;
    if (target == 0 || conf.empty())
      t = kNeverExit;
    else if (target >= conf.size())
      t = 0.0;
    else
      t = conf[target - 1];
    thresholds.push_back(t);
    for (std::size_t i = 0; i < val.samples; ++i)
      if (remaining[i] && val.conf(c, i) >= t) remaining[i] = false;
  }
  return thresholds;
}

/// Calibrates thresholds on validation predictions so that the validation
/// mean cost does not exceed the budget.
inline BudgetProfile calibrate_thresholds(const ExitPredictions& val, const BudgetProfile& profile, double budget) {
  detail::check_predictions(val, profile);
  const double min_cost = profile.cumulative_cost.front();
  const double max_cost = profile.cumulative_cost.back();
  if (budget < min_cost)
    throw InvalidArgument("calibrate_thresholds: budget below the cheapest exit cost");
  BudgetProfile out{profile.cumulative_cost, {}};
  if (budget >= max_cost) {
    out.thresholds = geometric_thresholds(val, std::numeric_limits<double>::infinity());
    return out;
  }
  // ratio = t / (1 - t) maps t in [0, 1) onto [0, inf); t = 0 is always feasible.
  auto thresholds_at = [&](double t) { return geometric_thresholds(val, t / (1.0 - t)); };
  double lo = 0.0, hi = 1.0;
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mean_exit_cost(profile, assign_exits(val, thresholds_at(mid))) <= budget)
      lo = mid;
    else
      hi = mid;
  }
  out.thresholds = thresholds_at(lo);
  return out;
}

/// Replays a calibrated exit policy on the given predictions.
inline EvalPoint evaluate_budgeted(const ExitPredictions& test, const BudgetProfile& calibrated, double budget) {
  detail::check_predictions(test, calibrated);
  if (!calibrated.calibrated()) throw InvalidArgument("evaluate_budgeted: profile is not calibrated");
  return detail::summarize(test, calibrated, budget, assign_exits(test, calibrated.thresholds));
}

/// Calibrates on validation predictions for every budget, then evaluates on test.
inline EvalCurve evaluate_budgeted(const ExitPredictions& val, const ExitPredictions& test, const BudgetProfile& profile,
                                   const std::vector<double>& budgets) {
  EvalCurve curve;
  for (double b : detail::sorted_budgets(budgets))
    curve.points.push_back(evaluate_budgeted(test, calibrate_thresholds(val, profile, b), b));
  return curve;
}

/// Columns: budget,top1,mean_cost,exit_1..exit_C
inline void write_curve_csv(const EvalCurve& curve, std::size_t exits, std::ostream& out) {
  out << std::setprecision(17) << "budget,top1,mean_cost";
  for (std::size_t c = 0; c < exits; ++c) out << ",exit_" << c + 1;
  out << '\n';
  for (const auto& p : curve.points) {
    out << p.budget << ',' << p.top1 << ',' << p.mean_cost;
    for (auto h : p.exit_histogram) out << ',' << h;
    out << '\n';
  }
}

inline void write_curve_csv(const EvalCurve& curve, std::size_t exits, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_curve_csv(curve, exits, out);
  if (!out) throw IoError("write failed for " + path);
}

inline EvalCurve read_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("curve csv: missing header");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 4 || line.rfind("budget,top1,mean_cost", 0) != 0) throw FormatError("curve csv: unexpected header");
  EvalCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) throw FormatError("curve csv: ragged row");
    try {
      EvalPoint p{std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2]), {}};
      for (std::size_t c = 3; c < cells.size(); ++c) p.exit_histogram.push_back(std::stoull(cells[c]));
      curve.points.push_back(std::move(p));
    } catch (const std::logic_error&) {
      throw FormatError("curve csv: bad number in row");
    }
  }
  return curve;
}

inline EvalCurve read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_curve_csv(in);
}

}  // namespace sila
