#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "sila/dynamic_eval.hpp"
#include "sila/training.hpp"

using namespace sila;

namespace {

const BudgetProfile kCosts{{10, 20, 30}, {}};

// Random predictions with confidences in [1/N, 1).
ExitPredictions random_predictions(std::uint64_t seed, std::size_t exits, std::size_t samples, std::size_t classes) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> logits;
  for (std::size_t c = 0; c < exits; ++c)
    logits.push_back(Tensor::constant({samples, classes}, oracle::random_vector(rng, samples * classes, -3, 3)));
  std::vector<std::size_t> y(samples);
  for (auto& v : y) v = rng() % classes;
  return exit_predictions_from_logits(logits, y);
}

struct TrainedChain {
  MultiExitNetwork net;
  DatasetSplits data;
};

const TrainedChain& trained_chain() {
  static const TrainedChain t = [] {
    auto data = generate_blobs(BlobSpec{4, 120, 3.0, 1.0, 2, 11});
    TrainConfig config;
    config.epochs = 15;
    config.batch_size = 32;
    config.milestones = {};
    auto out = train_multi_exit({2, 4, {{8}, {8}, {8}}}, data.train, data.validation, config);
    return TrainedChain{std::move(out.net), std::move(data)};
  }();
  return t;
}

}  // namespace

TEST(Anytime, LargestAffordableExit) {
  EXPECT_EQ(anytime_select(kCosts, 25), 1u);
  EXPECT_EQ(anytime_select(kCosts, 30), 2u);
  EXPECT_EQ(anytime_select(kCosts, 5), 0u);
  EXPECT_EQ(anytime_select(kCosts, 1e9), 2u);
  EXPECT_THROW(anytime_select(kCosts, 0.0), InvalidArgument);
}

TEST(Anytime, SelectionIsMonotoneInBudget) {
  std::size_t previous = 0;
  for (double b = 0.5; b < 40; b += 0.25) {
    const auto c = anytime_select(kCosts, b);
    EXPECT_GE(c, previous);
    previous = c;
  }
}

TEST(Anytime, CurveMatchesPerExitAccuracy) {
  const auto& t = trained_chain();
  auto preds = collect_exit_predictions(t.net, t.data.test);
  auto profile = BudgetProfile::from_spec(t.net.spec);
  auto per_exit = evaluate_exits(t.net, t.data.test, 1);
  std::vector<double> budgets{profile.cumulative_cost[2] * 2, 1.0, profile.cumulative_cost[1]};
  auto curve = evaluate_anytime(preds, profile, budgets);
  ASSERT_EQ(curve.points.size(), 3u);
  EXPECT_EQ(curve.points[0].budget, 1.0);  // budgets come back ascending
  const std::size_t expect_exit[] = {0, 1, 2};
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(curve.points[k].top1, per_exit[expect_exit[k]].top1, 1e-9);
    EXPECT_EQ(curve.points[k].mean_cost, profile.cumulative_cost[expect_exit[k]]);
    EXPECT_EQ(curve.points[k].exit_histogram[expect_exit[k]], t.data.test.size());
  }
}

TEST(Predictions, ConfidenceIsMaxSoftmax) {
  auto z = Tensor::constant({2, 3}, {1, 2, 0, -1, -1, 3});
  std::vector<std::size_t> y{1, 0};
  auto p = exit_predictions_from_logits({z}, y);
  auto first = std::vector<double>{1, 2, 0};
  EXPECT_EQ(p.prediction(0, 0), 1u);
  EXPECT_NEAR(p.conf(0, 0), oracle::softmax(first)[1], 1e-15);
  EXPECT_TRUE(p.correct(0, 0));
  EXPECT_FALSE(p.correct(0, 1));
}

TEST(Budgeted, ExtremeThresholds) {
  auto preds = random_predictions(1, 3, 50, 4);
  auto all_last = assign_exits(preds, {kNeverExit, kNeverExit});
  auto all_first = assign_exits(preds, {0.0, 0.0});
  for (std::size_t i = 0; i < preds.samples; ++i) {
    EXPECT_EQ(all_last[i], 2u);
    EXPECT_EQ(all_first[i], 0u);
  }
  BudgetProfile last = kCosts, first = kCosts;
  last.thresholds = {kNeverExit, kNeverExit};
  first.thresholds = {0.0, 0.0};
  auto p_last = evaluate_budgeted(preds, last, 30);
  auto p_first = evaluate_budgeted(preds, first, 10);
  EXPECT_EQ(p_last.mean_cost, 30.0);
  EXPECT_EQ(p_first.mean_cost, 10.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.samples; ++i) hits += preds.correct(2, i);
  EXPECT_NEAR(p_last.top1, 100.0 * static_cast<double>(hits) / 50.0, 1e-12);
}

TEST(Budgeted, CalibrationAtTheCostExtremes) {
  auto val = random_predictions(2, 3, 200, 5);
  auto at_min = calibrate_thresholds(val, kCosts, 10);
  EXPECT_EQ(mean_exit_cost(kCosts, assign_exits(val, at_min.thresholds)), 10.0);
  auto at_max = calibrate_thresholds(val, kCosts, 30);
  EXPECT_EQ(mean_exit_cost(kCosts, assign_exits(val, at_max.thresholds)), 30.0);
  auto above = calibrate_thresholds(val, kCosts, 1000);
  EXPECT_EQ(above.thresholds, at_max.thresholds);
  EXPECT_THROW(calibrate_thresholds(val, kCosts, 9.99), InvalidArgument);
}

TEST(Budgeted, CalibrationStaysWithinBudgetOnValidation) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto val = random_predictions(seed, 3, 300, 4);
    for (double budget : {11.0, 15.0, 19.5, 24.0, 29.0}) {
      auto profile = calibrate_thresholds(val, kCosts, budget);
      ASSERT_TRUE(profile.calibrated());
      const double cost = mean_exit_cost(kCosts, assign_exits(val, profile.thresholds));
      EXPECT_LE(cost, budget);
      EXPECT_GE(cost, 0.9 * budget) << "calibration leaves too much budget unused";
    }
  }
}

TEST(Budgeted, GeometricShares) {
  auto val = random_predictions(3, 3, 700, 6);
  // ratio 1: equal thirds
  auto exit_of = assign_exits(val, geometric_thresholds(val, 1.0));
  std::vector<std::size_t> hist(3, 0);
  for (auto c : exit_of) ++hist[c];
  for (auto h : hist) EXPECT_NEAR(static_cast<double>(h), 700.0 / 3.0, 2.0);
  // ratio 0: everything at the first exit
  for (auto c : assign_exits(val, geometric_thresholds(val, 0.0))) EXPECT_EQ(c, 0u);
}

TEST(Budgeted, MatchesBruteForcePolicyReplay) {
  const auto& t = trained_chain();
  auto val = collect_exit_predictions(t.net, t.data.validation);
  auto profile = BudgetProfile::from_spec(t.net.spec);
  const auto& cost = profile.cumulative_cost;
  std::vector<double> budgets{cost[0] + 0.1 * (cost[2] - cost[0]), 0.5 * (cost[0] + cost[2]), cost[2] - 1.0};
  Tape tape;
  auto logits = forward_multi_exit(tape, t.net, t.data.test.all_features());
  const std::size_t n = t.data.test.size(), classes = 4;
  for (double b : budgets) {
    auto calibrated = calibrate_thresholds(val, profile, b);
    auto point = evaluate_budgeted(collect_exit_predictions(t.net, t.data.test), calibrated, b);
    std::size_t hits = 0;
    double spent = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t exit = 2;
      for (std::size_t c = 0; c < 2; ++c) {
        auto p = oracle::softmax(logits[c].values().subspan(i * classes, classes));
        if (*std::max_element(p.begin(), p.end()) >= calibrated.thresholds[c]) {
          exit = c;
          break;
        }
      }
      auto row = logits[exit].values().subspan(i * classes, classes);
      hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) ==
              t.data.test.labels()[i];
      spent += cost[exit];
    }
    EXPECT_NEAR(point.top1, 100.0 * static_cast<double>(hits) / static_cast<double>(n), 1e-9);
    EXPECT_NEAR(point.mean_cost, spent / static_cast<double>(n), 1e-9);
    std::size_t covered = 0;
    for (auto h : point.exit_histogram) covered += h;
    EXPECT_EQ(covered, n);
  }
}

TEST(Budgeted, CurveIsDeterministicAndSorted) {
  auto val = random_predictions(4, 3, 100, 4), test = random_predictions(5, 3, 100, 4);
  std::vector<double> budgets{25, 12, 18};
  auto a = evaluate_budgeted(val, test, kCosts, budgets);
  auto b = evaluate_budgeted(val, test, kCosts, budgets);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.points[0].budget, 12.0);
  EXPECT_EQ(a.points[2].budget, 25.0);
}

TEST(Budgeted, UncalibratedProfileIsRejected) {
  auto preds = random_predictions(1, 3, 10, 4);
  EXPECT_THROW(evaluate_budgeted(preds, kCosts, 20), InvalidArgument);
  EXPECT_THROW(assign_exits(preds, {0.5}), InvalidArgument);
  BudgetProfile bad{{10, 10, 30}, {}};
  EXPECT_THROW(calibrate_thresholds(preds, bad, 20), InvalidArgument);
}

TEST(CurveCsv, RoundTrips) {
  EvalCurve curve{{{12.5, 61.25, 11.75, {3, 1, 0}}, {30, 70.0 / 3.0, 29.999999999999996, {0, 0, 4}}}};
  std::stringstream ss;
  write_curve_csv(curve, 3, ss);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "budget,top1,mean_cost,exit_1,exit_2,exit_3");
  EXPECT_EQ(read_curve_csv(ss), curve);
  std::stringstream bad("budget,top1\n1,2\n");
  EXPECT_THROW(read_curve_csv(bad), FormatError);
}
