// Command-line driver for the experiments. Every subcommand reads an optional
// JSON config (--config); --out, --seeds, --experiment and --budgets override
// the file. Failures print one line, "error: <category>: <message>", to
// stderr and exit nonzero.

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sila/sila.hpp"

namespace {

using namespace sila;

struct CommonFlags {
  std::string config;
  std::string out;
  std::string seeds;
  std::string experiment;
  std::string budgets;
  std::string checkpoint;
};

template <class T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::stringstream cell(item);
    T v{};
    if (!(cell >> v) || !cell.eof()) throw InvalidArgument(std::string(flag) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InvalidArgument(std::string(flag) + ": empty list");
  return out;
}

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_experiment_config(f.config);
  if (!f.out.empty()) c.out = f.out;
  if (!f.seeds.empty()) c.seeds = parse_list<std::uint64_t>(f.seeds, "--seeds");
  if (!f.experiment.empty()) c.kind = parse_experiment_kind(f.experiment);
  if (!f.budgets.empty()) c.budgets = parse_list<double>(f.budgets, "--budgets");
  c.validate();
  ensure_dir(c.out);
  return c;
}

void write_resolved_config(const ExperimentConfig& c) {
  detail::write_text((fs::path(c.out) / "config.resolved.json").string(), experiment_config_to_json(c).dump(2) + "\n");
}

int gen_data(const CommonFlags& f) {
  auto c = resolve_config(f);
  auto data = load_data(c.data);
  write_dataset_csv(data.train, (fs::path(c.out) / "train.csv").string());
  write_dataset_csv(data.validation, (fs::path(c.out) / "validation.csv").string());
  write_dataset_csv(data.test, (fs::path(c.out) / "test.csv").string());
  std::printf("wrote %zu/%zu/%zu samples to %s\n", data.train.size(), data.validation.size(), data.test.size(),
              c.out.c_str());
  return 0;
}

int train_pair_cmd(const CommonFlags& f) {
  auto c = resolve_config(f);
  write_resolved_config(c);
  auto result = run_pair_ab(c, load_data(c.data));
  for (const auto& row : result.summary)
    std::printf("%-12s net%d  top1 %.2f  best %.2f  nll %.4f\n", row.arm.c_str(), row.net, row.top1_median,
                row.best_median, row.nll_median);
  return 0;
}

int train_dynamic(const CommonFlags& f) {
  auto c = resolve_config(f);
  write_resolved_config(c);
  auto result = run_multi_exit(c, load_data(c.data));
  for (const auto& row : result.summary)
    std::printf("%-12s exit %zu  top1 %.2f\n", row.arm.c_str(), row.exit, row.top1_median);
  return 0;
}

MultiExitNetwork require_multi_exit(const CommonFlags& f) {
  if (f.checkpoint.empty()) throw InvalidArgument("--checkpoint is required");
  return load_multi_exit(f.checkpoint);
}

int eval_anytime(const CommonFlags& f) {
  auto c = resolve_config(f);
  auto net = require_multi_exit(f);
  auto data = load_data(c.data);
  auto profile = BudgetProfile::from_spec(net.spec);
  auto budgets = c.budgets.empty() ? default_anytime_budgets(profile) : c.budgets;
  auto curve = evaluate_anytime(collect_exit_predictions(net, data.test), profile, budgets);
  write_curve_csv(curve, net.spec.exits(), (fs::path(c.out) / "anytime.csv").string());
  for (const auto& p : curve.points) std::printf("budget %.1f  top1 %.2f\n", p.budget, p.top1);
  return 0;
}

int eval_budgeted(const CommonFlags& f) {
  auto c = resolve_config(f);
  auto net = require_multi_exit(f);
  auto data = load_data(c.data);
  auto profile = BudgetProfile::from_spec(net.spec);
  auto budgets = c.budgets.empty() ? default_budgeted_budgets(profile) : c.budgets;
  auto curve = evaluate_budgeted(collect_exit_predictions(net, data.validation), collect_exit_predictions(net, data.test),
                                 profile, budgets);
  write_curve_csv(curve, net.spec.exits(), (fs::path(c.out) / "budgeted.csv").string());
  for (const auto& p : curve.points)
    std::printf("budget %.1f  top1 %.2f  mean cost %.1f\n", p.budget, p.top1, p.mean_cost);
  return 0;
}

int probe_robustness(const CommonFlags& f) {
  auto c = resolve_config(f);
  auto data = load_data(c.data);
  if (!f.checkpoint.empty()) {
    auto report = run_robustness_probe(load_network(f.checkpoint), data.train, c.robustness.sigmas,
                                       c.robustness.repetitions, c.robustness.seed);
    write_robustness_csv(report, (fs::path(c.out) / "robustness.csv").string());
    for (const auto& e : report.entries) std::printf("sigma %.3f  dNLL %.6f\n", e.sigma, e.mean_delta_nll);
    return 0;
  }
  write_resolved_config(c);
  for (const auto& [arm, report] : run_robustness_experiment(c, data))
    std::printf("%-12s dNLL(sigma=%.3f) %.6f\n", loss_mode_name(arm), report.entries.back().sigma,
                report.entries.back().mean_delta_nll);
  return 0;
}

int dump_features(const CommonFlags& f) {
  auto c = resolve_config(f);
  auto data = load_data(c.data);
  if (!f.checkpoint.empty()) {
    auto dump = run_feature_dump(load_network(f.checkpoint), data.test, (fs::path(c.out) / "features.csv").string());
    std::printf("wrote %zu rows of width %zu\n", dump.size(), dump.dim());
    return 0;
  }
  write_resolved_config(c);
  run_feature_experiment(c, data);
  return 0;
}

int run_experiment(const CommonFlags& f) {
  auto c = resolve_config(f);
  switch (c.kind) {
    case ExperimentKind::pair_ab: return train_pair_cmd(f);
    case ExperimentKind::multi_exit: return train_dynamic(f);
    case ExperimentKind::robustness_probe: return probe_robustness(f);
    case ExperimentKind::feature_dump: return dump_features(f);
  }
  return 0;
}

void fail(const std::string& category, const std::string& message) {
  std::string line = message;
  for (auto& ch : line)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::fprintf(stderr, "error: %s: %s\n", category.c_str(), line.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese-label training and dynamic-evaluation experiments"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
    sub->add_option("--config", flags.config, "JSON experiment config");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--seeds", flags.seeds, "comma-separated seed list");
    sub->add_option("--experiment", flags.experiment, "pair_ab | multi_exit | robustness_probe | feature_dump");
    sub->add_option("--budgets", flags.budgets, "comma-separated budgets");
    if (with_checkpoint) sub->add_option("--checkpoint", flags.checkpoint, "trained network checkpoint");
  };

  struct Command {
    const char* name;
    const char* help;
    bool checkpoint;
    int (*fn)(const CommonFlags&);
  };
  const Command commands[] = {
      {"gen-data", "write the configured dataset splits as CSV", false, gen_data},
      {"train-pair", "train network pairs for every arm and seed", false, train_pair_cmd},
      {"train-dynamic", "train and evaluate multi-exit networks", false, train_dynamic},
      {"eval-anytime", "anytime evaluation of a multi-exit checkpoint", true, eval_anytime},
      {"eval-budgeted", "budgeted evaluation of a multi-exit checkpoint", true, eval_budgeted},
      {"probe-robustness", "NLL change under parameter noise", true, probe_robustness},
      {"dump-features", "penultimate-layer features as CSV", true, dump_features},
      {"run", "run the experiment named by --experiment or the config", false, run_experiment},
  };
  int (*selected)(const CommonFlags&) = nullptr;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub, cmd.checkpoint);
    sub->callback([&selected, fn = cmd.fn] { selected = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    return selected(flags);
  } catch (const IdxError& e) {
    fail(e.category(), e.what());
    return 3;
  } catch (const Error& e) {
    fail(e.category(), e.what());
    return 3;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 4;
  }
}
