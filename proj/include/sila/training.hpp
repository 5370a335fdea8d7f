#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sila/autodiff.hpp"
#include "sila/data_io.hpp"
#include "sila/error.hpp"
#include "sila/losses.hpp"
#include "sila/models.hpp"
#include "sila/rng.hpp"

namespace sila {

enum class LossMode { independent, sila, dml, sila_dml };

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::independent: return "independent";
    case LossMode::sila: return "sila";
    case LossMode::dml: return "dml";
    case LossMode::sila_dml: return "sila_dml";
  }
  return "unknown";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "independent") return LossMode::independent;
  if (s == "sila") return LossMode::sila;
  if (s == "dml") return LossMode::dml;
  if (s == "sila_dml") return LossMode::sila_dml;
  throw InvalidArgument("unknown loss mode " + s);
}

/// Defaults follow the CIFAR-scale regimen: batch 128, lr 0.1, ten
/// milestones with a 0.1 decay.
struct TrainConfig {
  std::size_t epochs = 260;
  std::size_t batch_size = 128;
  double initial_lr = 0.1;
  std::vector<std::size_t> milestones{30, 55, 80, 105, 135, 160, 180, 200, 220, 240};
  double lr_decay = 0.1;
  LossWeights beta;  // empty: all ones
  LossMode loss_mode = LossMode::sila;
  double lambda_dml = 1.0;
  std::uint64_t seed = 1;
  double momentum = 0.0;
  std::size_t topk = 0;  // 0: min(5, N - 1)

  void validate() const {
    if (epochs == 0) throw InvalidArgument("train config: epochs must be positive");
    if (batch_size == 0) throw InvalidArgument("train config: batch_size must be at least 1");
    if (!(initial_lr > 0.0)) throw InvalidArgument("train config: initial learning rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay < 1.0)) throw InvalidArgument("train config: lr_decay must lie in (0, 1)");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i] >= epochs) throw InvalidArgument("train config: milestone beyond the last epoch");
      if (i > 0 && milestones[i] <= milestones[i - 1])
        throw InvalidArgument("train config: milestones must be strictly ascending");
    }
    if (!(lambda_dml >= 0.0)) throw InvalidArgument("train config: lambda_dml must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("train config: momentum must lie in [0, 1)");
  }

  LossWeights weights_for(std::size_t groups) const {
    if (beta.beta.empty()) return LossWeights::ones(groups);
    beta.validate(groups);
    return beta;
  }

  std::size_t topk_for(std::size_t classes) const { return topk ? topk : std::min<std::size_t>(5, classes - 1); }
};

/// gamma_0 * decay^(number of milestones <= epoch).
inline double lr_at(const TrainConfig& config, std::size_t epoch) {
  double lr = config.initial_lr;
  for (auto m : config.milestones)
    if (m <= epoch) lr *= config.lr_decay;
  return lr;
}

/// Plain descent step w <- w - lr * grad. Gradients are left for the caller to zero.
inline void sgd_step(ParameterSet& params, double lr) {
  for (auto& e : params) {
    auto g = e.tensor.grad();
    for (double v : g)
      if (!std::isfinite(v)) throw NonFiniteError("sgd_step: non-finite gradient in " + e.name);
  }
  for (auto& e : params) {
    auto w = e.tensor.mutable_values();
    auto g = e.tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
}

/// SGD with optional heavy-ball momentum: v <- mu v + g, w <- w - lr v.
/// With mu = 0 this is exactly sgd_step.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(double momentum = 0.0) : momentum_(momentum) {}

  void step(ParameterSet& params, double lr) {
    if (momentum_ == 0.0) {
      sgd_step(params, lr);
      return;
    }
    if (velocity_.empty())
      for (const auto& e : params) velocity_.emplace_back(e.tensor.numel(), 0.0);
    std::size_t k = 0;
    for (auto& e : params) {
      auto g = e.tensor.grad();
      for (double v : g)
        if (!std::isfinite(v)) throw NonFiniteError("sgd_step: non-finite gradient in " + e.name);
      auto w = e.tensor.mutable_values();
      auto& vel = velocity_[k++];
      for (std::size_t i = 0; i < w.size(); ++i) {
        vel[i] = momentum_ * vel[i] + g[i];
        w[i] -= lr * vel[i];
      }
    }
  }

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

// ---------------------------------------------------------------------------
// Metrics and reports

struct Metrics {
  double top1 = 0.0;  // percent
  double topk = 0.0;  // percent
  double nll = 0.0;   // mean negative log-likelihood
};

/// Top-1/top-k (percent) and mean NLL of logits [B x N] against labels.
/// A sample counts towards top-k when fewer than k logits exceed its target logit.
inline Metrics classification_metrics(const Tensor& logits, Labels y, std::size_t k) {
  const std::size_t m = logits.rows(), n = logits.cols();
  auto v = logits.values();
  std::size_t hit1 = 0, hitk = 0;
  double nll = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    auto row = v.subspan(i * n, n);
    const double target = row[y[i]];
    std::size_t greater = 0;
    for (double z : row) greater += z > target;
    hit1 += greater == 0;
    hitk += greater < k;
    nll += Tape::row_lse(row) - target;
  }
  const double b = static_cast<double>(m);
  return {100.0 * static_cast<double>(hit1) / b, 100.0 * static_cast<double>(hitk) / b, nll / b};
}

inline Metrics evaluate(const Network& net, const Dataset& data, std::size_t k) {
  Tape tape;
  return classification_metrics(forward(tape, net, data.all_features()), data.labels(), k);
}

inline std::vector<Metrics> evaluate_exits(const MultiExitNetwork& net, const Dataset& data, std::size_t k) {
  Tape tape;
  std::vector<Metrics> out;
  for (const auto& z : forward_multi_exit(tape, net, data.all_features()))
    out.push_back(classification_metrics(z, data.labels(), k));
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  std::vector<double> loss_terms;
  double top1 = 0.0;
  double topk = 0.0;
  double nll = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
  std::vector<std::string> term_names;
  std::vector<EpochRecord> epochs;
  double best_top1 = 0.0;

  const EpochRecord& final_record() const {
    if (epochs.empty()) throw InvalidArgument("train report: no epochs recorded");
    return epochs.back();
  }

  void append(EpochRecord record) {
    best_top1 = epochs.empty() ? record.top1 : std::max(best_top1, record.top1);
    epochs.push_back(std::move(record));
  }

  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

/// Columns: epoch,lr,loss_total,loss_<term>...,top1,topk,nll
inline void write_report_csv(const TrainReport& report, std::ostream& out) {
  out << std::setprecision(17) << "epoch,lr,loss_total";
  for (const auto& t : report.term_names) out << ",loss_" << t;
  out << ",top1,topk,nll\n";
  for (const auto& r : report.epochs) {
    out << r.epoch << ',' << r.lr << ',' << r.loss_total;
    for (double v : r.loss_terms) out << ',' << v;
    out << ',' << r.top1 << ',' << r.topk << ',' << r.nll << '\n';
  }
}

inline void write_report_csv(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_report_csv(report, out);
  if (!out) throw IoError("write failed for " + path);
}

inline TrainReport read_report_csv(std::istream& in) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw FormatError("report csv: missing header");
  auto header = split(line);
  if (header.size() < 6 || header[0] != "epoch" || header[1] != "lr" || header[2] != "loss_total" ||
      header[header.size() - 3] != "top1" || header[header.size() - 2] != "topk" || header.back() != "nll")
    throw FormatError("report csv: unexpected header");
  TrainReport report;
  for (std::size_t i = 3; i + 3 < header.size(); ++i) {
    if (header[i].rfind("loss_", 0) != 0) throw FormatError("report csv: bad term column " + header[i]);
    report.term_names.push_back(header[i].substr(5));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) throw FormatError("report csv: ragged row");
    try {
      EpochRecord r;
      r.epoch = std::stoull(cells[0]);
      r.lr = std::stod(cells[1]);
      r.loss_total = std::stod(cells[2]);
      for (std::size_t i = 3; i + 3 < cells.size(); ++i) r.loss_terms.push_back(std::stod(cells[i]));
      r.top1 = std::stod(cells[cells.size() - 3]);
      r.topk = std::stod(cells[cells.size() - 2]);
      r.nll = std::stod(cells.back());
      report.append(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError("report csv: bad number in row");
    }
  }
  return report;
}

inline TrainReport read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_report_csv(in);
}

// ---------------------------------------------------------------------------
// Training loops

namespace detail {

// Seeds: stream 0 drives the batch order, streams 1.. the initializations.
inline std::uint64_t order_seed(const TrainConfig& c) { return derive_seed(c.seed, 0); }
inline std::uint64_t init_seed(const TrainConfig& c, std::uint64_t which) { return derive_seed(c.seed, which); }

struct TermAccumulator {
  double total = 0.0;
  std::vector<double> terms;
  std::size_t samples = 0;

  void add(std::size_t batch, const Tensor& total_loss, const std::vector<Tensor>& term_losses) {
    const double w = static_cast<double>(batch);
    total += w * total_loss.item();
    if (terms.empty()) terms.assign(term_losses.size(), 0.0);
    for (std::size_t i = 0; i < term_losses.size(); ++i) terms[i] += w * term_losses[i].item();
    samples += batch;
  }

  EpochRecord record(std::size_t epoch, double lr, const Metrics& m) const {
    const double n = static_cast<double>(samples);
    EpochRecord r{epoch, lr, total / n, terms, m.top1, m.topk, m.nll};
    for (auto& t : r.loss_terms) t /= n;
    return r;
  }
};

}  // namespace detail

/// Plain cross-entropy training of one network. The initialization seed
/// defaults to the one train_pair uses for its first network.
inline std::pair<Network, TrainReport> train_network(const NetworkSpec& spec, const Dataset& train,
                                                     const Dataset& eval, const TrainConfig& config,
                                                     std::optional<std::uint64_t> init = std::nullopt) {
  config.validate();
  if (spec.classes != train.classes()) throw InvalidArgument("train_network: class count mismatch with data");
  Network net = build_network(spec, init.value_or(detail::init_seed(config, 1)));
  SgdOptimizer opt(config.momentum);
  TrainReport report;
  report.term_names = {"ce"};
  const std::size_t k = config.topk_for(spec.classes);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    detail::TermAccumulator acc;
    for (const auto& idx : batches(train, config.batch_size, detail::order_seed(config), epoch)) {
      Tape tape;
      auto y = train.batch_labels(idx);
      Tensor loss = cross_entropy(tape, forward(tape, net, train.batch_features(idx)), y);
      tape.backward(loss);
      opt.step(net.params, lr);
      net.params.zero_grads();
      acc.add(idx.size(), loss, {loss});
    }
    report.append(acc.record(epoch, lr, evaluate(net, eval, k)));
  }
  return {std::move(net), std::move(report)};
}

struct PairResult {
  Network net1;
  Network net2;
  TrainReport report1;
  TrainReport report2;
};

inline std::vector<std::string> pair_term_names(LossMode mode) {
  switch (mode) {
    case LossMode::independent: return {"ce_1", "ce_2"};
    case LossMode::sila: return {"group_1", "group_2"};
    case LossMode::dml: return {"ce_1", "ce_2", "kl_1", "kl_2"};
    case LossMode::sila_dml: return {"group_1", "group_2", "kl_1", "kl_2"};
  }
  return {};
}

/// Loss of one joint step over two networks' logits, split into the
/// reported terms. kl_1 is KL(p2 || p1), the term that updates network 1.
inline std::pair<Tensor, std::vector<Tensor>> pair_loss(Tape& tape, const Tensor& z1, const Tensor& z2, Labels y,
                                                        const TrainConfig& config) {
  std::vector<Tensor> terms;
  Tensor total;
  const bool coupled = config.loss_mode == LossMode::sila || config.loss_mode == LossMode::sila_dml;
  if (coupled) {
    auto sila = sila_loss_terms(tape, {z1, z2}, y, config.weights_for(2));
    terms = sila.group_losses;
    total = sila.total;
  } else {
    terms = {cross_entropy(tape, z1, y), cross_entropy(tape, z2, y)};
    total = tape.add(terms[0], terms[1]);
  }
  if (config.loss_mode == LossMode::dml || config.loss_mode == LossMode::sila_dml) {
    Tensor kl1 = dml_kl_loss(tape, z1, z2);
    Tensor kl2 = dml_kl_loss(tape, z2, z1);
    terms.push_back(kl1);
    terms.push_back(kl2);
    total = tape.add(total, tape.scale(tape.add(kl1, kl2), config.lambda_dml));
  }
  return {total, terms};
}

/// Joint training of two networks: every step samples one batch for both,
/// computes the configured joint loss and applies one backward pass that
/// updates both parameter sets.
inline PairResult train_pair(const NetworkSpec& spec1, const NetworkSpec& spec2, const Dataset& train,
                             const Dataset& eval, const TrainConfig& config) {
  config.validate();
  if (spec1.classes != spec2.classes) throw InvalidArgument("train_pair: networks disagree on class count");
  if (spec1.classes != train.classes()) throw InvalidArgument("train_pair: class count mismatch with data");
  PairResult out{build_network(spec1, detail::init_seed(config, 1)), build_network(spec2, detail::init_seed(config, 2)),
                 {}, {}};
  out.report1.term_names = out.report2.term_names = pair_term_names(config.loss_mode);
  SgdOptimizer opt1(config.momentum), opt2(config.momentum);
  const std::size_t k = config.topk_for(spec1.classes);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    detail::TermAccumulator acc;
    for (const auto& idx : batches(train, config.batch_size, detail::order_seed(config), epoch)) {
      Tape tape;
      auto y = train.batch_labels(idx);
      Tensor x = train.batch_features(idx);
      auto [total, terms] = pair_loss(tape, forward(tape, out.net1, x), forward(tape, out.net2, x), y, config);
      tape.backward(total);
      opt1.step(out.net1.params, lr);
      opt2.step(out.net2.params, lr);
      out.net1.params.zero_grads();
      out.net2.params.zero_grads();
      acc.add(idx.size(), total, terms);
    }
    out.report1.append(acc.record(epoch, lr, evaluate(out.net1, eval, k)));
    out.report2.append(acc.record(epoch, lr, evaluate(out.net2, eval, k)));
  }
  return out;
}

struct MultiExitResult {
  MultiExitNetwork net;
  std::vector<TrainReport> reports;  // one per exit
};

/// Loss over all exits: the weighted siamese loss in sila mode, the plain
/// sum of per-exit cross-entropies in independent mode.
inline std::pair<Tensor, std::vector<Tensor>> multi_exit_loss(Tape& tape, const std::vector<Tensor>& logits, Labels y,
                                                              const TrainConfig& config) {
  if (config.loss_mode == LossMode::sila) {
    auto sila = sila_loss_terms(tape, logits, y, config.weights_for(logits.size()));
    return {sila.total, sila.group_losses};
  }
  if (config.loss_mode != LossMode::independent)
    throw InvalidArgument(std::string("multi-exit training does not support loss mode ") +
                          loss_mode_name(config.loss_mode));
  std::vector<Tensor> terms;
  Tensor total;
  for (const auto& z : logits) {
    terms.push_back(cross_entropy(tape, z, y));
    total = total.defined() ? tape.add(total, terms.back()) : terms.back();
  }
  return {total, terms};
}

inline MultiExitResult train_multi_exit(const MultiExitSpec& spec, const Dataset& train, const Dataset& eval,
                                        const TrainConfig& config) {
  config.validate();
  if (spec.classes != train.classes()) throw InvalidArgument("train_multi_exit: class count mismatch with data");
  MultiExitResult out{build_multi_exit(spec, detail::init_seed(config, 1)), {}};
  const std::size_t exits = spec.exits();
  std::vector<std::string> names;
  for (std::size_t c = 0; c < exits; ++c)
    names.push_back((config.loss_mode == LossMode::sila ? "group_" : "ce_") + std::to_string(c + 1));
  out.reports.assign(exits, TrainReport{names, {}, 0.0});
  SgdOptimizer opt(config.momentum);
  const std::size_t k = config.topk_for(spec.classes);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    detail::TermAccumulator acc;
    for (const auto& idx : batches(train, config.batch_size, detail::order_seed(config), epoch)) {
      Tape tape;
      auto y = train.batch_labels(idx);
      auto [total, terms] = multi_exit_loss(tape, forward_multi_exit(tape, out.net, train.batch_features(idx)), y,
                                            config);
      tape.backward(total);
      opt.step(out.net.params, lr);
      out.net.params.zero_grads();
      acc.add(idx.size(), total, terms);
    }
    auto metrics = evaluate_exits(out.net, eval, k);
    for (std::size_t c = 0; c < exits; ++c) out.reports[c].append(acc.record(epoch, lr, metrics[c]));
  }
  return out;
}

}  // namespace sila
