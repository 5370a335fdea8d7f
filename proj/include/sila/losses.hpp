#pragma once

// Cross-entropy, siamese-label group losses and their weighted sum, plus the
// mutual-learning KL term. Group and exit indices are 0-based throughout, so
// the label of sample i for group c sits at column y_i + c * N of the
// concatenated logits.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sila/autodiff.hpp"
#include "sila/error.hpp"

namespace sila {

using Labels = std::span<const std::size_t>;

/// Concatenated logits of C groups of N classes each; group c occupies
/// columns [c*N, (c+1)*N).
struct SiameseLogits {
  Tensor zbar;
  std::size_t groups = 0;
  std::size_t classes = 0;
};

struct LossWeights {
  std::vector<double> beta;

  static LossWeights ones(std::size_t groups) { return {std::vector<double>(groups, 1.0)}; }

  void validate(std::size_t groups) const {
    if (beta.size() != groups)
      throw InvalidArgument("loss weights: " + std::to_string(beta.size()) + " weights for " +
                            std::to_string(groups) + " groups");
    bool any = false;
    for (double b : beta) {
      if (!(b >= 0.0) || !std::isfinite(b)) throw InvalidArgument("loss weights: weights must be finite and >= 0");
      any = any || b > 0.0;
    }
    if (!any) throw InvalidArgument("loss weights: all weights are zero");
  }
};

/// Target logit, log-sum-exp of the other logits, and the two partials of
/// the single-sample cross-entropy with respect to them.
struct LossDiagnostics {
  double z_y = 0.0;
  double alpha = 0.0;
  double d_zy = 0.0;
  double d_alpha = 0.0;
};

namespace detail {

inline void check_labels(const char* what, const Tensor& z, Labels y, std::size_t classes) {
  if (z.rank() != 2) throw ShapeError(std::string(what) + ": logits must be a matrix, got " + shape_string(z.shape()));
  if (y.size() != z.rows())
    throw ShapeError(std::string(what) + ": " + std::to_string(y.size()) + " labels for " +
                     std::to_string(z.rows()) + " rows");
  for (auto label : y)
    if (label >= classes)
      throw InvalidArgument(std::string(what) + ": label " + std::to_string(label) + " out of range for " +
                            std::to_string(classes) + " classes");
}

// mean_i [ LSE(z_i) - z_i[column_i] ]
inline Tensor mean_nll(Tape& tape, const Tensor& z, std::span<const std::size_t> column) {
  Tensor per_sample = tape.add(tape.log_sum_exp(z), tape.scale(tape.gather_cols(z, column), -1.0));
  return tape.reshape(tape.mean_batch(per_sample), {});
}

}  // namespace detail

/// Mean cross-entropy over the batch, (1/B) sum_i [-z_i[y_i] + LSE(z_i)].
inline Tensor cross_entropy(Tape& tape, const Tensor& z, Labels y) {
  detail::check_labels("cross_entropy", z, y, z.cols());
  return detail::mean_nll(tape, z, y);
}

inline LossDiagnostics loss_diagnostics(std::span<const double> z, std::size_t y) {
  if (z.size() < 2) throw InvalidArgument("loss_diagnostics: need at least two classes");
  if (y >= z.size()) throw InvalidArgument("loss_diagnostics: label out of range");
  for (double v : z)
    if (!std::isfinite(v)) throw NonFiniteError("loss_diagnostics: non-finite logit");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < z.size(); ++l)
    if (l != y) mx = std::max(mx, z[l]);
  double s = 0.0;
  for (std::size_t l = 0; l < z.size(); ++l)
    if (l != y) s += std::exp(z[l] - mx);
  LossDiagnostics d;
  d.z_y = z[y];
  d.alpha = mx + std::log(s);
  const double tail = 1.0 / (std::exp(d.z_y - d.alpha) + 1.0);
  d.d_zy = -tail;
  d.d_alpha = tail;
  return d;
}

inline SiameseLogits make_siamese(Tape& tape, const std::vector<Tensor>& groups) {
  if (groups.empty()) throw InvalidArgument("make_siamese: no logit groups");
  const Shape& first = groups.front().shape();
  if (first.size() != 2) throw ShapeError("make_siamese: logits must be a matrix, got " + shape_string(first));
  for (const auto& g : groups)
    if (g.shape() != first)
      throw ShapeError("make_siamese: group shapes differ, " + shape_string(first) + " vs " + shape_string(g.shape()));
  return {tape.concat_cols(groups), groups.size(), first[1]};
}

/// Cross-entropy over all C*N columns with labels shifted into group c.
inline Tensor group_loss(Tape& tape, const SiameseLogits& zbar, Labels y, std::size_t group) {
  if (group >= zbar.groups)
    throw InvalidArgument("group_loss: group " + std::to_string(group) + " out of range for " +
                          std::to_string(zbar.groups) + " groups");
  detail::check_labels("group_loss", zbar.zbar, y, zbar.classes);
  std::vector<std::size_t> shifted(y.begin(), y.end());
  for (auto& label : shifted) label += group * zbar.classes;
  return detail::mean_nll(tape, zbar.zbar, shifted);
}

struct SilaTerms {
  Tensor total;
  std::vector<Tensor> group_losses;
};

/// sum_c beta_c * L_c over the concatenation of all groups, with every
/// group loss kept for reporting.
inline SilaTerms sila_loss_terms(Tape& tape, const std::vector<Tensor>& groups, Labels y, const LossWeights& beta) {
  beta.validate(groups.size());
  auto zbar = make_siamese(tape, groups);
  SilaTerms out;
  for (std::size_t c = 0; c < zbar.groups; ++c) {
    out.group_losses.push_back(group_loss(tape, zbar, y, c));
    Tensor weighted = tape.scale(out.group_losses.back(), beta.beta[c]);
    out.total = c == 0 ? weighted : tape.add(out.total, weighted);
  }
  return out;
}

inline Tensor sila_loss(Tape& tape, const std::vector<Tensor>& groups, Labels y, const LossWeights& beta) {
  return sila_loss_terms(tape, groups, y, beta).total;
}

/// (1/B) sum_i KL(softmax(peer_i) || softmax(student_i)). The peer is
/// copied off the tape, so only the student receives gradient.
inline Tensor dml_kl_loss(Tape& tape, const Tensor& student, const Tensor& peer) {
  if (student.rank() != 2 || student.shape() != peer.shape())
    throw ShapeError("dml_kl_loss: shape mismatch " + shape_string(student.shape()) + " vs " +
                     shape_string(peer.shape()));
  const std::size_t m = student.rows(), n = student.cols();
  auto pv = peer.values();
  std::vector<double> p(m * n), log_p(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double lse = Tape::row_lse(pv.subspan(i * n, n));
    for (std::size_t j = 0; j < n; ++j) {
      log_p[i * n + j] = pv[i * n + j] - lse;
      p[i * n + j] = std::exp(log_p[i * n + j]);
    }
  }
  Tensor target = Tensor::constant(student.shape(), std::move(p));
  Tensor log_ratio =
      tape.add(Tensor::constant(student.shape(), std::move(log_p)), tape.scale(tape.log_softmax(student), -1.0));
  return tape.reshape(tape.scale(tape.sum(tape.mul(target, log_ratio)), 1.0 / static_cast<double>(m)), {});
}

/// SiLa plus lambda times both directions of the mutual-learning KL term.
inline Tensor combined_loss(Tape& tape, const std::vector<Tensor>& groups, Labels y, const LossWeights& beta,
                            double lambda_dml) {
  if (!(lambda_dml >= 0.0) || !std::isfinite(lambda_dml))
    throw InvalidArgument("combined_loss: lambda must be finite and >= 0");
  Tensor total = sila_loss(tape, groups, y, beta);
  if (lambda_dml == 0.0) return total;
  if (groups.size() != 2) throw InvalidArgument("combined_loss: mutual-learning terms need exactly two groups");
  Tensor kl = tape.add(dml_kl_loss(tape, groups[0], groups[1]), dml_kl_loss(tape, groups[1], groups[0]));
  return tape.add(total, tape.scale(kl, lambda_dml));
}

}  // namespace sila
