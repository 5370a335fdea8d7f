#pragma once

// Define-by-run reverse-mode automatic differentiation over dense f64 tensors.
//
// A Tensor is a shared handle to a value buffer and, when it participates in
// differentiation, a gradient buffer of identical length. A Tape records every
// primitive applied through it; Tape::backward replays the records in reverse
// and accumulates d(root)/d(leaf) into each differentiable leaf.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sila/error.hpp"

namespace sila {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = next_node_id();
};

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  /// Non-differentiable tensor. Throws on shape/length mismatch or non-finite values.
  static Tensor constant(Shape shape, std::vector<double> values) {
    return make(std::move(shape), std::move(values), false);
  }

  /// Differentiable leaf with a zeroed gradient buffer.
  static Tensor parameter(Shape shape, std::vector<double> values) {
    return make(std::move(shape), std::move(values), true);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> values(shape_numel(shape), 0.0);
    return make(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor scalar(double value) { return constant({}, {value}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return node().values.size(); }
  std::size_t rows() const { return rank() >= 1 ? shape()[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? shape()[1] : 1; }
  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().is_leaf; }
  std::uint64_t id() const { return node().id; }

  std::span<const double> values() const { return node().values; }
  std::span<double> mutable_values() { return node().values; }
  std::span<const double> grad() const { return node().grad; }
  std::span<double> mutable_grad() { return node().grad; }

  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_string(shape()) + " is not a scalar");
    return node().values[0];
  }

  double at(std::size_t r, std::size_t c) const { return node().values[r * cols() + c]; }

  void zero_grad() {
    auto& g = node().grad;
    std::fill(g.begin(), g.end(), 0.0);
  }

  /// Deep copy preserving requires_grad; the copy is a fresh leaf.
  Tensor clone() const { return make(shape(), node().values, requires_grad()); }

  /// Constant copy outside any tape (stop-gradient).
  Tensor detach() const { return make(shape(), node().values, false); }

  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  friend class Tape;

  static Tensor make(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    if (!detail::all_finite(values)) throw NonFiniteError("tensor: non-finite input value");
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    if (requires_grad) t.node_->grad.assign(t.node_->values.size(), 0.0);
    return t;
  }

  detail::Node& node() const {
    if (!node_) throw InvalidArgument("tensor: use of an undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::Node> node_;
};

inline void zero_grads(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::size_t size() const noexcept { return ops_.size(); }

  Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) shape_mismatch("matmul", a, b);
    std::vector<double> out(m * n, 0.0);
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
      }
    return record("matmul", {a, b}, {m, n}, std::move(out), [m, k, n](Op& op) {
      auto g = op.output.grad();
      Tensor& a = op.inputs[0];
      Tensor& b = op.inputs[1];
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        auto bv = b.values();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
            ga[i * k + p] += s;
          }
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        auto av = a.values();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
          }
      }
    });
  }

  Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch("add", a, b);
    std::vector<double> out(a.numel());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return record("add", {a, b}, a.shape(), std::move(out), [](Op& op) {
      auto g = op.output.grad();
      for (auto& in : op.inputs) {
        if (!in.requires_grad()) continue;
        auto gi = in.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_mismatch("mul", a, b);
    std::vector<double> out(a.numel());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return record("mul", {a, b}, a.shape(), std::move(out), [](Op& op) {
      auto g = op.output.grad();
      Tensor& a = op.inputs[0];
      Tensor& b = op.inputs[1];
      auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }

  Tensor relu(const Tensor& a) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
    return record("relu", {a}, a.shape(), std::move(out), [](Op& op) {
      Tensor& a = op.inputs[0];
      auto g = op.output.grad();
      auto av = a.values();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > 0.0) ga[i] += g[i];
    });
  }

  /// x[m x n] + bias broadcast over rows; bias is [n] or [1 x n].
  Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_matrix("add_bias", x);
    const std::size_t m = x.rows(), n = x.cols();
    if (bias.numel() != n || bias.rank() > 2 || (bias.rank() == 2 && bias.rows() != 1))
      shape_mismatch("add_bias", x, bias);
    std::vector<double> out(x.values().begin(), x.values().end());
    auto bv = bias.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
    return record("add_bias", {x, bias}, x.shape(), std::move(out), [m, n](Op& op) {
      auto g = op.output.grad();
      Tensor& x = op.inputs[0];
      Tensor& b = op.inputs[1];
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }

  Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
      throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
    std::vector<double> out(a.values().begin(), a.values().end());
    return record("reshape", {a}, std::move(shape), std::move(out), [](Op& op) {
      auto g = op.output.grad();
      auto ga = op.inputs[0].mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  /// Concatenate matrices along the class (column) axis.
  Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
    for (const auto& p : parts) require_matrix("concat_cols", p);
    const std::size_t m = parts[0].rows();
    std::vector<std::size_t> offsets;
    std::size_t width = 0;
    for (const auto& p : parts) {
      if (p.rows() != m) shape_mismatch("concat_cols", parts[0], p);
      offsets.push_back(width);
      width += p.cols();
    }
    std::vector<double> out(m * width);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t w = parts[k].cols();
      auto pv = parts[k].values();
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                    out.begin() + static_cast<std::ptrdiff_t>(i * width + offsets[k]));
    }
    return record("concat_cols", parts, {m, width}, std::move(out),
                  [m, width, offsets](Op& op) {
                    auto g = op.output.grad();
                    for (std::size_t k = 0; k < op.inputs.size(); ++k) {
                      Tensor& p = op.inputs[k];
                      if (!p.requires_grad()) continue;
                      const std::size_t w = p.cols();
                      auto gp = p.mutable_grad();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * width + offsets[k] + j];
                    }
                  });
  }

  /// Row-wise log-sum-exp, [m x n] -> [m x 1], computed in the max-shifted form.
  Tensor log_sum_exp(const Tensor& a) {
    require_matrix("log_sum_exp", a);
    const std::size_t m = a.rows(), n = a.cols();
    auto av = a.values();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = row_lse(av.subspan(i * n, n));
    return record("log_sum_exp", {a}, {m, 1}, std::move(out), [m, n](Op& op) {
      Tensor& a = op.inputs[0];
      auto g = op.output.grad();
      auto lse = op.output.values();
      auto av = a.values();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * std::exp(av[i * n + j] - lse[i]);
    });
  }

  /// Row-wise softmax.
  Tensor softmax(const Tensor& a) {
    require_matrix("softmax", a);
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(a.numel());
    softmax_rows(a.values(), m, n, out);
    return record("softmax", {a}, a.shape(), std::move(out), [m, n](Op& op) {
      auto g = op.output.grad();
      auto s = op.output.values();
      auto ga = op.inputs[0].mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * s[i * n + j];
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += s[i * n + j] * (g[i * n + j] - dot);
      }
    });
  }

  /// Row-wise log-softmax, z - LSE(z).
  Tensor log_softmax(const Tensor& a) {
    require_matrix("log_softmax", a);
    const std::size_t m = a.rows(), n = a.cols();
    auto av = a.values();
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < m; ++i) {
      const double lse = row_lse(av.subspan(i * n, n));
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] - lse;
    }
    return record("log_softmax", {a}, a.shape(), std::move(out), [m, n](Op& op) {
      auto g = op.output.grad();
      auto ls = op.output.values();
      auto ga = op.inputs[0].mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += g[i * n + j];
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] - std::exp(ls[i * n + j]) * gsum;
      }
    });
  }

  /// Mean over the batch (row) axis, [m x n] -> [1 x n].
  Tensor mean_batch(const Tensor& a) {
    require_matrix("mean_batch", a);
    const std::size_t m = a.rows(), n = a.cols();
    auto av = a.values();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
    for (auto& v : out) v /= static_cast<double>(m);
    return record("mean_batch", {a}, {1, n}, std::move(out), [m, n](Op& op) {
      auto g = op.output.grad();
      auto ga = op.inputs[0].mutable_grad();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
    });
  }

  Tensor scale(const Tensor& a, double factor) {
    if (!std::isfinite(factor)) throw NonFiniteError("scale: non-finite factor");
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= factor;
    return record("scale", {a}, a.shape(), std::move(out), [factor](Op& op) {
      auto g = op.output.grad();
      auto ga = op.inputs[0].mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
  }

  /// Sum of all elements to a rank-0 scalar.
  Tensor sum(const Tensor& a) {
    auto av = a.values();
    const double s = std::accumulate(av.begin(), av.end(), 0.0);
    return record("sum", {a}, {}, {s}, [](Op& op) {
      const double g = op.output.grad()[0];
      auto ga = op.inputs[0].mutable_grad();
      for (auto& v : ga) v += g;
    });
  }

  /// Picks one column per row: out[i] = a[i, index[i]], [m x n] -> [m x 1].
  Tensor gather_cols(const Tensor& a, std::span<const std::size_t> index) {
    require_matrix("gather_cols", a);
    const std::size_t m = a.rows(), n = a.cols();
    if (index.size() != m)
      throw ShapeError("gather_cols: " + std::to_string(index.size()) + " indices for " + shape_string(a.shape()));
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
      if (idx[i] >= n)
        throw InvalidArgument("gather_cols: index " + std::to_string(idx[i]) + " out of range for " +
                              std::to_string(n) + " columns");
      out[i] = a.values()[i * n + idx[i]];
    }
    return record("gather_cols", {a}, {m, 1}, std::move(out), [n, idx = std::move(idx)](Op& op) {
      auto g = op.output.grad();
      auto ga = op.inputs[0].mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) ga[i * n + idx[i]] += g[i];
    });
  }

  /// Accumulates d(root)/d(leaf) into every differentiable leaf reachable from root.
  /// Intermediate gradients on this tape are reset first, so calling backward
  /// twice adds the leaf gradients twice.
  void backward(const Tensor& root) {
    if (root.numel() != 1)
      throw ShapeError("backward: root " + shape_string(root.shape()) + " is not a scalar");
    if (!root.requires_grad()) return;
    for (auto& op : ops_)
      if (op.output.requires_grad()) op.output.zero_grad();
    Tensor r = root;
    r.mutable_grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (!it->output.requires_grad()) continue;
      if (!detail::all_finite(it->output.grad()))
        throw NonFiniteError(std::string("backward: non-finite gradient at ") + std::string(it->name));
      it->backward(*it);
    }
    for (auto& op : ops_)
      for (auto& in : op.inputs)
        if (in.is_leaf() && in.requires_grad() && !detail::all_finite(in.grad()))
          throw NonFiniteError("backward: non-finite leaf gradient");
  }

  static double row_lse(std::span<const double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    return mx + std::log(s);
  }

  static void softmax_rows(std::span<const double> in, std::size_t m, std::size_t n, std::span<double> out) {
    for (std::size_t i = 0; i < m; ++i) {
      auto row = in.subspan(i * n, n);
      const double mx = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += (out[i * n + j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
    }
  }

 private:
  struct Op {
    std::string_view name;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(Op&)> backward;
  };

  Tensor record(std::string_view name, std::vector<Tensor> inputs, Shape shape, std::vector<double> values,
                std::function<void(Op&)> backward_rule) {
    bool needs_grad = false;
    for (const auto& in : inputs) {
      if (!detail::all_finite(in.values()))
        throw NonFiniteError(std::string(name) + ": non-finite input " + shape_string(in.shape()));
      needs_grad = needs_grad || in.requires_grad();
    }
    if (!detail::all_finite(values)) throw NonFiniteError(std::string(name) + ": non-finite output");
    Tensor out = Tensor::make(std::move(shape), std::move(values), needs_grad);
    out.node_->is_leaf = false;
    ops_.push_back(Op{name, std::move(inputs), out, std::move(backward_rule)});
    return out;
  }

  static void require_matrix(std::string_view name, const Tensor& t) {
    if (t.rank() != 2)
      throw ShapeError(std::string(name) + ": expected a matrix, got " + shape_string(t.shape()));
  }

  [[noreturn]] static void shape_mismatch(std::string_view name, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }

  std::vector<Op> ops_;
};

}  // namespace sila
