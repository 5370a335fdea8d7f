#pragma once

// Feedforward ReLU classifiers and the multi-exit chain built from them.

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sila/autodiff.hpp"
#include "sila/error.hpp"

namespace sila {

/// Named, ordered collection of parameter tensors. Copies are deep.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    entries_.clear();
    for (const auto& e : other.entries_) entries_.push_back({e.name, e.tensor.clone()});
    return *this;
  }
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  void add(std::string name, Tensor tensor) {
    if (contains(name)) throw InvalidArgument("parameter set: duplicate name " + name);
    for (double v : tensor.values())
      if (!std::isfinite(v)) throw NonFiniteError("parameter set: non-finite value in " + name);
    entries_.push_back({std::move(name), std::move(tensor)});
  }

  bool contains(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return true;
    return false;
  }

  const Tensor& at(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.tensor;
    throw InvalidArgument("parameter set: no parameter named " + name);
  }
  Tensor& at(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParameterSet&>(*this).at(name));
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
};

/// Names, shapes and value bits all match.
inline bool bitwise_equal(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  for (auto ib = b.begin(); ib != b.end(); ++ia, ++ib) {
    if (ia->name != ib->name || ia->tensor.shape() != ib->tensor.shape()) return false;
    auto va = ia->tensor.values(), vb = ib->tensor.values();
    for (std::size_t i = 0; i < va.size(); ++i)
      if (std::bit_cast<std::uint64_t>(va[i]) != std::bit_cast<std::uint64_t>(vb[i])) return false;
  }
  return true;
}

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t classes = 0;
  std::string init = "kaiming_uniform";

  void validate() const {
    if (input_dim == 0) throw InvalidArgument("network spec: input width must be positive");
    if (classes < 2) throw InvalidArgument("network spec: class count must be at least 2");
    for (auto w : hidden)
      if (w == 0) throw InvalidArgument("network spec: hidden width must be positive");
    if (init != "kaiming_uniform" && init != "zeros")
      throw InvalidArgument("network spec: unknown init scheme " + init);
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct Network {
  NetworkSpec spec;
  ParameterSet params;
};

namespace detail {

inline std::string dense_name(const std::string& prefix, std::size_t i, const char* what) {
  return prefix + "dense" + std::to_string(i) + "." + what;
}

// Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)) and zero bias.
inline void add_dense(ParameterSet& params, const std::string& weight_name, const std::string& bias_name,
                      std::size_t in, std::size_t out, const std::string& init, std::mt19937_64& rng) {
  std::vector<double> w(in * out, 0.0);
  if (init == "kaiming_uniform") {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w) v = dist(rng);
  }
  params.add(weight_name, Tensor::parameter({in, out}, std::move(w)));
  params.add(bias_name, Tensor::parameter({out}, std::vector<double>(out, 0.0)));
}

inline Tensor dense(Tape& tape, const ParameterSet& params, const std::string& weight_name,
                    const std::string& bias_name, const Tensor& x) {
  return tape.add_bias(tape.matmul(x, params.at(weight_name)), params.at(bias_name));
}

inline void require_input(const char* what, const Tensor& x, std::size_t dim) {
  if (x.rank() != 2 || x.cols() != dim)
    throw ShapeError(std::string(what) + ": input " + shape_string(x.shape()) + " does not have " +
                     std::to_string(dim) + " columns");
}

}  // namespace detail

inline Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Network net{spec, {}};
  std::size_t in = spec.input_dim;
  const std::size_t layers = spec.hidden.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t out = i + 1 < layers ? spec.hidden[i] : spec.classes;
    detail::add_dense(net.params, detail::dense_name("", i, "weight"), detail::dense_name("", i, "bias"), in, out,
                      spec.init, rng);
    in = out;
  }
  return net;
}

/// Logits [B x N] recorded on the tape.
inline Tensor forward(Tape& tape, const Network& net, const Tensor& batch) {
  detail::require_input("forward", batch, net.spec.input_dim);
  Tensor h = batch;
  const std::size_t layers = net.spec.hidden.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    h = detail::dense(tape, net.params, detail::dense_name("", i, "weight"), detail::dense_name("", i, "bias"), h);
    if (i + 1 < layers) h = tape.relu(h);
  }
  return h;
}

/// Post-activation output of the last hidden layer.
inline Tensor penultimate_features(Tape& tape, const Network& net, const Tensor& batch) {
  if (net.spec.hidden.empty()) throw InvalidArgument("penultimate_features: network has no hidden layer");
  detail::require_input("penultimate_features", batch, net.spec.input_dim);
  Tensor h = batch;
  for (std::size_t i = 0; i < net.spec.hidden.size(); ++i)
    h = tape.relu(
        detail::dense(tape, net.params, detail::dense_name("", i, "weight"), detail::dense_name("", i, "bias"), h));
  return h;
}

// ---------------------------------------------------------------------------
// Multi-exit chain: block_1 -> block_2 -> ... -> block_C, with a linear
// classifier head after every block.

struct MultiExitSpec {
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> blocks;  // hidden widths per block
  std::string init = "kaiming_uniform";

  std::size_t exits() const noexcept { return blocks.size(); }

  std::size_t block_output_width(std::size_t c) const { return blocks[c].back(); }

  /// Multiply-accumulate count of blocks 1..c plus head c.
  std::vector<double> cumulative_costs() const {
    std::vector<double> costs;
    double trunk = 0.0;
    std::size_t in = input_dim;
    for (const auto& block : blocks) {
      for (auto w : block) {
        trunk += static_cast<double>(in) * static_cast<double>(w);
        in = w;
      }
      costs.push_back(trunk + static_cast<double>(in) * static_cast<double>(classes));
    }
    return costs;
  }

  void validate() const {
    if (input_dim == 0) throw InvalidArgument("multi-exit spec: input width must be positive");
    if (classes < 2) throw InvalidArgument("multi-exit spec: class count must be at least 2");
    if (blocks.empty()) throw InvalidArgument("multi-exit spec: at least one block required");
    for (const auto& b : blocks) {
      if (b.empty()) throw InvalidArgument("multi-exit spec: empty block");
      for (auto w : b)
        if (w == 0) throw InvalidArgument("multi-exit spec: hidden width must be positive");
    }
    if (init != "kaiming_uniform" && init != "zeros")
      throw InvalidArgument("multi-exit spec: unknown init scheme " + init);
    auto costs = cumulative_costs();
    for (std::size_t c = 1; c < costs.size(); ++c)
      if (!(costs[c] > costs[c - 1]))
        throw InvalidArgument("multi-exit spec: cumulative exit cost must be strictly increasing");
  }

  friend bool operator==(const MultiExitSpec&, const MultiExitSpec&) = default;
};

struct MultiExitNetwork {
  MultiExitSpec spec;
  ParameterSet params;
};

namespace detail {
inline std::string block_prefix(std::size_t c) { return "block" + std::to_string(c) + "."; }
inline std::string head_name(std::size_t c, const char* what) {
  return "head" + std::to_string(c) + "." + what;
}
}  // namespace detail

// Parameters are drawn block by block, each followed by its head, so a
// one-exit chain draws exactly the same values as the equivalent Network.
inline MultiExitNetwork build_multi_exit(const MultiExitSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  MultiExitNetwork net{spec, {}};
  std::size_t in = spec.input_dim;
  for (std::size_t c = 0; c < spec.exits(); ++c) {
    const auto prefix = detail::block_prefix(c);
    for (std::size_t j = 0; j < spec.blocks[c].size(); ++j) {
      const std::size_t out = spec.blocks[c][j];
      detail::add_dense(net.params, detail::dense_name(prefix, j, "weight"), detail::dense_name(prefix, j, "bias"),
                        in, out, spec.init, rng);
      in = out;
    }
    detail::add_dense(net.params, detail::head_name(c, "weight"), detail::head_name(c, "bias"), in, spec.classes,
                      spec.init, rng);
  }
  return net;
}

/// One logits tensor per exit; exit c depends only on blocks 0..c.
inline std::vector<Tensor> forward_multi_exit(Tape& tape, const MultiExitNetwork& net, const Tensor& batch) {
  detail::require_input("forward_multi_exit", batch, net.spec.input_dim);
  std::vector<Tensor> logits;
  Tensor h = batch;
  for (std::size_t c = 0; c < net.spec.exits(); ++c) {
    const auto prefix = detail::block_prefix(c);
    for (std::size_t j = 0; j < net.spec.blocks[c].size(); ++j)
      h = tape.relu(detail::dense(tape, net.params, detail::dense_name(prefix, j, "weight"),
                                  detail::dense_name(prefix, j, "bias"), h));
    logits.push_back(detail::dense(tape, net.params, detail::head_name(c, "weight"), detail::head_name(c, "bias"), h));
  }
  return logits;
}

/// Copy with i.i.d. N(0, sigma^2) noise added to every weight and bias.
/// `mirrored` subtracts the same draw instead of adding it.
inline ParameterSet perturb_parameters(const ParameterSet& params, double sigma, std::uint64_t seed,
                                       bool mirrored = false) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("perturb_parameters: sigma must be >= 0");
  ParameterSet out = params;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& e : out)
    for (auto& v : e.tensor.mutable_values()) v += mirrored ? -noise(rng) : noise(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: a JSON document with a format tag, version, the architecture
// and every parameter as {name, shape, values}. Doubles are written in
// shortest round-trip form so a reload is bitwise identical.

inline constexpr int kCheckpointVersion = 1;

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = {{"input_dim", s.input_dim}, {"hidden", s.hidden}, {"classes", s.classes}, {"init", s.init}};
}
inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.value("hidden", std::vector<std::size_t>{});
  s.classes = j.at("classes").get<std::size_t>();
  s.init = j.value("init", std::string("kaiming_uniform"));
}
inline void to_json(nlohmann::json& j, const MultiExitSpec& s) {
  j = {{"input_dim", s.input_dim}, {"classes", s.classes}, {"blocks", s.blocks}, {"init", s.init}};
}
inline void from_json(const nlohmann::json& j, MultiExitSpec& s) {
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.classes = j.at("classes").get<std::size_t>();
  s.blocks = j.at("blocks").get<std::vector<std::vector<std::size_t>>>();
  s.init = j.value("init", std::string("kaiming_uniform"));
}

inline nlohmann::json parameters_to_json(const ParameterSet& params) {
  auto arr = nlohmann::json::array();
  for (const auto& e : params) {
    std::vector<double> values(e.tensor.values().begin(), e.tensor.values().end());
    arr.push_back({{"name", e.name}, {"shape", e.tensor.shape()}, {"values", values}});
  }
  return arr;
}

inline ParameterSet parameters_from_json(const nlohmann::json& arr) {
  ParameterSet params;
  for (const auto& item : arr)
    params.add(item.at("name").get<std::string>(),
               Tensor::parameter(item.at("shape").get<Shape>(), item.at("values").get<std::vector<double>>()));
  return params;
}

namespace detail {

inline nlohmann::json checkpoint_document(const char* kind, nlohmann::json spec, const ParameterSet& params) {
  return {{"format", "sila-checkpoint"},
          {"version", kCheckpointVersion},
          {"kind", kind},
          {"spec", std::move(spec)},
          {"parameters", parameters_to_json(params)}};
}

inline nlohmann::json read_checkpoint_document(const std::string& path, const char* kind) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (doc.value("format", "") != "sila-checkpoint") throw FormatError(path + ": not a checkpoint");
  if (doc.value("version", 0) != kCheckpointVersion) throw FormatError(path + ": unsupported checkpoint version");
  if (doc.value("kind", "") != kind)
    throw FormatError(path + ": expected a " + kind + " checkpoint, found " + doc.value("kind", "?"));
  return doc;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

// Parameter names and shapes must be exactly those the spec builds.
template <class Net, class Spec>
Net checked_network(const Spec& spec, ParameterSet params, Net (*builder)(const Spec&, std::uint64_t)) {
  Net reference = builder(spec, 0);
  if (reference.params.size() != params.size()) throw FormatError("checkpoint: parameter count mismatch");
  auto it = params.begin();
  for (const auto& e : reference.params) {
    if (e.name != it->name || e.tensor.shape() != it->tensor.shape())
      throw FormatError("checkpoint: unexpected parameter " + it->name);
    ++it;
  }
  return Net{spec, std::move(params)};
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Network& net) {
  detail::write_text(path, detail::checkpoint_document("mlp", net.spec, net.params).dump(1) + "\n");
}

inline void save_checkpoint(const std::string& path, const MultiExitNetwork& net) {
  detail::write_text(path, detail::checkpoint_document("multi_exit", net.spec, net.params).dump(1) + "\n");
}

inline Network load_network(const std::string& path) {
  auto doc = detail::read_checkpoint_document(path, "mlp");
  try {
    auto spec = doc.at("spec").get<NetworkSpec>();
    spec.validate();
    return detail::checked_network<Network, NetworkSpec>(spec, parameters_from_json(doc.at("parameters")),
                                                         &build_network);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline MultiExitNetwork load_multi_exit(const std::string& path) {
  auto doc = detail::read_checkpoint_document(path, "multi_exit");
  try {
    auto spec = doc.at("spec").get<MultiExitSpec>();
    spec.validate();
    return detail::checked_network<MultiExitNetwork, MultiExitSpec>(
        spec, parameters_from_json(doc.at("parameters")), &build_multi_exit);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace sila
