#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sila/autodiff.hpp"
#include "sila/error.hpp"

namespace sila {

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "unknown";
}

/// Row-major feature matrix with integer labels in [0, classes).
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::size_t dim, std::size_t classes, std::vector<double> features, std::vector<std::size_t> labels,
          Split split = Split::train)
      : dim_(dim), classes_(classes), features_(std::move(features)), labels_(std::move(labels)), split_(split) {
    if (dim_ == 0) throw InvalidArgument("dataset: feature dimension must be positive");
    if (classes_ < 2) throw InvalidArgument("dataset: class count must be at least 2");
    if (labels_.empty()) throw InvalidArgument("dataset: no samples");
    if (features_.size() != labels_.size() * dim_)
      throw ShapeError("dataset: " + std::to_string(features_.size()) + " features for " +
                       std::to_string(labels_.size()) + " samples of dimension " + std::to_string(dim_));
    for (auto y : labels_)
      if (y >= classes_) throw InvalidArgument("dataset: label " + std::to_string(y) + " out of range");
    for (double v : features_)
      if (std::isnan(v)) throw NonFiniteError("dataset: NaN feature");
  }

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t classes() const noexcept { return classes_; }
  Split split() const noexcept { return split_; }
  const std::vector<double>& features() const noexcept { return features_; }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features_).subspan(i * dim_, dim_);
  }

  /// Feature matrix of the selected rows as a constant tensor [k x dim].
  Tensor batch_features(std::span<const std::size_t> index) const {
    std::vector<double> out;
    out.reserve(index.size() * dim_);
    for (auto i : index) {
      auto r = row(i);
      out.insert(out.end(), r.begin(), r.end());
    }
    return Tensor::constant({index.size(), dim_}, std::move(out));
  }

  std::vector<std::size_t> batch_labels(std::span<const std::size_t> index) const {
    std::vector<std::size_t> out;
    out.reserve(index.size());
    for (auto i : index) out.push_back(labels_[i]);
    return out;
  }

  Tensor all_features() const { return Tensor::constant({size(), dim_}, features_); }

  Dataset subset(std::span<const std::size_t> index, Split split) const {
    std::vector<double> f;
    f.reserve(index.size() * dim_);
    for (auto i : index) {
      auto r = row(i);
      f.insert(f.end(), r.begin(), r.end());
    }
    return Dataset(dim_, classes_, std::move(f), batch_labels(index), split);
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t dim_ = 0;
  std::size_t classes_ = 0;
  std::vector<double> features_;
  std::vector<std::size_t> labels_;
  Split split_ = Split::train;
};

struct BlobSpec {
  std::size_t classes = 4;
  std::size_t samples_per_class = 286;
  double center_spread = 2.0;
  double stddev = 1.0;
  std::size_t dim = 2;
  std::uint64_t seed = 1;
  double train_fraction = 0.70;
  double validation_fraction = 0.15;  // the rest is test
};

struct DatasetSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Gaussian blobs around class centers drawn uniformly in [-spread, spread]^dim.
/// Each class is split by the spec fractions (70/15/15 by default) into
/// train/validation/test; within a split
/// samples are interleaved by class.
inline DatasetSplits generate_blobs(const BlobSpec& spec) {
  if (spec.classes < 2 || spec.samples_per_class == 0 || spec.dim == 0 || !(spec.center_spread > 0.0) ||
      spec.stddev < 0.0 || !(spec.train_fraction > 0.0) || !(spec.validation_fraction > 0.0) ||
      !(spec.train_fraction + spec.validation_fraction < 1.0))
    throw InvalidArgument("generate_blobs: invalid blob spec");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> center_dist(-spec.center_spread, spec.center_spread);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<std::vector<double>> centers(spec.classes, std::vector<double>(spec.dim));
  for (auto& c : centers)
    for (auto& v : c) v = center_dist(rng);

  const std::size_t n = spec.samples_per_class;
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(spec.validation_fraction * static_cast<double>(n))));

  // samples[k][i] is the i-th sample of class k
  std::vector<std::vector<std::vector<double>>> samples(spec.classes);
  for (std::size_t k = 0; k < spec.classes; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> x(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d) x[d] = centers[k][d] + spec.stddev * noise(rng);
      samples[k].push_back(std::move(x));
    }

  auto assemble = [&](std::size_t begin, std::size_t end, Split split) {
    std::vector<double> f;
    std::vector<std::size_t> y;
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t k = 0; k < spec.classes; ++k) {
        f.insert(f.end(), samples[k][i].begin(), samples[k][i].end());
        y.push_back(k);
      }
    return Dataset(spec.dim, spec.classes, std::move(f), std::move(y), split);
  };
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw InvalidArgument("generate_blobs: samples_per_class too small for the requested split");
  return {assemble(0, n_train, Split::train), assemble(n_train, n_train + n_val, Split::validation),
          assemble(n_train + n_val, n, Split::test)};
}

/// Seeded permutation of [0, n) for the given epoch, chunked into batches.
/// The final short batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  if (batch_size == 0) throw InvalidArgument("batches: batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5b5bu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

inline std::vector<std::vector<std::size_t>> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch) {
  return batches(data.size(), batch_size, seed, epoch);
}

// ---------------------------------------------------------------------------
// MNIST IDX

enum class IdxErrorKind { io, bad_magic, truncated, count_mismatch };

class IdxError : public Error {
 public:
  IdxError(IdxErrorKind kind, const std::string& message) : Error(category_for(kind), message), kind_(kind) {}
  IdxErrorKind kind() const noexcept { return kind_; }

 private:
  static std::string category_for(IdxErrorKind k) {
    switch (k) {
      case IdxErrorKind::io: return "idx_io";
      case IdxErrorKind::bad_magic: return "idx_bad_magic";
      case IdxErrorKind::truncated: return "idx_truncated";
      case IdxErrorKind::count_mismatch: return "idx_count_mismatch";
    }
    return "idx";
  }
  IdxErrorKind kind_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint8_t> read_all_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& path) {
  if (bytes.size() < offset + 4) throw IdxError(IdxErrorKind::truncated, path + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace detail

struct IdxImages {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
  std::size_t count() const { return rows && cols ? pixels.size() / (std::size_t{rows} * cols) : 0; }
};

inline IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& path = "images") {
  if (detail::read_be32(bytes, 0, path) != kIdxImagesMagic) throw IdxError(IdxErrorKind::bad_magic, path + ": bad magic");
  const std::uint64_t count = detail::read_be32(bytes, 4, path);
  IdxImages img;
  img.rows = detail::read_be32(bytes, 8, path);
  img.cols = detail::read_be32(bytes, 12, path);
  const auto payload = static_cast<unsigned __int128>(count) * img.rows * img.cols;
  if (bytes.size() - 16 < payload) throw IdxError(IdxErrorKind::truncated, path + ": truncated payload");
  if (bytes.size() - 16 > payload) throw IdxError(IdxErrorKind::count_mismatch, path + ": trailing bytes after payload");
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  if (count > 0 && (img.rows == 0 || img.cols == 0))
    throw IdxError(IdxErrorKind::count_mismatch, path + ": zero image size");
  return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes,
                                                  const std::string& path = "labels") {
  if (detail::read_be32(bytes, 0, path) != kIdxLabelsMagic) throw IdxError(IdxErrorKind::bad_magic, path + ": bad magic");
  const std::uint64_t count = detail::read_be32(bytes, 4, path);
  if (bytes.size() - 8 < count) throw IdxError(IdxErrorKind::truncated, path + ": truncated payload");
  if (bytes.size() - 8 > count) throw IdxError(IdxErrorKind::count_mismatch, path + ": trailing bytes after payload");
  return {bytes.begin() + 8, bytes.end()};
}

inline std::vector<std::uint8_t> encode_idx_images(const IdxImages& img) {
  std::vector<std::uint8_t> out;
  detail::append_be32(out, kIdxImagesMagic);
  detail::append_be32(out, static_cast<std::uint32_t>(img.count()));
  detail::append_be32(out, img.rows);
  detail::append_be32(out, img.cols);
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline std::vector<std::uint8_t> encode_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  detail::append_be32(out, kIdxLabelsMagic);
  detail::append_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

/// Decoded IDX pair as a 10-class dataset with pixels scaled to [0, 1].
inline Dataset mnist_from_idx(const IdxImages& img, const std::vector<std::uint8_t>& labels, Split split) {
  if (img.count() != labels.size())
    throw IdxError(IdxErrorKind::count_mismatch, "images/labels count mismatch: " + std::to_string(img.count()) +
                                                     " vs " + std::to_string(labels.size()));
  if (labels.empty()) throw IdxError(IdxErrorKind::count_mismatch, "idx: no samples");
  std::vector<double> f(img.pixels.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = img.pixels[i] / 255.0;
  std::vector<std::size_t> y(labels.begin(), labels.end());
  for (auto v : y)
    if (v >= 10) throw FormatError("idx: label " + std::to_string(v) + " out of range");
  return Dataset(std::size_t{img.rows} * img.cols, 10, std::move(f), std::move(y), split);
}

inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              Split split = Split::train) {
  auto img = parse_idx_images(detail::read_all_bytes(images_path), images_path);
  auto lab = parse_idx_labels(detail::read_all_bytes(labels_path), labels_path);
  return mnist_from_idx(img, lab, split);
}

// ---------------------------------------------------------------------------
// CSV dataset export: header f0..f{D-1},label

inline void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << std::setprecision(17);
  for (std::size_t d = 0; d < data.dim(); ++d) out << 'f' << d << ',';
  out << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.row(i)) out << v << ',';
    out << data.labels()[i] << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

inline Dataset read_dataset_csv(const std::string& path, std::size_t classes, Split split = Split::train) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2) throw FormatError(path + ": need at least one feature column and a label column");
  std::vector<double> f;
  std::vector<std::size_t> y;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        if (c + 1 < columns)
          f.push_back(std::stod(cell));
        else
          y.push_back(static_cast<std::size_t>(std::stoull(cell)));
      } catch (const std::exception&) {
        throw FormatError(path + ": bad cell '" + cell + "'");
      }
      ++c;
    }
    if (c != columns) throw FormatError(path + ": ragged row");
  }
  return Dataset(columns - 1, classes, std::move(f), std::move(y), split);
}

}  // namespace sila
