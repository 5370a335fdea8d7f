#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "scratch_dir.hpp"
#include "sila/data_io.hpp"

using namespace sila;

namespace {

IdxImages two_image_fixture() {
  IdxImages img;
  img.rows = 3;
  img.cols = 2;
  img.pixels = {0, 0, 0, 0, 0, 0, 255, 1, 128, 7, 254, 64};
  return img;
}

std::map<std::size_t, std::size_t> histogram(const Dataset& d) {
  std::map<std::size_t, std::size_t> h;
  for (auto y : d.labels()) ++h[y];
  return h;
}

// Where the official files live, if anywhere: $SILA_MNIST_DIR or ./data/mnist.
std::filesystem::path mnist_dir() {
  if (const char* env = std::getenv("SILA_MNIST_DIR")) return env;
  return std::filesystem::path(SILA_SOURCE_DIR) / "data" / "mnist";
}

}  // namespace

TEST(Blobs, DeterministicAndSeedSensitive) {
  BlobSpec spec;
  auto a = generate_blobs(spec), b = generate_blobs(spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  spec.seed = 2;
  EXPECT_NE(generate_blobs(spec).train.features(), a.train.features());
}

TEST(Blobs, BalancedSplitsOfFixedProportion) {
  auto d = generate_blobs(BlobSpec{});
  EXPECT_EQ(d.train.size(), 800u);
  EXPECT_EQ(d.validation.size(), 172u);
  EXPECT_EQ(d.test.size(), 172u);
  for (auto [label, count] : histogram(d.train)) EXPECT_EQ(count, 200u) << label;
  for (auto [label, count] : histogram(d.test)) EXPECT_EQ(count, 43u) << label;
  EXPECT_EQ(d.train.split(), Split::train);
  EXPECT_EQ(d.validation.split(), Split::validation);
  EXPECT_EQ(d.test.split(), Split::test);
}

TEST(Blobs, SplitsAreDisjoint) {
  auto d = generate_blobs(BlobSpec{3, 40, 2.0, 1.0, 2, 9});
  std::set<std::vector<double>> seen;
  for (const auto* part : {&d.train, &d.validation, &d.test})
    for (std::size_t i = 0; i < part->size(); ++i)
      EXPECT_TRUE(seen.insert({part->row(i).begin(), part->row(i).end()}).second);
}

TEST(Blobs, ZeroSpreadCollapsesToCenters) {
  auto d = generate_blobs(BlobSpec{3, 20, 2.0, 0.0, 4, 1});
  std::map<std::size_t, std::vector<double>> center;
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    std::vector<double> r(d.train.row(i).begin(), d.train.row(i).end());
    auto [it, fresh] = center.emplace(d.train.labels()[i], r);
    if (!fresh) EXPECT_EQ(it->second, r);
  }
}

TEST(Blobs, InvalidSpec) {
  EXPECT_THROW(generate_blobs(BlobSpec{1, 20, 2.0, 1.0, 2, 1}), InvalidArgument);
  EXPECT_THROW(generate_blobs(BlobSpec{2, 3, 2.0, 1.0, 2, 1}), InvalidArgument);
  EXPECT_THROW(generate_blobs(BlobSpec{2, 20, 2.0, 1.0, 2, 1, 0.9, 0.1}), InvalidArgument);
  EXPECT_THROW(generate_blobs(BlobSpec{2, 20, 2.0, 1.0, 2, 1, 0.8, 0.0}), InvalidArgument);
}

TEST(Blobs, CustomFractions) {
  auto d = generate_blobs(BlobSpec{4, 300, 3.0, 1.0, 2, 1, 2.0 / 3.0, 1.0 / 6.0});
  EXPECT_EQ(d.train.size(), 800u);
  EXPECT_EQ(d.validation.size(), 200u);
  EXPECT_EQ(d.test.size(), 200u);
}

TEST(DatasetTest, InvariantsAreChecked) {
  EXPECT_THROW(Dataset(2, 3, {1, 2, 3}, {0, 1}), ShapeError);
  EXPECT_THROW(Dataset(1, 3, {1, 2}, {0, 3}), InvalidArgument);
  EXPECT_THROW(Dataset(1, 3, {1, std::nan("")}, {0, 1}), NonFiniteError);
  EXPECT_THROW(Dataset(1, 3, {}, {}), InvalidArgument);
}

TEST(DatasetTest, BatchesSubsetsAndCsvRoundTrip) {
  ScratchDir dir;
  auto d = generate_blobs(BlobSpec{3, 20, 2.0, 1.0, 3, 2}).train;
  std::vector<std::size_t> idx{4, 0, 7};
  auto x = d.batch_features(idx);
  EXPECT_EQ(x.shape(), (Shape{3, 3}));
  EXPECT_EQ(x.at(1, 2), d.row(0)[2]);
  EXPECT_EQ(d.batch_labels(idx)[0], d.labels()[4]);
  auto sub = d.subset(idx, Split::test);
  EXPECT_EQ(sub.size(), 3u);
  EXPECT_EQ(sub.split(), Split::test);
  write_dataset_csv(d, dir.file("d.csv"));
  EXPECT_EQ(read_dataset_csv(dir.file("d.csv"), 3), d);
}

TEST(Batches, SizesAndPartition) {
  auto b = batches(10, 3, 7, 0);
  ASSERT_EQ(b.size(), 4u);
  EXPECT_EQ(b[0].size(), 3u);
  EXPECT_EQ(b[3].size(), 1u);
  std::set<std::size_t> all;
  for (const auto& batch : b) all.insert(batch.begin(), batch.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(*all.rbegin(), 9u);
}

TEST(Batches, SeededPerEpoch) {
  EXPECT_EQ(batches(50, 8, 3, 4), batches(50, 8, 3, 4));
  EXPECT_NE(batches(50, 8, 3, 4), batches(50, 8, 3, 5));
  EXPECT_NE(batches(50, 8, 3, 4), batches(50, 8, 4, 4));
  EXPECT_THROW(batches(5, 0, 1, 0), InvalidArgument);
}

TEST(Idx, EncodingIsBigEndian) {
  auto bytes = encode_idx_images(two_image_fixture());
  const std::vector<std::uint8_t> header{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 2};
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 16), header);
  auto labels = encode_idx_labels({7, 3});
  EXPECT_EQ(labels, (std::vector<std::uint8_t>{0, 0, 8, 1, 0, 0, 0, 2, 7, 3}));
}

TEST(Idx, FixtureRoundTripsBitwise) {
  ScratchDir dir;
  const auto img = two_image_fixture();
  const std::vector<std::uint8_t> labels{7, 0};
  write_bytes(dir.file("img.idx"), encode_idx_images(img));
  write_bytes(dir.file("lab.idx"), encode_idx_labels(labels));
  auto back = parse_idx_images(detail::read_all_bytes(dir.file("img.idx")));
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(back.rows, 3u);
  EXPECT_EQ(back.cols, 2u);
  EXPECT_EQ(encode_idx_images(back), detail::read_all_bytes(dir.file("img.idx")));
  EXPECT_EQ(parse_idx_labels(detail::read_all_bytes(dir.file("lab.idx"))), labels);

  auto d = load_mnist_idx(dir.file("img.idx"), dir.file("lab.idx"), Split::test);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.dim(), 6u);
  EXPECT_EQ(d.classes(), 10u);
  for (double v : d.row(0)) EXPECT_EQ(v, 0.0);  // all-zero image
  EXPECT_EQ(d.row(1)[0], 1.0);
  EXPECT_EQ(d.row(1)[2], 128.0 / 255.0);
  EXPECT_EQ(d.labels(), (std::vector<std::size_t>{7, 0}));
}

TEST(Idx, TypedErrors) {
  ScratchDir dir;
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const IdxError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no IdxError";
    return IdxErrorKind::io;
  };
  auto good = encode_idx_images(two_image_fixture());
  auto bad_magic = good;
  bad_magic[3] = 0x01;
  EXPECT_EQ(kind_of([&] { parse_idx_images(bad_magic); }), IdxErrorKind::bad_magic);
  EXPECT_EQ(kind_of([&] { parse_idx_images(encode_idx_labels({1, 2})); }), IdxErrorKind::bad_magic);
  auto short_payload = good;
  short_payload.pop_back();
  EXPECT_EQ(kind_of([&] { parse_idx_images(short_payload); }), IdxErrorKind::truncated);
  EXPECT_EQ(kind_of([&] { parse_idx_images(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)); }),
            IdxErrorKind::truncated);
  auto extra = good;
  extra.push_back(0);
  EXPECT_EQ(kind_of([&] { parse_idx_images(extra); }), IdxErrorKind::count_mismatch);
  EXPECT_EQ(kind_of([&] { mnist_from_idx(two_image_fixture(), {1, 2, 3}, Split::train); }),
            IdxErrorKind::count_mismatch);
  EXPECT_EQ(kind_of([&] { load_mnist_idx(dir.file("missing"), dir.file("missing2")); }), IdxErrorKind::io);
  EXPECT_THROW(mnist_from_idx(two_image_fixture(), {1, 12}, Split::train), FormatError);
  try {
    parse_idx_images(bad_magic);
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), "idx_bad_magic");
  }
}

TEST(Idx, FuzzedInputsNeverCrash) {
  const auto good_img = encode_idx_images(two_image_fixture());
  const auto good_lab = encode_idx_labels({1, 2});
  // every truncation
  for (std::size_t n = 0; n < good_img.size(); ++n)
    EXPECT_THROW(parse_idx_images(std::vector<std::uint8_t>(good_img.begin(), good_img.begin() + n)), IdxError);
  for (std::size_t n = 0; n < good_lab.size(); ++n)
    EXPECT_THROW(parse_idx_labels(std::vector<std::uint8_t>(good_lab.begin(), good_lab.begin() + n)), IdxError);
  // random byte corruption: either parses or raises a typed error
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    auto img = good_img;
    auto lab = good_lab;
    for (int k = 0; k < 3; ++k) {
      img[rng() % img.size()] = static_cast<std::uint8_t>(rng());
      lab[rng() % lab.size()] = static_cast<std::uint8_t>(rng());
    }
    try {
      mnist_from_idx(parse_idx_images(img), parse_idx_labels(lab), Split::train);
    } catch (const Error&) {
    }
  }
}

TEST(Idx, OfficialMnistWhenPresent) {
  const auto dir = mnist_dir();
  const auto train_img = dir / "train-images-idx3-ubyte", train_lab = dir / "train-labels-idx1-ubyte";
  const auto test_img = dir / "t10k-images-idx3-ubyte", test_lab = dir / "t10k-labels-idx1-ubyte";
  if (!std::filesystem::exists(train_img) || !std::filesystem::exists(test_img))
    GTEST_SKIP() << "official MNIST files not found under " << dir;
  auto train = load_mnist_idx(train_img.string(), train_lab.string());
  auto test = load_mnist_idx(test_img.string(), test_lab.string(), Split::test);
  EXPECT_EQ(train.size(), 60000u);
  EXPECT_EQ(test.size(), 10000u);
  EXPECT_EQ(train.dim(), 784u);
  for (auto y : train.labels()) EXPECT_LT(y, 10u);
  for (auto y : test.labels()) EXPECT_LT(y, 10u);
}
