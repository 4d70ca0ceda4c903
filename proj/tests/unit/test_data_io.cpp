#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <unistd.h>

#include "ssps/data.hpp"
#include "ssps/errors.hpp"
#include "ssps/rng.hpp"

using namespace ssps;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ssps_data_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST(Split, PaperSizes) {
  const std::size_t n = 50000;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 10);
  const auto idx = iota(n);
  const auto half = stratified_split(idx, labels, 0.5, 1);
  EXPECT_EQ(half.sub_train.size(), 25000u);
  EXPECT_EQ(half.validation.size(), 25000u);
  const auto q = stratified_split(idx, labels, 0.75, 1);
  EXPECT_EQ(q.sub_train.size(), 37500u);
  EXPECT_EQ(q.validation.size(), 12500u);
}

TEST(Split, StratifiedDisjointDeterministic) {
  Rng rng(51);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 20 + rng.uniform_int(500);
    const std::size_t classes = 2 + rng.uniform_int(6);
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(rng.uniform_int(classes));
    const double f = rng.uniform(0.1, 0.9);
    const auto idx = iota(n);
    const auto s = stratified_split(idx, labels, f, trial);
    const auto again = stratified_split(idx, labels, f, trial);
    EXPECT_EQ(s.sub_train, again.sub_train);
    EXPECT_EQ(s.validation, again.validation);
    std::set<std::size_t> a(s.sub_train.begin(), s.sub_train.end()), b(s.validation.begin(), s.validation.end());
    EXPECT_EQ(a.size(), s.sub_train.size());
    for (auto i : b) EXPECT_EQ(a.count(i), 0u);
    EXPECT_EQ(a.size() + b.size(), n);
    std::map<int, std::size_t> total, first;
    for (auto i : idx) ++total[labels[i]];
    for (auto i : s.sub_train) ++first[labels[i]];
    for (auto [y, cnt] : total) {
      EXPECT_LE(std::abs(static_cast<double>(first[y]) - f * static_cast<double>(cnt)), 1.0 + 1e-9) << y;
    }
  }
}

TEST(Split, FractionOutOfRangeThrows) {
  std::vector<int> labels{0, 1, 0, 1};
  const auto idx = iota(4);
  EXPECT_THROW(stratified_split(idx, labels, 0.0, 0), ConfigError);
  EXPECT_THROW(stratified_split(idx, labels, 1.0, 0), ConfigError);
}

TEST(Split, TestSplitNeverLeaks) {
  SyntheticSpec spec;
  spec.samples = 1000;
  const auto d = generate_synthetic(spec);
  const auto s = split(d, 0.5, 3);
  std::set<std::size_t> test(d.test.begin(), d.test.end());
  for (auto i : s.sub_train) EXPECT_EQ(test.count(i), 0u);
  for (auto i : s.validation) EXPECT_EQ(test.count(i), 0u);
  EXPECT_EQ(s.sub_train.size() + s.validation.size(), d.train.size());
}

TEST(Synthetic, PureFunctionOfSpec) {
  for (auto kind : {GeneratorKind::kGaussianBlobs, GeneratorKind::kTwoSpirals, GeneratorKind::kSensitivityProbe}) {
    SyntheticSpec s;
    s.kind = kind;
    s.samples = 300;
    s.noise = 0.1;
    s.seed = 9;
    const auto a = generate_synthetic(s), b = generate_synthetic(s);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.test, b.test);
    for (double v : a.features) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    s.seed = 10;
    EXPECT_NE(generate_synthetic(s).features, a.features);
  }
}

TEST(Synthetic, NoiselessBlobsAreLinearlySeparable) {
  SyntheticSpec s;
  s.kind = GeneratorKind::kGaussianBlobs;
  s.samples = 400;
  s.classes = 4;
  s.noise = 0.0;
  const auto d = generate_synthetic(s);
  // Nearest class mean is a linear classifier.
  const std::size_t f = d.feature_size();
  std::vector<std::vector<double>> mean(4, std::vector<double>(f, 0.0));
  std::vector<double> count(4, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < f; ++j) mean[d.labels[i]][j] += d.features[i * f + j];
    ++count[d.labels[i]];
  }
  for (int c = 0; c < 4; ++c) {
    for (auto& v : mean[c]) v /= count[c];
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    int best = 0;
    double bd = 1e300;
    for (int c = 0; c < 4; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < f; ++j) dist += std::pow(d.features[i * f + j] - mean[c][j], 2);
      if (dist < bd) {
        bd = dist;
        best = c;
      }
    }
    hit += best == d.labels[i];
  }
  EXPECT_EQ(hit, d.size());
}

TEST(Synthetic, ProbeGeometry) {
  SyntheticSpec s;
  s.kind = GeneratorKind::kSensitivityProbe;
  s.samples = 2000;
  s.dimension = 4;
  const auto d = generate_synthetic(s);
  EXPECT_EQ(d.classes, 2u);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double m = d.features[i * 4 + 1] - d.features[i * 4];
    EXPECT_GE(std::abs(m), kProbeMarginLo - 1e-12);
    EXPECT_LE(std::abs(m), kProbeMarginHi + 1e-12);
    EXPECT_EQ(d.labels[i], m > 0 ? 1 : 0);
    ones += d.labels[i];
  }
  EXPECT_NEAR(static_cast<double>(ones) / d.size(), 0.5, 0.05);
  s.dimension = 1;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}

TEST(Idx, HeaderExample) {
  const auto dir = temp_dir("idx");
  std::vector<unsigned char> img, lab;
  put_be32(img, 0x00000803);
  put_be32(img, 10);
  put_be32(img, 28);
  put_be32(img, 28);
  for (int i = 0; i < 10 * 28 * 28; ++i) img.push_back(static_cast<unsigned char>(i % 256));
  put_be32(lab, 0x00000801);
  put_be32(lab, 10);
  for (int i = 0; i < 10; ++i) lab.push_back(static_cast<unsigned char>(i % 3));
  write_bytes(dir / "img", img);
  write_bytes(dir / "lab", lab);
  const auto d = load_idx((dir / "img").string(), (dir / "lab").string());
  EXPECT_EQ(d.size(), 10u);
  // Rank-2 images gain a single channel axis.
  EXPECT_EQ(d.feature_shape, (Shape{1, 28, 28}));
  EXPECT_EQ(d.classes, 3u);
  EXPECT_DOUBLE_EQ(d.features[255], 1.0);
  EXPECT_DOUBLE_EQ(d.features[51], 51.0 / 255.0);
  EXPECT_EQ(d.train.size(), 10u);

  // Truncated payload and bad magic.
  img.pop_back();
  write_bytes(dir / "short", img);
  EXPECT_THROW(load_idx((dir / "short").string(), (dir / "lab").string()), ParseError);
  img[0] = 1;
  write_bytes(dir / "magic", img);
  try {
    load_idx((dir / "magic").string(), (dir / "lab").string());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  fs::remove_all(dir);
}

TEST(Idx, RoundTrip) {
  const auto dir = temp_dir("idxrt");
  SyntheticSpec s;
  s.kind = GeneratorKind::kGaussianBlobs;
  s.samples = 120;
  s.dimension = 5;
  s.classes = 3;
  auto d = generate_synthetic(s);
  write_idx(d, (dir / "x").string(), (dir / "y").string());
  const auto back = load_idx((dir / "x").string(), (dir / "y").string());
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.feature_shape, d.feature_shape);
  fs::remove_all(dir);
}

TEST(Csv, RoundTripAndErrors) {
  const auto dir = temp_dir("csv");
  SyntheticSpec s;
  s.samples = 90;
  auto d = generate_synthetic(s);
  write_csv(d, (dir / "d.csv").string());
  const auto back = load_csv((dir / "d.csv").string());
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.labels, d.labels);

  {
    std::ofstream(dir / "bad.csv") << "a,b,label\n0.1,0.2,1\n0.3,1\n";
  }
  EXPECT_THROW(load_csv((dir / "bad.csv").string()), ParseError);
  {
    std::ofstream(dir / "nan.csv") << "a,label\nabc,1\n0.2,0\n";
  }
  EXPECT_THROW(load_csv((dir / "nan.csv").string()), ParseError);
  {
    std::ofstream(dir / "scale.csv") << "a,label\n10,0\n20,1\n30,0\n";
  }
  const auto sc = load_csv((dir / "scale.csv").string());
  EXPECT_EQ(sc.features, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_THROW(load_csv((dir / "missing.csv").string()), ConfigError);
  fs::remove_all(dir);
}

TEST(HoldOut, MovesStratifiedShareToTest) {
  SyntheticSpec s;
  s.samples = 400;
  s.test_fraction = 0.0;
  auto d = generate_synthetic(s);
  EXPECT_TRUE(d.test.empty());
  hold_out(d, 0.25, 4);
  EXPECT_EQ(d.test.size(), 100u);
  EXPECT_EQ(d.train.size(), 300u);
  EXPECT_NO_THROW(d.validate());
}
