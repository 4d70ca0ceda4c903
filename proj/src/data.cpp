#include "ssps/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "ssps/errors.hpp"
#include "ssps/rng.hpp"

namespace ssps {

Tensor Dataset::batch(std::span<const std::size_t> idx) const {
  const std::size_t f = feature_size();
  std::vector<double> out(idx.size() * f);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= size()) throw ContractError("dataset index out of range");
    std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(idx[i] * f), f,
                out.begin() + static_cast<std::ptrdiff_t>(i * f));
  }
  Shape shape{idx.size()};
  shape.insert(shape.end(), feature_shape.begin(), feature_shape.end());
  return Tensor::from(shape, std::move(out));
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (feature_shape.empty() || feature_size() == 0) throw ConfigError("dataset: empty feature shape");
  if (features.size() != labels.size() * feature_size()) {
    throw ConfigError("dataset: feature buffer does not match sample count");
  }
  if (classes < 2) throw ConfigError("dataset: need at least two classes");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw ConfigError("dataset: label out of range");
  }
  std::vector<char> seen(size(), 0);
  for (const auto* part : {&train, &test}) {
    for (auto i : *part) {
      if (i >= size() || seen[i]) throw ConfigError("dataset: train/test indices overlap or out of range");
      seen[i] = 1;
    }
  }
}

SplitIndices stratified_split(std::span<const std::size_t> indices, std::span<const int> labels,
                              double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("split fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  int max_label = -1;
  for (auto i : indices) {
    if (i >= labels.size()) throw ContractError("split: index out of range");
    max_label = std::max(max_label, labels[i]);
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (auto i : indices) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  // Largest-remainder allocation hits the rounded total exactly.
  const auto total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(indices.size())));
  std::vector<std::size_t> take(by_class.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = fraction * static_cast<double>(by_class[c].size());
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    rema.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total && k < rema.size(); ++k, ++assigned) ++take[rema[k].second];

  Rng rng = Rng::stream(seed, 0x5917);
  SplitIndices out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& v = by_class[c];
    std::sort(v.begin(), v.end());
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(i)]);
    out.sub_train.insert(out.sub_train.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(take[c]));
    out.validation.insert(out.validation.end(), v.begin() + static_cast<std::ptrdiff_t>(take[c]), v.end());
  }
  std::sort(out.sub_train.begin(), out.sub_train.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

SplitIndices split(const Dataset& dataset, double fraction, std::uint64_t seed) {
  return stratified_split(dataset.train, dataset.labels, fraction, seed);
}

void hold_out(Dataset& dataset, double fraction, std::uint64_t seed) {
  auto parts = stratified_split(dataset.train, dataset.labels, 1.0 - fraction, seed);
  dataset.train = std::move(parts.sub_train);
  dataset.test.insert(dataset.test.end(), parts.validation.begin(), parts.validation.end());
  std::sort(dataset.test.begin(), dataset.test.end());
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void all_train(Dataset& d) {
  d.train.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) d.train[i] = i;
  d.test.clear();
}

void make_blobs(const SyntheticSpec& s, Rng& rng, Dataset& d) {
  if (s.classes < 2) throw ConfigError("gaussian-blobs: need at least two classes");
  d.classes = s.classes;
  d.feature_shape = {s.dimension};
  // Centers on a circle of radius 0.3 around (0.5, 0.5), so every center is
  // a vertex of their convex hull and the noise-free task is linearly
  // separable.
  for (std::size_t i = 0; i < s.samples; ++i) {
    const int y = static_cast<int>(i % s.classes);
    const double ang = 2.0 * std::numbers::pi * y / static_cast<double>(s.classes);
    for (std::size_t j = 0; j < s.dimension; ++j) {
      double c = 0.5;
      if (j == 0) c += 0.3 * std::cos(ang);
      if (j == 1) c += 0.3 * std::sin(ang);
      d.features.push_back(clamp01(c + s.noise * rng.normal()));
    }
    d.labels.push_back(y);
  }
}

void make_spirals(const SyntheticSpec& s, Rng& rng, Dataset& d) {
  if (s.dimension != 2) throw ConfigError("two-spirals: dimension must be 2");
  d.classes = 2;
  d.feature_shape = {2};
  constexpr double kTurns = 1.75;
  for (std::size_t i = 0; i < s.samples; ++i) {
    const int y = static_cast<int>(i % 2);
    // sqrt spacing keeps point density roughly even along the arm.
    const double r = std::sqrt(rng.uniform()) * kTurns * 2.0 * std::numbers::pi;
    const double sign = y == 0 ? 1.0 : -1.0;
    const double scale = 1.0 / (2.0 * (kTurns * 2.0 * std::numbers::pi + 1.0));
    const double x0 = 0.5 + sign * r * std::cos(r) * scale + s.noise * rng.normal();
    const double x1 = 0.5 + sign * r * std::sin(r) * scale + s.noise * rng.normal();
    d.features.push_back(clamp01(x0));
    d.features.push_back(clamp01(x1));
    d.labels.push_back(y);
  }
}

void make_probe(const SyntheticSpec& s, Rng& rng, Dataset& d) {
  if (s.dimension < 2) throw ConfigError("sensitivity-probe: dimension must be at least 2");
  d.classes = 2;
  d.feature_shape = {s.dimension};
  for (std::size_t i = 0; i < s.samples; ++i) {
    const int y = rng.uniform() < 0.5 ? 0 : 1;
    const double m = kProbeMarginLo + (kProbeMarginHi - kProbeMarginLo) * rng.uniform();
    const double x0 = m + (1.0 - 2.0 * m) * rng.uniform();
    const double x1 = y == 1 ? x0 + m : x0 - m;
    d.features.push_back(x0);
    d.features.push_back(x1);
    for (std::size_t j = 2; j < s.dimension; ++j) d.features.push_back(rng.uniform());
    d.labels.push_back(s.noise > 0.0 && rng.uniform() < s.noise ? 1 - y : y);  // label noise
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.samples < 4) throw ConfigError("synthetic dataset needs at least 4 samples");
  if (spec.dimension == 0) throw ConfigError("synthetic dataset dimension must be positive");
  if (spec.noise < 0.0) throw ConfigError("noise must be non-negative");
  Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(spec.kind) + 101);
  Dataset d;
  switch (spec.kind) {
    case GeneratorKind::kGaussianBlobs: make_blobs(spec, rng, d); break;
    case GeneratorKind::kTwoSpirals: make_spirals(spec, rng, d); break;
    case GeneratorKind::kSensitivityProbe: make_probe(spec, rng, d); break;
  }
  all_train(d);
  if (spec.test_fraction > 0.0) hold_out(d, spec.test_fraction, spec.seed);
  d.validate();
  return d;
}

// ---------------------------------------------------------------- IDX

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw ParseError("truncated IDX header", b.size());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<double> values;
  unsigned type = 0;
};

std::size_t idx_elem_size(unsigned type) {
  switch (type) {
    case 0x08: case 0x09: return 1;
    case 0x0B: return 2;
    case 0x0C: case 0x0D: return 4;
    case 0x0E: return 8;
    default: return 0;
  }
}

IdxArray parse_idx(const std::vector<unsigned char>& b) {
  if (b.size() < 4) throw ParseError("truncated IDX magic", b.size());
  if (b[0] != 0 || b[1] != 0) throw ParseError("bad IDX magic: leading bytes must be zero", 0);
  IdxArray a;
  a.type = b[2];
  const std::size_t es = idx_elem_size(a.type);
  if (es == 0) throw ParseError("bad IDX magic: unknown element type", 2);
  const unsigned nd = b[3];
  if (nd == 0) throw ParseError("bad IDX magic: zero dimensions", 3);
  std::size_t count = 1;
  for (unsigned i = 0; i < nd; ++i) {
    const std::size_t off = 4 + 4 * i;
    const auto dim = be32(b, off);
    if (dim == 0) throw ParseError("IDX dimension is zero", off);
    a.dims.push_back(dim);
    count *= dim;
  }
  std::size_t off = 4 + 4 * nd;
  if (b.size() - off != count * es) {
    throw ParseError("IDX payload size " + std::to_string(b.size() - off) + " does not match shape (" +
                         std::to_string(count * es) + " expected)",
                     std::min(b.size(), off + count * es));
  }
  a.values.resize(count);
  for (std::size_t i = 0; i < count; ++i, off += es) {
    double v = 0.0;
    switch (a.type) {
      case 0x08: v = b[off]; break;
      case 0x09: v = static_cast<signed char>(b[off]); break;
      case 0x0B: v = static_cast<std::int16_t>((b[off] << 8) | b[off + 1]); break;
      case 0x0C: v = static_cast<std::int32_t>(be32(b, off)); break;
      case 0x0D: v = std::bit_cast<float>(be32(b, off)); break;
      case 0x0E: {
        std::uint64_t u = (std::uint64_t{be32(b, off)} << 32) | be32(b, off + 4);
        v = std::bit_cast<double>(u);
        break;
      }
    }
    a.values[i] = v;
  }
  return a;
}

// Min-max scales a set of values in place unless they already lie in [0, 1].
void scale_unit(std::vector<double>& v, std::size_t stride, std::size_t col) {
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = col; i < v.size(); i += stride) {
    if (!std::isfinite(v[i])) throw ParseError("non-finite feature value", 0);
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  if (lo >= 0.0 && hi <= 1.0) return;
  const double span = hi - lo;
  for (std::size_t i = col; i < v.size(); i += stride) v[i] = span > 0.0 ? (v[i] - lo) / span : 0.0;
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::size_t infer_classes(const std::vector<int>& labels) {
  int mx = 0;
  for (int y : labels) mx = std::max(mx, y);
  return std::max<std::size_t>(2, static_cast<std::size_t>(mx) + 1);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto img = parse_idx(read_file(images_path));
  auto lab = parse_idx(read_file(labels_path));
  if (lab.dims.size() != 1) throw ParseError("IDX labels must be one-dimensional", 3);
  if (lab.dims[0] != img.dims[0]) {
    throw ParseError("IDX label count " + std::to_string(lab.dims[0]) + " does not match image count " +
                         std::to_string(img.dims[0]),
                     4);
  }
  Dataset d;
  if (img.dims.size() == 1) {
    d.feature_shape = {1};
  } else if (img.dims.size() == 3) {
    d.feature_shape = {1, img.dims[1], img.dims[2]};  // single-channel images
  } else {
    d.feature_shape.assign(img.dims.begin() + 1, img.dims.end());
  }
  if (img.type == 0x08) {
    for (auto& v : img.values) v /= 255.0;
  } else {
    scale_unit(img.values, 1, 0);
  }
  d.features = std::move(img.values);
  for (std::size_t i = 0; i < lab.values.size(); ++i) {
    const double y = lab.values[i];
    if (y < 0 || y != std::floor(y)) throw ParseError("IDX label is not a non-negative integer", 8 + i);
    d.labels.push_back(static_cast<int>(y));
  }
  d.classes = infer_classes(d.labels);
  all_train(d);
  d.validate();
  return d;
}

void write_idx(const Dataset& dataset, const std::string& images_path, const std::string& labels_path) {
  {
    std::ofstream out(images_path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + images_path + "'");
    Shape dims{dataset.size()};
    // Single-channel image shapes are stored without the channel axis.
    if (dataset.feature_shape.size() == 3 && dataset.feature_shape[0] == 1) {
      dims.push_back(dataset.feature_shape[1]);
      dims.push_back(dataset.feature_shape[2]);
    } else {
      dims.insert(dims.end(), dataset.feature_shape.begin(), dataset.feature_shape.end());
    }
    const char magic[4] = {0, 0, 0x0E, static_cast<char>(dims.size())};
    out.write(magic, 4);
    for (auto d : dims) put_be32(out, static_cast<std::uint32_t>(d));
    for (double v : dataset.features) {
      const auto u = std::bit_cast<std::uint64_t>(v);
      put_be32(out, static_cast<std::uint32_t>(u >> 32));
      put_be32(out, static_cast<std::uint32_t>(u));
    }
  }
  std::ofstream out(labels_path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + labels_path + "'");
  const char magic[4] = {0, 0, 0x08, 1};
  out.write(magic, 4);
  put_be32(out, static_cast<std::uint32_t>(dataset.size()));
  for (int y : dataset.labels) {
    if (y > 255) throw ContractError("write_idx: label does not fit in a byte");
    out.put(static_cast<char>(y));
  }
}

// ---------------------------------------------------------------- CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset load_csv(const std::string& path) {
  const auto bytes = read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  std::size_t pos = 0;
  auto next_line = [&](std::string& line, std::size_t& start) {
    if (pos >= text.size()) return false;
    start = pos;
    const auto nl = text.find('\n', pos);
    line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    return true;
  };
  std::string line;
  std::size_t start = 0;
  if (!next_line(line, start)) throw ParseError("CSV is empty", 0);
  const auto header = split_fields(line);
  if (header.size() < 2) throw ParseError("CSV header needs at least one feature and a label", 0);
  const std::size_t nf = header.size() - 1;

  Dataset d;
  d.feature_shape = {nf};
  while (next_line(line, start)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError("CSV row has " + std::to_string(fields.size()) + " fields, header has " +
                           std::to_string(header.size()),
                       start);
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const auto& f = fields[j];
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != f.size()) throw ParseError("CSV field '" + f + "' is not numeric", start);
      if (j < nf) {
        d.features.push_back(v);
      } else {
        if (v < 0 || v != std::floor(v)) throw ParseError("CSV label is not a non-negative integer", start);
        d.labels.push_back(static_cast<int>(v));
      }
    }
  }
  if (d.labels.empty()) throw ParseError("CSV has no data rows", text.size());
  for (std::size_t j = 0; j < nf; ++j) scale_unit(d.features, nf, j);
  d.classes = infer_classes(d.labels);
  all_train(d);
  d.validate();
  return d;
}

void write_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  const std::size_t nf = dataset.feature_size();
  for (std::size_t j = 0; j < nf; ++j) out << "x" << j << ",";
  out << "label\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t j = 0; j < nf; ++j) out << dataset.features[i * nf + j] << ",";
    out << dataset.labels[i] << "\n";
  }
}

// ---------------------------------------------------------------- CIFAR-10

Dataset load_cifar10(const std::string& dir) {
  constexpr std::size_t kRecord = 1 + 3072;
  Dataset d;
  d.feature_shape = {3, 32, 32};
  d.classes = 10;
  auto load = [&](const std::string& name, std::vector<std::size_t>& part) {
    const auto path = (std::filesystem::path(dir) / name).string();
    const auto b = read_file(path);
    if (b.size() % kRecord != 0) throw ParseError(path + ": size is not a whole number of records", b.size());
    for (std::size_t off = 0; off < b.size(); off += kRecord) {
      if (b[off] > 9) throw ParseError(path + ": label out of range", off);
      part.push_back(d.labels.size());
      d.labels.push_back(b[off]);
      for (std::size_t k = 1; k < kRecord; ++k) d.features.push_back(b[off + k] / 255.0);
    }
  };
  for (int i = 1; i <= 5; ++i) load("data_batch_" + std::to_string(i) + ".bin", d.train);
  load("test_batch.bin", d.test);
  d.validate();
  return d;
}

}  // namespace ssps
