#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssps/tensor.hpp"

namespace ssps {

// Labelled samples with a train/test partition. Features are stored flat,
// row-major, one sample after another.
struct Dataset {
  Shape feature_shape;
  std::size_t classes = 0;
  std::vector<double> features;
  std::vector<int> labels;
  std::vector<std::size_t> train;  // indices usable by search and fine-tune
  std::vector<std::size_t> test;   // held out

  std::size_t size() const { return labels.size(); }
  std::size_t feature_size() const { return shape_numel(feature_shape); }

  // [idx.size(), feature_shape...]
  Tensor batch(std::span<const std::size_t> idx) const;
  std::vector<int> labels_of(std::span<const std::size_t> idx) const;
  // Throws ConfigError on malformed contents.
  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> sub_train;
  std::vector<std::size_t> validation;
};

// Stratified shuffle split of `indices`: `fraction` of them (rounded) go to
// the first part, with per-class counts within one sample of proportional.
// Deterministic in (indices, labels, fraction, seed).
SplitIndices stratified_split(std::span<const std::size_t> indices, std::span<const int> labels,
                              double fraction, std::uint64_t seed);

// Splits dataset.train into sub-training and validation parts.
SplitIndices split(const Dataset& dataset, double fraction, std::uint64_t seed);

enum class GeneratorKind { kGaussianBlobs, kTwoSpirals, kSensitivityProbe };

struct SyntheticSpec {
  GeneratorKind kind = GeneratorKind::kTwoSpirals;
  std::size_t samples = 2000;
  std::size_t dimension = 2;
  std::size_t classes = 2;  // blobs only; spirals and probe are two-class
  double noise = 0.0;
  std::uint64_t seed = 0;
  double test_fraction = 0.25;
};

// Pure function of the spec. Features lie in [0, 1].
//  - gaussian-blobs: `classes` isotropic clusters around centers placed on a
//    circle in the first two coordinates.
//  - two-spirals: interleaved two-arm spiral in 2-D.
//  - sensitivity-probe: x1 = x0 +/- m with a small margin m in
//    [kProbeMarginLo, kProbeMarginHi] and the sign as label; further
//    coordinates are distractors. Coarse input quantization erases the
//    margin, later representations are near binary.
Dataset generate_synthetic(const SyntheticSpec& spec);

inline constexpr double kProbeMarginLo = 0.01;
inline constexpr double kProbeMarginHi = 0.05;

// IDX image/label files (big-endian header, standard magic numbers).
// Unsigned-byte images scale by 1/255; other element types are min-max
// scaled when they fall outside [0, 1]. All samples become the train split.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
// Writes features as IDX doubles (type 0x0E) and labels as unsigned bytes.
void write_idx(const Dataset& dataset, const std::string& images_path,
               const std::string& labels_path);

// CSV with a header row; each row is features..., integer label. Columns
// outside [0, 1] are min-max scaled. All samples become the train split.
Dataset load_csv(const std::string& path);
void write_csv(const Dataset& dataset, const std::string& path);

// CIFAR-10 binary batches (data_batch_1..5.bin, test_batch.bin) in `dir`.
Dataset load_cifar10(const std::string& dir);

// Moves `fraction` of dataset.train into dataset.test (stratified).
void hold_out(Dataset& dataset, double fraction, std::uint64_t seed);

}  // namespace ssps
