#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ssps/ops.hpp"
#include "ssps/rng.hpp"
#include "ssps/tensor.hpp"

namespace ssps {

enum class LayerKind { kDense, kConv, kPool, kNorm, kResidualAdd };

const char* layer_kind_name(LayerKind kind);

// One layer of a seed network. Fields unused by a kind are ignored.
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::string name;
  std::size_t in = 0;   // dense: input features; conv: input channels
  std::size_t out = 0;  // dense: output features; conv: output channels
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = true;
  bool relu = false;
  // kResidualAdd: index of the layer whose input is added to the current value.
  int residual_from = -1;

  bool parameterized() const { return kind == LayerKind::kDense || kind == LayerKind::kConv; }
};

struct SeedNetwork {
  std::string name;
  Shape input_shape;  // per sample, e.g. {2} or {3, 32, 32}
  std::size_t classes = 2;
  std::vector<LayerSpec> layers;

  // Throws ConfigError on incompatible consecutive shapes or when fewer than
  // three parameterized layers exist (two fixed endpoints plus one to search).
  void validate() const;
};

// Parameter count and per-sample multiply-accumulate count of a layer.
struct LayerCost {
  std::int64_t num_params = 0;
  std::int64_t flops = 0;
};

// Per-sample output shape of every layer; validates along the way.
std::vector<Shape> infer_shapes(const SeedNetwork& seed);
std::vector<LayerCost> layer_costs(const SeedNetwork& seed);

// Learnable state of one layer. Quantized layers (dense/conv) use weight,
// bias and the two clamp thresholds; norm layers use gamma/beta and running
// statistics.
struct LayerParams {
  Tensor weight, bias, w_threshold, a_threshold;
  Tensor gamma, beta;
  std::vector<double> running_mean, running_var;
};

enum class ForwardMode {
  kTrain,        // batch statistics, running statistics updated
  kTrainFrozen,  // batch statistics, running statistics untouched
  kEval          // running statistics
};

// Returns the quantized (input, weight) pair for parameterized layer `qidx`.
using QuantizeFn =
    std::function<std::pair<Tensor, Tensor>(std::size_t qidx, const Tensor& x, LayerParams& p)>;

// Seed description plus its parameters; shared by the supernet and the
// fixed-precision network.
class NetworkBody {
 public:
  NetworkBody() = default;
  // He-normal weights, zero biases, unit thresholds.
  static NetworkBody initialize(const SeedNetwork& seed, Rng& rng);

  const SeedNetwork& seed() const { return seed_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }
  // Indices into seed().layers of the dense/conv layers, in order.
  const std::vector<std::size_t>& quant_layers() const { return quant_layers_; }
  const std::vector<LayerCost>& costs() const { return costs_; }
  LayerParams& quant_params(std::size_t qidx) { return params_[quant_layers_[qidx]]; }
  const LayerParams& quant_params(std::size_t qidx) const { return params_[quant_layers_[qidx]]; }

  // Deep copy: no storage shared with this body.
  NetworkBody clone() const;

  // Weights, biases, thresholds and norm affine parameters.
  std::vector<Tensor> trainable() const;

  Tensor forward(const Tensor& batch, ForwardMode mode, const QuantizeFn& quantize);

 private:
  SeedNetwork seed_;
  std::vector<LayerParams> params_;
  std::vector<std::size_t> quant_layers_;
  std::vector<LayerCost> costs_;
  std::vector<Shape> shapes_;
};

// Built-in seed networks sized for a dataset's input shape and class count:
// "mlp3", "mlp4", "convnet6", "resnet20-cifar".
SeedNetwork builtin_seed(const std::string& name, const Shape& input_shape, std::size_t classes);
std::vector<std::string> builtin_seed_names();

}  // namespace ssps
