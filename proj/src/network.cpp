#include "ssps/network.hpp"

#include <cmath>

#include "ssps/errors.hpp"

namespace ssps {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense:
      return "dense";
    case LayerKind::kConv:
      return "conv";
    case LayerKind::kPool:
      return "pool";
    case LayerKind::kNorm:
      return "norm";
    case LayerKind::kResidualAdd:
      return "residual-add";
  }
  return "?";
}

namespace {

[[noreturn]] void bad_layer(const SeedNetwork& seed, std::size_t i, const std::string& why) {
  throw ConfigError("seed '" + seed.name + "' layer " + std::to_string(i) + " (" +
                    seed.layers[i].name + "): " + why);
}

constexpr double kNormMomentum = 0.1;
constexpr double kNormEps = 1e-5;

}  // namespace

std::vector<Shape> infer_shapes(const SeedNetwork& seed) {
  if (seed.input_shape.empty()) throw ConfigError("seed '" + seed.name + "': empty input shape");
  std::vector<Shape> in_shapes;
  std::vector<Shape> out_shapes;
  Shape cur = seed.input_shape;
  for (std::size_t i = 0; i < seed.layers.size(); ++i) {
    const auto& l = seed.layers[i];
    in_shapes.push_back(cur);
    switch (l.kind) {
      case LayerKind::kDense:
        if (l.in == 0 || l.out == 0) bad_layer(seed, i, "dense layer needs positive sizes");
        if (shape_numel(cur) != l.in) {
          bad_layer(seed, i, "expects " + std::to_string(l.in) + " inputs, got " + shape_str(cur));
        }
        cur = {l.out};
        break;
      case LayerKind::kConv: {
        if (cur.size() != 3) bad_layer(seed, i, "conv needs [C, H, W] input, got " + shape_str(cur));
        if (cur[0] != l.in) bad_layer(seed, i, "channel mismatch with input " + shape_str(cur));
        if (l.stride == 0 || l.kernel == 0 || l.out == 0) bad_layer(seed, i, "invalid conv geometry");
        if (cur[1] + 2 * l.padding < l.kernel || cur[2] + 2 * l.padding < l.kernel) {
          bad_layer(seed, i, "kernel larger than padded input");
        }
        cur = {l.out, (cur[1] + 2 * l.padding - l.kernel) / l.stride + 1,
               (cur[2] + 2 * l.padding - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::kPool:
        if (cur.size() != 3) bad_layer(seed, i, "pool needs [C, H, W] input");
        cur = {cur[0]};
        break;
      case LayerKind::kNorm:
        if (cur.size() != 1 && cur.size() != 3) bad_layer(seed, i, "norm needs rank 1 or 3 input");
        break;
      case LayerKind::kResidualAdd: {
        if (l.residual_from < 0 || static_cast<std::size_t>(l.residual_from) >= i) {
          bad_layer(seed, i, "residual source must be an earlier layer");
        }
        const Shape& src = in_shapes[static_cast<std::size_t>(l.residual_from)];
        if (src != cur) {
          const bool projectable = src.size() == 3 && cur.size() == 3 && src[0] <= cur[0] &&
                                   cur[1] > 0 && src[1] % cur[1] == 0 &&
                                   src[1] / cur[1] == (src[2] + cur[2] - 1) / cur[2];
          if (!projectable) {
            bad_layer(seed, i, "cannot add " + shape_str(src) + " to " + shape_str(cur));
          }
        }
        break;
      }
    }
    out_shapes.push_back(cur);
  }
  return out_shapes;
}

void SeedNetwork::validate() const {
  const auto shapes = infer_shapes(*this);
  std::size_t parameterized = 0;
  for (const auto& l : layers) parameterized += l.parameterized() ? 1 : 0;
  if (parameterized < 3) {
    throw ConfigError("seed '" + name + "' needs a searchable layer between its fixed endpoints");
  }
  if (shapes.empty() || shapes.back() != Shape{classes}) {
    throw ConfigError("seed '" + name + "' must end with " + std::to_string(classes) + " outputs");
  }
  if (!layers.back().parameterized()) {
    throw ConfigError("seed '" + name + "' must end with a dense or conv layer");
  }
}

std::vector<LayerCost> layer_costs(const SeedNetwork& seed) {
  const auto shapes = infer_shapes(seed);
  std::vector<LayerCost> costs;
  for (std::size_t i = 0; i < seed.layers.size(); ++i) {
    const auto& l = seed.layers[i];
    LayerCost c;
    if (l.kind == LayerKind::kDense) {
      c.num_params = static_cast<std::int64_t>(l.in * l.out + (l.bias ? l.out : 0));
      c.flops = static_cast<std::int64_t>(l.in * l.out);
    } else if (l.kind == LayerKind::kConv) {
      const auto& o = shapes[i];
      const std::size_t kernel_elems = l.in * l.kernel * l.kernel;
      c.num_params = static_cast<std::int64_t>(l.out * kernel_elems + (l.bias ? l.out : 0));
      c.flops = static_cast<std::int64_t>(l.out * kernel_elems * o[1] * o[2]);
    }
    costs.push_back(c);
  }
  return costs;
}

NetworkBody NetworkBody::initialize(const SeedNetwork& seed, Rng& rng) {
  seed.validate();
  NetworkBody body;
  body.seed_ = seed;
  body.shapes_ = infer_shapes(seed);
  body.costs_ = layer_costs(seed);
  body.params_.resize(seed.layers.size());
  for (std::size_t i = 0; i < seed.layers.size(); ++i) {
    const auto& l = seed.layers[i];
    auto& p = body.params_[i];
    if (l.parameterized()) {
      body.quant_layers_.push_back(i);
      Shape wshape;
      std::size_t fan_in;
      if (l.kind == LayerKind::kDense) {
        wshape = {l.in, l.out};
        fan_in = l.in;
      } else {
        wshape = {l.out, l.in, l.kernel, l.kernel};
        fan_in = l.in * l.kernel * l.kernel;
      }
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      std::vector<double> w(shape_numel(wshape));
      for (auto& v : w) v = rng.normal(0.0, stddev);
      p.weight = Tensor::from(wshape, std::move(w), true);
      if (l.bias) p.bias = Tensor::zeros({l.out}, true);
      p.w_threshold = Tensor::scalar(1.0, true);
      p.a_threshold = Tensor::scalar(1.0, true);
    } else if (l.kind == LayerKind::kNorm) {
      const std::size_t c = (i == 0 ? seed.input_shape : body.shapes_[i - 1])[0];
      p.gamma = Tensor::full({c}, 1.0, true);
      p.beta = Tensor::zeros({c}, true);
      p.running_mean.assign(c, 0.0);
      p.running_var.assign(c, 1.0);
    }
  }
  return body;
}

NetworkBody NetworkBody::clone() const {
  NetworkBody copy = *this;
  auto deep = [](Tensor& t) {
    if (t.defined()) t = t.clone();
  };
  for (auto& p : copy.params_) {
    deep(p.weight);
    deep(p.bias);
    deep(p.w_threshold);
    deep(p.a_threshold);
    deep(p.gamma);
    deep(p.beta);
  }
  return copy;
}

std::vector<Tensor> NetworkBody::trainable() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) {
    for (const auto* t : {&p.weight, &p.bias, &p.w_threshold, &p.a_threshold, &p.gamma, &p.beta}) {
      if (t->defined()) out.push_back(*t);
    }
  }
  return out;
}

Tensor NetworkBody::forward(const Tensor& batch, ForwardMode mode, const QuantizeFn& quantize) {
  const std::size_t N = batch.dim(0);
  {
    Shape expect{N};
    expect.insert(expect.end(), seed_.input_shape.begin(), seed_.input_shape.end());
    if (batch.shape() != expect) {
      throw DimensionError("network '" + seed_.name + "' expects batch " + shape_str(expect) +
                           ", got " + shape_str(batch.shape()));
    }
  }
  std::vector<Tensor> inputs(seed_.layers.size());
  Tensor x = batch;
  std::size_t qidx = 0;
  for (std::size_t i = 0; i < seed_.layers.size(); ++i) {
    const auto& l = seed_.layers[i];
    auto& p = params_[i];
    inputs[i] = x;
    switch (l.kind) {
      case LayerKind::kDense: {
        if (x.rank() != 2) x = ops::reshape(x, {N, x.numel() / N});
        auto [xq, wq] = quantize(qidx++, x, p);
        x = ops::matmul(xq, wq);
        if (p.bias.defined()) x = ops::add_bias(x, p.bias);
        break;
      }
      case LayerKind::kConv: {
        auto [xq, wq] = quantize(qidx++, x, p);
        x = ops::conv2d(xq, wq, {l.stride, l.padding});
        if (p.bias.defined()) x = ops::add_bias(x, p.bias);
        break;
      }
      case LayerKind::kPool:
        x = ops::global_avg_pool(x);
        break;
      case LayerKind::kNorm:
        if (mode == ForwardMode::kEval) {
          x = ops::batch_norm_fixed(x, p.gamma, p.beta, p.running_mean, p.running_var, kNormEps);
        } else {
          std::vector<double> m, v;
          x = ops::batch_norm(x, p.gamma, p.beta, kNormEps, &m, &v);
          if (mode == ForwardMode::kTrain) {
            for (std::size_t c = 0; c < m.size(); ++c) {
              p.running_mean[c] = (1.0 - kNormMomentum) * p.running_mean[c] + kNormMomentum * m[c];
              p.running_var[c] = (1.0 - kNormMomentum) * p.running_var[c] + kNormMomentum * v[c];
            }
          }
        }
        break;
      case LayerKind::kResidualAdd: {
        Tensor src = inputs[static_cast<std::size_t>(l.residual_from)];
        if (src.shape() != x.shape()) {
          src = ops::shortcut(src, x.dim(1), src.dim(2) / x.dim(2));
        }
        x = ops::add(x, src);
        break;
      }
    }
    if (l.relu && l.kind != LayerKind::kPool) x = ops::relu(x);
  }
  return x;
}

namespace {

LayerSpec dense(std::string name, std::size_t in, std::size_t out, bool relu, bool bias = true) {
  LayerSpec l;
  l.bias = bias;
  l.kind = LayerKind::kDense;
  l.name = std::move(name);
  l.in = in;
  l.out = out;
  l.relu = relu;
  return l;
}

LayerSpec conv(std::string name, std::size_t in, std::size_t out, std::size_t stride, bool relu,
               bool bias = true) {
  LayerSpec l;
  l.kind = LayerKind::kConv;
  l.name = std::move(name);
  l.in = in;
  l.out = out;
  l.kernel = 3;
  l.stride = stride;
  l.padding = 1;
  l.relu = relu;
  l.bias = bias;
  return l;
}

LayerSpec norm(std::string name, bool relu) {
  LayerSpec l;
  l.kind = LayerKind::kNorm;
  l.name = std::move(name);
  l.relu = relu;
  return l;
}

LayerSpec residual(std::string name, int from, bool relu) {
  LayerSpec l;
  l.kind = LayerKind::kResidualAdd;
  l.name = std::move(name);
  l.residual_from = from;
  l.relu = relu;
  return l;
}

LayerSpec pool(std::string name) {
  LayerSpec l;
  l.kind = LayerKind::kPool;
  l.name = std::move(name);
  return l;
}

Shape image_shape(const Shape& input_shape, const std::string& model) {
  if (input_shape.size() != 3) {
    throw ConfigError("model '" + model + "' needs [C, H, W] inputs, got " + shape_str(input_shape));
  }
  return input_shape;
}

}  // namespace

std::vector<std::string> builtin_seed_names() { return {"mlp3", "mlp4", "convnet6", "resnet20-cifar"}; }

SeedNetwork builtin_seed(const std::string& name, const Shape& input_shape, std::size_t classes) {
  SeedNetwork s;
  s.name = name;
  s.input_shape = input_shape;
  s.classes = classes;
  const std::size_t in = shape_numel(input_shape);
  if (name == "mlp3") {
    s.layers = {dense("fc1", in, 64, false, false), norm("bn1", true), dense("fc2", 64, 64, false, false),
                norm("bn2", true), dense("fc3", 64, classes, false)};
  } else if (name == "mlp4") {
    // Narrow first layer: the second layer sees a low-dimensional input code.
    s.layers = {dense("fc1", in, 16, false, false), norm("bn1", true), dense("fc2", 16, 64, false, false),
                norm("bn2", true), dense("fc3", 64, 64, false, false), norm("bn3", true),
                dense("fc4", 64, classes, false)};
  } else if (name == "convnet6") {
    const Shape img = image_shape(input_shape, name);
    s.layers = {conv("conv1", img[0], 8, 1, true),
                conv("conv2", 8, 8, 1, true),
                conv("conv3", 8, 8, 1, false),
                residual("add1", 1, true),
                conv("conv4", 8, 16, 2, true),
                conv("conv5", 16, 16, 1, true),
                conv("conv6", 16, 16, 1, true),
                pool("pool"),
                dense("fc", 16, classes, false)};
  } else if (name == "resnet20-cifar") {
    const Shape img = image_shape(input_shape, name);
    s.layers = {conv("conv1", img[0], 16, 1, false, false), norm("bn1", true)};
    std::size_t channels = 16;
    const std::size_t widths[3] = {16, 32, 64};
    for (int stage = 0; stage < 3; ++stage) {
      for (int block = 0; block < 3; ++block) {
        const std::size_t out = widths[stage];
        const std::size_t stride = (stage > 0 && block == 0) ? 2 : 1;
        const std::string tag = "s" + std::to_string(stage + 1) + "b" + std::to_string(block + 1);
        const int block_start = static_cast<int>(s.layers.size());
        s.layers.push_back(conv(tag + "_conv1", channels, out, stride, false, false));
        s.layers.push_back(norm(tag + "_bn1", true));
        s.layers.push_back(conv(tag + "_conv2", out, out, 1, false, false));
        s.layers.push_back(norm(tag + "_bn2", false));
        s.layers.push_back(residual(tag + "_add", block_start, true));
        channels = out;
      }
    }
    s.layers.push_back(pool("pool"));
    s.layers.push_back(dense("fc", 64, classes, false));
  } else {
    throw ConfigError("unknown model '" + name + "'");
  }
  s.validate();
  return s;
}

}  // namespace ssps
