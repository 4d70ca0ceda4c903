#include "ssps/supernet.hpp"

#include <algorithm>
#include <cmath>

#include "ssps/constraints.hpp"
#include "ssps/errors.hpp"

namespace ssps {

Policy Policy::uniform(const std::string& model, const std::vector<std::string>& layer_names,
                       int w_bit, int a_bit) {
  Policy p;
  p.model = model;
  for (const auto& n : layer_names) p.layers.push_back({n, w_bit, a_bit, -1});
  return p;
}

void init_thresholds(NetworkBody& body, double activation_init, double input_init) {
  if (!(activation_init > 0.0) || !(input_init > 0.0)) {
    throw ConfigError("activation threshold init must be positive");
  }
  for (std::size_t q = 0; q < body.quant_layers().size(); ++q) {
    auto& p = body.quant_params(q);
    double mx = 0.0;
    for (double v : p.weight.data()) mx = std::max(mx, std::abs(v));
    p.w_threshold.mutable_data()[0] = std::max(mx, kMinThreshold);
    p.a_threshold.mutable_data()[0] = q == 0 ? input_init : activation_init;
  }
}

void calibrate_activation_thresholds(NetworkBody& body, const Tensor& batch, double percentile) {
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw ConfigError("calibration percentile must lie in (0, 100]");
  }
  if (batch.numel() == 0) throw ContractError("calibration batch is empty");
  std::vector<double> level(body.quant_layers().size(), kMinThreshold);
  body.forward(batch, ForwardMode::kEval, [&](std::size_t q, const Tensor& x, LayerParams& p) {
    std::vector<double> v(x.data().begin(), x.data().end());
    const auto k = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(v.size()))) - 1;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    level[q] = std::max(v[k], kMinThreshold);
    return std::pair{x, p.weight};
  });
  for (std::size_t q = 0; q < level.size(); ++q) body.quant_params(q).a_threshold.mutable_data()[0] = level[q];
}

Supernet Supernet::expand(NetworkBody body, const SupernetOptions& options) {
  if (!BitWidth::valid(options.endpoint_bits)) throw ConfigError("invalid endpoint bit-width");
  Supernet net;
  net.body_ = std::move(body);
  net.options_ = options;
  init_thresholds(net.body_, options.activation_threshold_init, options.input_threshold_init);
  const std::size_t nq = net.body_.quant_layers().size();
  for (std::size_t q = 1; q + 1 < nq; ++q) {
    net.searchable_.push_back(q);
    if (options.combined_cells) {
      net.cells_.emplace_back(CellKind::kCombined, options.weight_space, options.activation_space);
    } else {
      net.cells_.emplace_back(CellKind::kWeight, options.weight_space, options.activation_space);
      net.cells_.emplace_back(CellKind::kActivation, options.weight_space,
                              options.activation_space);
    }
  }
  if (net.searchable_.empty()) throw ConfigError("seed has no searchable layers");
  return net;
}

const std::string& Supernet::layer_name(std::size_t i) const {
  return body_.seed().layers[body_.quant_layers()[searchable_.at(i)]].name;
}

std::vector<std::string> Supernet::layer_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < searchable_.size(); ++i) names.push_back(layer_name(i));
  return names;
}

bool Supernet::is_endpoint(std::size_t qidx) const {
  return qidx == 0 || qidx + 1 == body_.quant_layers().size();
}

bool Supernet::all_decided() const {
  return std::all_of(cells_.begin(), cells_.end(), [](const SearchCell& c) { return c.decided(); });
}

double Supernet::remaining_space_log10() const {
  double s = 0.0;
  for (const auto& c : cells_) {
    if (!c.decided()) s += std::log10(static_cast<double>(c.candidate_count()));
  }
  return s;
}

std::vector<Tensor> Supernet::arch_params() {
  std::vector<Tensor> out;
  for (auto& c : cells_) {
    if (!c.decided()) out.push_back(c.logits());
  }
  return out;
}

std::pair<int, int> Supernet::layer_bits(std::size_t layer,
                                         const std::vector<std::size_t>& cell_index) const {
  if (options_.combined_cells) {
    const auto& c = cells_[layer];
    return {c.weight_bits(cell_index.at(layer)), c.activation_bits(cell_index.at(layer))};
  }
  return {cells_[2 * layer].weight_bits(cell_index.at(2 * layer)),
          cells_[2 * layer + 1].activation_bits(cell_index.at(2 * layer + 1))};
}

std::vector<std::pair<int, int>> Supernet::decided_bits() const {
  std::vector<std::size_t> idx;
  for (const auto& c : cells_) {
    if (!c.decided()) throw ContractError("decided_bits: undecided cells remain");
    idx.push_back(*c.decided_index());
  }
  std::vector<std::pair<int, int>> bits;
  for (std::size_t i = 0; i < searchable_.size(); ++i) bits.push_back(layer_bits(i, idx));
  return bits;
}

Policy Supernet::policy(const std::vector<int>& decided_epoch, std::uint64_t seed,
                        bool include_fixed) const {
  const auto bits = decided_bits();
  Policy p;
  p.model = model();
  p.seed = seed;
  for (std::size_t i = 0; i < searchable_.size(); ++i) {
    p.layers.push_back({layer_name(i), bits[i].first, bits[i].second,
                        i < decided_epoch.size() ? decided_epoch[i] : -1});
  }
  std::tie(p.e_wb, p.e_ab) = policy_bit_metrics(body_, p, options_.endpoint_bits, include_fixed);
  return p;
}

std::uint64_t Supernet::evaluations() const {
  std::uint64_t n = 0;
  for (const auto& c : cells_) n += c.evaluations();
  return n;
}

void Supernet::reset_evaluations() {
  for (auto& c : cells_) c.reset_evaluations();
}

namespace {

Tensor bit_tensor(const PathSample& s, const SearchCell& cell, bool weights) {
  std::vector<double> coeffs(cell.candidate_count());
  for (std::size_t m = 0; m < coeffs.size(); ++m) {
    coeffs[m] = weights ? cell.weight_bits(m) : cell.activation_bits(m);
  }
  if (s.h_st.defined()) return ops::weighted_sum(s.h_st, coeffs);
  return Tensor::scalar(coeffs[s.index]);
}

}  // namespace

ForwardResult Supernet::forward(const Tensor& batch, double tau, Rng& rng, ForwardMode mode) {
  ForwardResult result;
  const int eb = options_.endpoint_bits;
  const EvalMode em = options_.eval_mode;
  QuantizeFn quantize = [&](std::size_t q, const Tensor& x, LayerParams& p) {
    if (is_endpoint(q)) {
      return std::pair{quantize_activations(x, BitWidth(eb), p.a_threshold),
                       quantize_weights(p.weight, BitWidth(eb), p.w_threshold)};
    }
    LayerSample ls;
    ls.layer = q - 1;
    Tensor xq, wq;
    if (options_.combined_cells) {
      const auto& cell = cells_[ls.layer];
      PathSample s = cell.draw(tau, rng);
      xq = apply_cell(x, cell, s, p.a_threshold, QuantTarget::kActivations, em);
      wq = apply_cell(p.weight, cell, s, p.w_threshold, QuantTarget::kWeights, em);
      ls.weight_bits = cell.weight_bits(s.index);
      ls.activation_bits = cell.activation_bits(s.index);
      ls.weight_bit = bit_tensor(s, cell, true);
      ls.activation_bit = bit_tensor(s, cell, false);
      ls.paths.push_back(std::move(s));
    } else {
      const auto& wcell = cells_[2 * ls.layer];
      const auto& acell = cells_[2 * ls.layer + 1];
      PathSample ws = wcell.draw(tau, rng);
      PathSample as = acell.draw(tau, rng);
      xq = apply_cell(x, acell, as, p.a_threshold, QuantTarget::kActivations, em);
      wq = apply_cell(p.weight, wcell, ws, p.w_threshold, QuantTarget::kWeights, em);
      ls.weight_bits = wcell.weight_bits(ws.index);
      ls.activation_bits = acell.activation_bits(as.index);
      ls.weight_bit = bit_tensor(ws, wcell, true);
      ls.activation_bit = bit_tensor(as, acell, false);
      ls.paths.push_back(std::move(ws));
      ls.paths.push_back(std::move(as));
    }
    result.samples.push_back(std::move(ls));
    return std::pair{xq, wq};
  };
  result.logits = body_.forward(batch, mode, quantize);
  return result;
}

FixedNet::FixedNet(NetworkBody body, std::vector<std::pair<int, int>> bits)
    : body_(std::move(body)), bits_(std::move(bits)) {
  if (bits_.size() != body_.quant_layers().size()) {
    throw ContractError("FixedNet: one bit pair per parameterized layer required");
  }
  for (const auto& [w, a] : bits_) {
    if (!BitWidth::valid(w) || !BitWidth::valid(a)) throw ContractError("FixedNet: invalid bits");
  }
}

std::pair<double, double> policy_bit_metrics(const NetworkBody& body, const Policy& policy,
                                             int endpoint_bits, bool include_fixed) {
  const std::size_t nq = body.quant_layers().size();
  if (nq < 3 || policy.layers.size() != nq - 2) {
    throw ContractError("policy covers " + std::to_string(policy.layers.size()) + " of " +
                        std::to_string(nq < 2 ? 0 : nq - 2) + " searchable layers");
  }
  std::vector<double> w, a, num, flops;
  for (std::size_t q = 0; q < nq; ++q) {
    const bool endpoint = q == 0 || q + 1 == nq;
    if (endpoint && !include_fixed) continue;
    const auto& cost = body.costs()[body.quant_layers()[q]];
    w.push_back(endpoint ? endpoint_bits : policy.layers[q - 1].w_bit);
    a.push_back(endpoint ? endpoint_bits : policy.layers[q - 1].a_bit);
    num.push_back(static_cast<double>(cost.num_params));
    flops.push_back(static_cast<double>(cost.flops));
  }
  return {avg_weight_bits(w, num), avg_op_bits(a, w, flops)};
}

FixedNet FixedNet::materialize(const Supernet& net, const Policy& policy) {
  if (policy.layers.size() == net.searchable_count()) {
    for (std::size_t i = 0; i < policy.layers.size(); ++i) {
      if (policy.layers[i].name != net.layer_name(i)) {
        throw ContractError("policy layer '" + policy.layers[i].name + "' does not match '" +
                            net.layer_name(i) + "'");
      }
    }
  }
  return from_policy(net.body().clone(), policy, net.options().endpoint_bits);
}

FixedNet FixedNet::from_policy(NetworkBody body, const Policy& policy, int endpoint_bits) {
  const std::size_t nq = body.quant_layers().size();
  if (nq < 3 || policy.layers.size() != nq - 2) {
    throw ContractError("policy covers " + std::to_string(policy.layers.size()) + " of " +
                        std::to_string(nq < 2 ? 0 : nq - 2) + " searchable layers");
  }
  std::vector<std::pair<int, int>> bits;
  bits.emplace_back(endpoint_bits, endpoint_bits);
  for (const auto& lp : policy.layers) bits.emplace_back(lp.w_bit, lp.a_bit);
  bits.emplace_back(endpoint_bits, endpoint_bits);
  return FixedNet(std::move(body), std::move(bits));
}

FixedNet FixedNet::uniform(NetworkBody body, int bits) {
  const std::size_t nq = body.quant_layers().size();
  return FixedNet(std::move(body), std::vector<std::pair<int, int>>(nq, {bits, bits}));
}

Tensor FixedNet::forward(const Tensor& batch, ForwardMode mode) {
  return body_.forward(batch, mode, [this](std::size_t q, const Tensor& x, LayerParams& p) {
    const auto [w, a] = bits_[q];
    return std::pair{quantize_activations(x, BitWidth(a), p.a_threshold),
                     quantize_weights(p.weight, BitWidth(w), p.w_threshold)};
  });
}

}  // namespace ssps
