#include "ssps/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ssps/errors.hpp"

namespace ssps {

using nlohmann::json;
using nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

std::string policy_to_json(const Policy& p) {
  ordered_json j;
  j["model"] = p.model;
  j["layers"] = ordered_json::array();
  for (const auto& l : p.layers) {
    ordered_json e;
    e["name"] = l.name;
    e["w_bit"] = l.w_bit;
    e["a_bit"] = l.a_bit;
    e["decided_epoch"] = l.decided_epoch;
    j["layers"].push_back(e);
  }
  j["e_wb"] = p.e_wb;
  j["e_ab"] = p.e_ab;
  j["seed"] = p.seed;
  return j.dump(2) + "\n";
}

namespace {

template <class T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("policy: missing '") + key + "'", 0);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string("policy: bad type for '") + key + "'", 0);
  }
}

}  // namespace

Policy policy_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& ex) {
    throw ParseError(std::string("policy: ") + ex.what(), ex.byte);
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "model" && k != "layers" && k != "e_wb" && k != "e_ab" && k != "seed") {
      throw ParseError("policy: unexpected key '" + k + "'", 0);
    }
  }
  Policy p;
  p.model = field<std::string>(j, "model");
  p.e_wb = field<double>(j, "e_wb");
  p.e_ab = field<double>(j, "e_ab");
  p.seed = field<std::uint64_t>(j, "seed");
  if (!j.at("layers").is_array() || j.at("layers").empty()) throw ParseError("policy: 'layers' must be a non-empty array", 0);
  for (const auto& e : j.at("layers")) {
    if (e.size() != 4) throw ParseError("policy: each layer has exactly name, w_bit, a_bit, decided_epoch", 0);
    LayerPolicy l;
    l.name = field<std::string>(e, "name");
    l.w_bit = field<int>(e, "w_bit");
    l.a_bit = field<int>(e, "a_bit");
    l.decided_epoch = field<int>(e, "decided_epoch");
    if (!BitWidth::valid(l.w_bit) || !BitWidth::valid(l.a_bit)) {
      throw ParseError("policy: invalid bits for layer '" + l.name + "'", 0);
    }
    p.layers.push_back(l);
  }
  return p;
}

void write_policy(const Policy& policy, const std::string& path) { write_file(path, policy_to_json(policy)); }

Policy read_policy(const std::string& path) { return policy_from_json(read_file(path)); }

namespace {

constexpr char kMagic[8] = {'S', 'S', 'P', 'S', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) v = byteswap(v);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void doubles(std::span<const double> v) {
    put<std::uint64_t>(v.size());
    for (double d : v) put(d);
  }
  void tensor(const Tensor& t) {
    put<std::uint8_t>(t.defined() ? 1 : 0);
    if (!t.defined()) return;
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(d);
    doubles(t.data());
  }
  std::string take() { return std::move(out_); }

 private:
  template <class T>
  static T byteswap(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    char buf[sizeof(T)];
    std::memcpy(buf, in_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::string str(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(const char* what) {
    const auto n = get<std::uint64_t>(what);
    if (n > (in_.size() - pos_) / sizeof(double)) fail(what);
    std::vector<double> v(n);
    for (auto& d : v) d = get<double>(what);
    return v;
  }
  // Reads a tensor record into `dst` (whose shape must match), or checks
  // that an absent tensor is absent in `dst` too.
  void tensor_into(Tensor& dst, const char* what) {
    const std::size_t at = pos_;
    const bool present = get<std::uint8_t>(what) != 0;
    if (present != dst.defined()) throw ParseError(std::string("checkpoint: unexpected ") + what, at);
    if (!present) return;
    const auto rank = get<std::uint32_t>(what);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get<std::uint64_t>(what));
    if (shape != dst.shape()) throw ParseError(std::string("checkpoint: shape mismatch in ") + what, at);
    const auto v = doubles(what);
    if (v.size() != dst.numel()) throw ParseError(std::string("checkpoint: size mismatch in ") + what, at);
    std::copy(v.begin(), v.end(), dst.mutable_data().begin());
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }
  [[noreturn]] void fail(const char* what) const {
    throw ParseError(std::string("checkpoint: truncated ") + what, pos_);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) fail(what);
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

void write_seed(Writer& w, const SeedNetwork& s) {
  w.str(s.name);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.input_shape.size()));
  for (auto d : s.input_shape) w.put<std::uint64_t>(d);
  w.put<std::uint64_t>(s.classes);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.layers.size()));
  for (const auto& l : s.layers) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.kind));
    w.str(l.name);
    for (auto v : {l.in, l.out, l.kernel, l.stride, l.padding}) w.put<std::uint64_t>(v);
    w.put<std::uint8_t>(l.bias);
    w.put<std::uint8_t>(l.relu);
    w.put<std::int32_t>(l.residual_from);
  }
}

SeedNetwork read_seed(Reader& r) {
  SeedNetwork s;
  s.name = r.str("model name");
  const auto rank = r.get<std::uint32_t>("input shape");
  for (std::uint32_t i = 0; i < rank; ++i) s.input_shape.push_back(r.get<std::uint64_t>("input shape"));
  s.classes = r.get<std::uint64_t>("class count");
  const auto n = r.get<std::uint32_t>("layer count");
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec l;
    const std::size_t at = r.pos();
    const auto kind = r.get<std::uint8_t>("layer kind");
    if (kind > static_cast<std::uint8_t>(LayerKind::kResidualAdd)) throw ParseError("checkpoint: bad layer kind", at);
    l.kind = static_cast<LayerKind>(kind);
    l.name = r.str("layer name");
    l.in = r.get<std::uint64_t>("layer spec");
    l.out = r.get<std::uint64_t>("layer spec");
    l.kernel = r.get<std::uint64_t>("layer spec");
    l.stride = r.get<std::uint64_t>("layer spec");
    l.padding = r.get<std::uint64_t>("layer spec");
    l.bias = r.get<std::uint8_t>("layer spec") != 0;
    l.relu = r.get<std::uint8_t>("layer spec") != 0;
    l.residual_from = r.get<std::int32_t>("layer spec");
    s.layers.push_back(l);
  }
  return s;
}

}  // namespace

FixedNet Checkpoint::to_fixed() const {
  for (const auto& [w, a] : bits) {
    if (w == 0 || a == 0) throw ContractError("checkpoint: supernet has undecided layers");
  }
  return FixedNet(body.clone(), bits);
}

Checkpoint checkpoint_of(const FixedNet& net, std::uint64_t config_hash) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.body = net.body().clone();
  c.bits = net.bits();
  return c;
}

Checkpoint checkpoint_of(const Supernet& net, std::uint64_t config_hash) {
  Checkpoint c;
  c.config_hash = config_hash;
  c.supernet = true;
  c.body = net.body().clone();
  const std::size_t nq = net.body().quant_layers().size();
  c.bits.assign(nq, {0, 0});
  const int e = net.options().endpoint_bits;
  c.bits.front() = c.bits.back() = {e, e};
  std::vector<std::size_t> idx;
  bool all = true;
  for (std::size_t id = 0; id < net.cell_count(); ++id) {
    const SearchCell& cell = net.cell(id);
    CellState st;
    st.logits.assign(cell.logits().data().begin(), cell.logits().data().end());
    if (cell.decided()) {
      st.decided = static_cast<std::int64_t>(*cell.decided_index());
      idx.push_back(*cell.decided_index());
    } else {
      all = false;
    }
    c.cells.push_back(std::move(st));
  }
  if (all) {
    for (std::size_t i = 0; i < net.searchable_count(); ++i) c.bits[net.quant_index(i)] = net.layer_bits(i, idx);
  }
  return c;
}

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  for (char ch : kMagic) w.put(ch);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(c.config_hash);
  w.put<std::uint8_t>(c.supernet ? 1 : 0);
  write_seed(w, c.body.seed());
  const auto& params = c.body.params();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    for (const Tensor* t : {&p.weight, &p.bias, &p.w_threshold, &p.a_threshold, &p.gamma, &p.beta}) w.tensor(*t);
    w.doubles(p.running_mean);
    w.doubles(p.running_var);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.bits.size()));
  for (const auto& [wb, ab] : c.bits) {
    w.put<std::int32_t>(wb);
    w.put<std::int32_t>(ab);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.cells.size()));
  for (const auto& cell : c.cells) {
    w.doubles(cell.logits);
    w.put<std::int64_t>(cell.decided);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  for (char ch : kMagic) {
    const std::size_t at = r.pos();
    if (r.get<char>("magic") != ch) throw ParseError("checkpoint: bad magic", at);
  }
  {
    const std::size_t at = r.pos();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
      throw ParseError("checkpoint: unsupported version " + std::to_string(version), at);
    }
  }
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>("config hash");
  c.supernet = r.get<std::uint8_t>("kind") != 0;
  const std::size_t seed_at = r.pos();
  SeedNetwork seed = read_seed(r);
  try {
    Rng rng(0);
    c.body = NetworkBody::initialize(seed, rng);
  } catch (const ConfigError& ex) {
    throw ParseError(std::string("checkpoint: invalid network: ") + ex.what(), seed_at);
  }
  auto& params = c.body.params();
  {
    const std::size_t at = r.pos();
    if (r.get<std::uint32_t>("parameter count") != params.size()) {
      throw ParseError("checkpoint: parameter count mismatch", at);
    }
  }
  for (auto& p : params) {
    r.tensor_into(p.weight, "weight");
    r.tensor_into(p.bias, "bias");
    r.tensor_into(p.w_threshold, "weight threshold");
    r.tensor_into(p.a_threshold, "activation threshold");
    r.tensor_into(p.gamma, "gamma");
    r.tensor_into(p.beta, "beta");
    const std::size_t at = r.pos();
    auto mean = r.doubles("running mean");
    auto var = r.doubles("running variance");
    if (mean.size() != p.running_mean.size() || var.size() != p.running_var.size()) {
      throw ParseError("checkpoint: running statistics size mismatch", at);
    }
    p.running_mean = std::move(mean);
    p.running_var = std::move(var);
  }
  {
    const std::size_t at = r.pos();
    const auto n = r.get<std::uint32_t>("bit count");
    if (n != c.body.quant_layers().size()) throw ParseError("checkpoint: bit count mismatch", at);
    for (std::uint32_t i = 0; i < n; ++i) {
      const int wb = r.get<std::int32_t>("bits");
      const int ab = r.get<std::int32_t>("bits");
      c.bits.emplace_back(wb, ab);
    }
  }
  const auto ncells = r.get<std::uint32_t>("cell count");
  for (std::uint32_t i = 0; i < ncells; ++i) {
    CellState st;
    st.logits = r.doubles("cell logits");
    st.decided = r.get<std::int64_t>("cell decision");
    c.cells.push_back(std::move(st));
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes", r.pos());
  return c;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace ssps
