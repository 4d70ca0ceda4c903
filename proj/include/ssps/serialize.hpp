#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssps/supernet.hpp"

namespace ssps {

// policy.json: {model, layers: [{name, w_bit, a_bit, decided_epoch}], e_wb,
// e_ab, seed}. Two-space indentation, fixed key order.
std::string policy_to_json(const Policy& policy);
// Throws ParseError on malformed JSON or a schema mismatch.
Policy policy_from_json(const std::string& text);
void write_policy(const Policy& policy, const std::string& path);
Policy read_policy(const std::string& path);

// Binary checkpoint (little-endian):
//   magic "SSPSCKPT", u32 version, u64 config hash, u8 kind (0 fixed,
//   1 supernet), model name, input shape, class count, per-layer tensors,
//   (w, a) bits per parameterized layer, then search cells (supernet only).
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CellState {
  std::vector<double> logits;
  std::int64_t decided = -1;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  bool supernet = false;
  NetworkBody body;
  // Bits of every parameterized layer; zeros for undecided supernet layers.
  std::vector<std::pair<int, int>> bits;
  std::vector<CellState> cells;

  // Throws ContractError if any bit entry is unset.
  FixedNet to_fixed() const;
};

Checkpoint checkpoint_of(const FixedNet& net, std::uint64_t config_hash);
Checkpoint checkpoint_of(const Supernet& net, std::uint64_t config_hash);

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws ParseError with the byte offset on truncation or bad magic/version.
Checkpoint decode_checkpoint(const std::string& bytes);
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

// Whole file as bytes; throws ConfigError naming the path.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace ssps
