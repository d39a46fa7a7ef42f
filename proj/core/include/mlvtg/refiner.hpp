#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mlvtg/param.hpp"
#include "mlvtg/ssm.hpp"

namespace mlvtg {

enum class FrozenArch : std::uint8_t {
  mamba_block = 1,      // norm -> gated causal selective-scan block with residual
  linear_residual = 2,  // x + x W + b
};

const char* to_string(FrozenArch arch);

// A pre-trained block whose weights are excluded from optimization. The
// weight checksum is recorded at load/creation and re-verified on demand to
// prove training never touched it.
class FrozenBlock {
 public:
  FrozenBlock() = default;

  Tensor forward(const Tensor& x) const;  // [L, d_llm] -> [L, d_llm]

  FrozenArch arch() const { return arch_; }
  std::size_t d_llm() const { return d_llm_; }
  std::uint32_t layer_index() const { return layer_index_; }
  std::uint64_t checksum() const { return checksum_; }

  // True iff the current weights still hash to the load-time checksum.
  bool verify_frozen() const;

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  void collect(ParamList& out);

  // Serialized image: magic MLVG, version u16 = 1, architecture u8, d_llm
  // u32, layer_index u32, parameter sections (name u16-length + bytes, rank
  // u8, extents u32 each, f32 little-endian data), fnv1a64 checksum u64 of
  // all preceding bytes.
  std::vector<std::uint8_t> serialize() const;

  static FrozenBlock make_surrogate(FrozenArch arch, std::size_t d_llm, std::size_t n_state,
                                    std::uint32_t layer_index, std::uint64_t seed);

  friend FrozenBlock load_frozen_block(const std::filesystem::path& path,
                                       std::size_t expected_d_llm);

 private:
  void freeze_all_and_stamp();
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  FrozenArch arch_ = FrozenArch::linear_residual;
  std::size_t d_llm_ = 0;
  std::uint32_t layer_index_ = 0;
  std::uint64_t checksum_ = 0;
  std::vector<Parameter> params_;
  SsmParams ssm_;  // populated for mamba_block
};

void save_frozen_block(const std::filesystem::path& path, const FrozenBlock& block);

// expected_d_llm > 0 enforces the width; mismatch raises FormatError listing
// both values.
FrozenBlock load_frozen_block(const std::filesystem::path& path, std::size_t expected_d_llm = 0);

// Trainable adapters around the frozen block: out = F_L2(F_llm(F_L1(z))),
// optionally added back onto z.
class Refiner {
 public:
  Refiner() = default;
  Refiner(std::size_t d, FrozenBlock block, bool residual, Rng& rng);

  Tensor forward(const Tensor& z) const;  // [L, D] -> [L, D]

  const FrozenBlock& frozen() const { return block_; }
  FrozenBlock& frozen() { return block_; }
  bool residual() const { return residual_; }
  void collect(ParamList& out);

 private:
  Parameter w1_, b1_, w2_, b2_;
  FrozenBlock block_;
  bool residual_ = true;
};

}  // namespace mlvtg
