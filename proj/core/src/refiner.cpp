#include "mlvtg/refiner.hpp"

#include <cmath>
#include <cstring>

#include "mlvtg/error.hpp"
#include "mlvtg/ops.hpp"
#include "mlvtg/serialize.hpp"

namespace mlvtg {

namespace {
constexpr char kMagic[4] = {'M', 'L', 'V', 'G'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

const char* to_string(FrozenArch arch) {
  switch (arch) {
    case FrozenArch::mamba_block: return "mamba_block";
    case FrozenArch::linear_residual: return "linear_residual";
  }
  return "?";
}

Parameter* FrozenBlock::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter* FrozenBlock::find(const std::string& name) const {
  return const_cast<FrozenBlock*>(this)->find(name);
}

void FrozenBlock::freeze_all_and_stamp() {
  for (auto& p : params_) p.freeze();
  if (arch_ == FrozenArch::mamba_block) {
    auto need = [this](const char* n) -> Tensor {
      Parameter* p = find(n);
      if (!p) throw FormatError(std::string("frozen block is missing parameter ") + n);
      return p->tensor;
    };
    ssm_ = SsmParams{};
    ssm_.a_diag = need("frozen.ssm.a");
    ssm_.w_delta = need("frozen.ssm.w_delta");
    ssm_.b_delta = need("frozen.ssm.b_delta");
    ssm_.w_b = need("frozen.ssm.w_b");
    ssm_.b_b = need("frozen.ssm.b_b");
    ssm_.w_c = need("frozen.ssm.w_c");
    ssm_.b_c = need("frozen.ssm.b_c");
  }
  // Serialize ends with the hash of everything before it; stamp that.
  std::vector<std::uint8_t> img = serialize();
  ByteReader tail(std::span<const std::uint8_t>(img).subspan(img.size() - 8));
  checksum_ = tail.u64();
}

std::vector<std::uint8_t> FrozenBlock::serialize() const {
  ByteWriter w;
  w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  w.u16(kVersion);
  w.u8(static_cast<std::uint8_t>(arch_));
  w.u32(static_cast<std::uint32_t>(d_llm_));
  w.u32(layer_index_);
  for (const auto& p : params_) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(p.name.data()), p.name.size()));
    const Shape& s = p.tensor.shape();
    w.u8(static_cast<std::uint8_t>(s.size()));
    for (std::size_t e : s) w.u32(static_cast<std::uint32_t>(e));
    for (real v : p.tensor.data()) w.f32(static_cast<float>(v));
  }
  std::uint64_t h = fnv1a64(w.buffer());
  w.u64(h);
  return w.take();
}

bool FrozenBlock::verify_frozen() const {
  std::vector<std::uint8_t> img = serialize();
  ByteReader tail(std::span<const std::uint8_t>(img).subspan(img.size() - 8));
  return tail.u64() == checksum_;
}

Tensor FrozenBlock::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.shape()[1] != d_llm_) {
    throw DimensionError("frozen block expects [L," + std::to_string(d_llm_) + "], got " +
                         shape_str(x.shape()));
  }
  if (arch_ == FrozenArch::linear_residual) {
    return ops::add(x, ops::linear(x, find("frozen.w")->tensor, find("frozen.b")->tensor));
  }
  Tensor zn = ops::layer_norm(x, find("frozen.norm_gamma")->tensor,
                              find("frozen.norm_beta")->tensor);
  Tensor v = ops::linear(zn, find("frozen.w_x")->tensor, find("frozen.b_x")->tensor);
  Tensor g = ops::linear(zn, find("frozen.w_g")->tensor, find("frozen.b_g")->tensor);
  Tensor c = ops::silu(ops::conv1d_depthwise(v, find("frozen.conv")->tensor, true));
  Tensor y = ssm_forward(ssm_, SsmMode::selective_recurrent, c);
  Tensor fused = ops::mul(ops::silu(g), y);
  return ops::add(x, ops::linear(fused, find("frozen.w_out")->tensor,
                                 find("frozen.b_out")->tensor));
}

void FrozenBlock::collect(ParamList& out) {
  for (auto& p : params_) out.push_back(&p);
}

FrozenBlock FrozenBlock::make_surrogate(FrozenArch arch, std::size_t d_llm,
                                        std::size_t n_state, std::uint32_t layer_index,
                                        std::uint64_t seed) {
  Rng rng(seed);
  FrozenBlock b;
  b.arch_ = arch;
  b.d_llm_ = d_llm;
  b.layer_index_ = layer_index;
  real s = real(1) / std::sqrt(real(d_llm));
  if (arch == FrozenArch::linear_residual) {
    b.params_.emplace_back("frozen.w", Tensor::randn({d_llm, d_llm}, rng, s * real(0.5)));
    b.params_.emplace_back("frozen.b", Tensor::randn({d_llm}, rng, real(0.02)));
  } else {
    b.params_.emplace_back("frozen.norm_gamma", Tensor::full({d_llm}, real(1)));
    b.params_.emplace_back("frozen.norm_beta", Tensor::zeros({d_llm}));
    b.params_.emplace_back("frozen.w_x", Tensor::randn({d_llm, d_llm}, rng, s));
    b.params_.emplace_back("frozen.b_x", Tensor::zeros({d_llm}));
    b.params_.emplace_back("frozen.w_g", Tensor::randn({d_llm, d_llm}, rng, s));
    b.params_.emplace_back("frozen.b_g", Tensor::zeros({d_llm}));
    b.params_.emplace_back("frozen.conv",
                           Tensor::randn({3, d_llm}, rng, real(1) / std::sqrt(real(3))));
    SsmParams sp = make_selective_ssm(d_llm, n_state, rng);
    b.params_.emplace_back("frozen.ssm.a", sp.a_diag);
    b.params_.emplace_back("frozen.ssm.w_delta", sp.w_delta);
    b.params_.emplace_back("frozen.ssm.b_delta", sp.b_delta);
    b.params_.emplace_back("frozen.ssm.w_b", sp.w_b);
    b.params_.emplace_back("frozen.ssm.b_b", sp.b_b);
    b.params_.emplace_back("frozen.ssm.w_c", sp.w_c);
    b.params_.emplace_back("frozen.ssm.b_c", sp.b_c);
    b.params_.emplace_back("frozen.w_out", Tensor::randn({d_llm, d_llm}, rng, s * real(0.5)));
    b.params_.emplace_back("frozen.b_out", Tensor::zeros({d_llm}));
  }
  b.freeze_all_and_stamp();
  return b;
}

void save_frozen_block(const std::filesystem::path& path, const FrozenBlock& block) {
  write_file_atomic(path, block.serialize());
}

FrozenBlock load_frozen_block(const std::filesystem::path& path, std::size_t expected_d_llm) {
  std::vector<std::uint8_t> data = read_file(path);
  if (data.size() < 8) throw FormatError(path.string() + ": file too small");
  std::uint64_t stored =
      ByteReader(std::span<const std::uint8_t>(data).subspan(data.size() - 8)).u64();
  std::uint64_t actual =
      fnv1a64(std::span<const std::uint8_t>(data).first(data.size() - 8));
  if (stored != actual) {
    throw FormatError(path.string() + ": checksum mismatch (file corrupt)");
  }
  ByteReader r(std::span<const std::uint8_t>(data).first(data.size() - 8));
  auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad magic at offset 0");
  }
  std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  std::uint8_t arch_tag = r.u8();
  if (arch_tag != 1 && arch_tag != 2) {
    throw FormatError(path.string() + ": unknown architecture tag " +
                      std::to_string(arch_tag));
  }
  FrozenBlock b;
  b.arch_ = static_cast<FrozenArch>(arch_tag);
  b.d_llm_ = r.u32();
  b.layer_index_ = r.u32();
  if (expected_d_llm != 0 && b.d_llm_ != expected_d_llm) {
    throw FormatError(path.string() + ": width " + std::to_string(b.d_llm_) +
                      " does not match expected " + std::to_string(expected_d_llm));
  }
  while (!r.at_end()) {
    std::uint16_t name_len = r.u16();
    auto name_bytes = r.bytes(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    std::uint8_t rank = r.u8();
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& e : shape) {
      e = r.u32();
      numel *= e;
    }
    std::vector<real> buf(numel);
    for (auto& v : buf) v = static_cast<real>(r.f32());
    b.params_.emplace_back(name, Tensor::from(shape, std::move(buf)));
  }
  b.freeze_all_and_stamp();
  if (b.checksum_ != stored) {
    throw FormatError(path.string() + ": reserialization checksum disagrees");
  }
  return b;
}

Refiner::Refiner(std::size_t d, FrozenBlock block, bool residual, Rng& rng)
    : w1_("refiner.w1",
          Tensor::randn({d, block.d_llm()}, rng, real(1) / std::sqrt(real(d)))),
      b1_("refiner.b1", Tensor::zeros({block.d_llm()})),
      w2_("refiner.w2",
          Tensor::randn({block.d_llm(), d}, rng, real(1) / std::sqrt(real(block.d_llm())))),
      b2_("refiner.b2", Tensor::zeros({d})),
      block_(std::move(block)),
      residual_(residual) {}

Tensor Refiner::forward(const Tensor& z) const {
  Tensor inner = ops::linear(z, w1_.tensor, b1_.tensor);
  Tensor mid = block_.forward(inner);
  Tensor out = ops::linear(mid, w2_.tensor, b2_.tensor);
  return residual_ ? ops::add(z, out) : out;
}

void Refiner::collect(ParamList& out) {
  out.push_back(&w1_);
  out.push_back(&b1_);
  out.push_back(&w2_);
  out.push_back(&b2_);
  block_.collect(out);
}

}  // namespace mlvtg
