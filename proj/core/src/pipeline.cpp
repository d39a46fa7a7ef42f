#include "mlvtg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "mlvtg/error.hpp"
#include "mlvtg/ops.hpp"
#include "mlvtg/serialize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mlvtg {

namespace {

FrontendConfig frontend_config(const RunConfig& cfg) {
  FrontendConfig f;
  f.d_in_video = cfg.d_in_video;
  f.d_in_query = cfg.d_in_query;
  f.d = cfg.d;
  f.max_len = cfg.max_len;
  f.dropout = real(cfg.dropout);
  return f;
}

AlignerConfig aligner_config(const RunConfig& cfg) {
  AlignerConfig a;
  a.d = cfg.d;
  a.d_inner = cfg.d_inner;
  a.n_state = cfg.n_state;
  a.conv_width = cfg.conv_width;
  a.n_blocks = cfg.k_blocks;
  a.gate = cfg.gate == "sigmoid" ? GateMode::sigmoid : GateMode::silu;
  a.ssm_mode = SsmMode::selective_recurrent;
  return a;
}

LossWeights loss_weights(const RunConfig& cfg) {
  return {real(cfg.lambda_f), real(cfg.lambda_reg), real(cfg.lambda_inter),
          real(cfg.lambda_intra)};
}

}  // namespace

FrozenBlock build_frozen_block(const RunConfig& cfg) {
  if (!cfg.frozen_path.empty()) {
    return load_frozen_block(cfg.frozen_path, cfg.d_llm);
  }
  FrozenArch arch = cfg.frozen_arch == "mamba_block" ? FrozenArch::mamba_block
                                                     : FrozenArch::linear_residual;
  return FrozenBlock::make_surrogate(arch, cfg.d_llm, cfg.n_state, 0,
                                     splitmix64(cfg.seed ^ 0x11f7));
}

Model::Model(const RunConfig& cfg, FrozenBlock block)
    : cfg_(cfg),
      rng_(Rng(cfg.seed).fork(2)),
      frontend_(frontend_config(cfg), rng_),
      aligner_(aligner_config(cfg), rng_),
      refiner_(cfg.d, std::move(block), cfg.refiner_residual, rng_),
      tl_(cfg.d, cfg.conv_width, rng_),
      hd_(rng_) {}

ModelOut Model::forward(const GroundingSample& sample, Rng* dropout_rng) const {
  bool training = dropout_rng != nullptr && cfg_.dropout > 0;
  FrontendOut fo = frontend_.forward(sample.video_features, sample.query_features, training,
                                     training ? dropout_rng : nullptr);
  ModelOut out;
  out.taps.v_proj = fo.v_proj;
  out.taps.q_proj = fo.q_proj;
  out.taps.s = fo.tokens.s;
  out.taps.boundary = fo.tokens.boundary;
  out.taps.z0 = fo.tokens.z;
  out.taps.z_align = cfg_.use_aligner ? aligner_.forward(fo.tokens.z) : fo.tokens.z;
  out.taps.z_refine = cfg_.use_refiner ? refiner_.forward(out.taps.z_align) : out.taps.z_align;
  out.taps.vid_refined =
      ops::slice_rows(out.taps.z_refine, out.taps.boundary, out.taps.z_refine.shape()[0]);
  out.tl = tl_.forward(out.taps.z_refine, out.taps.boundary);
  out.hd = hd_.forward(out.taps.vid_refined, out.taps.s);
  return out;
}

const ParamList& Model::params() {
  if (params_.empty()) {
    frontend_.collect(params_);
    aligner_.collect(params_);
    refiner_.collect(params_);
    tl_.collect(params_);
    hd_.collect(params_);
  }
  return params_;
}

LossTargets targets_for(const GroundingSample& s) {
  LossTargets t;
  for (const auto& sp : s.gt_spans) {
    t.spans_st.push_back(sp.st);
    t.spans_ed.push_back(sp.ed);
  }
  t.saliency = s.gt_saliency;
  return t;
}

BatchLoss batch_loss(Model& model, const std::vector<GroundingSample>& data,
                     const std::vector<std::size_t>& batch_idx, Rng* dropout_root) {
  if (batch_idx.empty()) throw DimensionError("batch_loss on empty batch");
  std::size_t B = batch_idx.size();
  std::vector<ModelOut> outs;
  std::vector<Tensor> means;
  outs.reserve(B);
  means.reserve(B);
  for (std::size_t k = 0; k < B; ++k) {
    Rng dr;
    Rng* drp = nullptr;
    if (dropout_root) {
      dr = dropout_root->fork(k);
      drp = &dr;
    }
    outs.push_back(model.forward(data[batch_idx[k]], drp));
    means.push_back(ops::mean_rows(outs.back().taps.vid_refined));
  }

  LossWeights w = loss_weights(model.config());
  BatchLoss out;
  Tensor acc;
  for (std::size_t k = 0; k < B; ++k) {
    std::vector<Tensor> negs;
    negs.reserve(B - 1);
    for (std::size_t j = 0; j < B; ++j) {
      if (j != k) negs.push_back(means[j]);
    }
    LossBreakdown lb =
        total_loss(outs[k].tl, outs[k].hd, outs[k].taps.s, outs[k].taps.vid_refined,
                   targets_for(data[batch_idx[k]]), negs, w);
    acc = k == 0 ? lb.total : ops::add(acc, lb.total);
    out.l_f += lb.l_f.item();
    out.l_reg += lb.l_reg.item();
    out.l_inter += lb.l_inter.item();
    out.l_intra += lb.l_intra.item();
    if (lb.tl_skipped) ++out.tl_skipped;
  }
  out.total = ops::scale(acc, real(1) / real(B));
  out.l_f /= double(B);
  out.l_reg /= double(B);
  out.l_inter /= double(B);
  out.l_intra /= double(B);
  return out;
}

// ===== checkpoints =====

namespace {

constexpr std::uint16_t kCheckpointVersion = 2;

void expect(bool ok, const std::string& msg) {
  if (!ok) throw FormatError(msg);
}

}  // namespace

void save_checkpoint(const fs::path& path, Model& model, const Adam& adam,
                     const TrainState& state) {
  const ParamList& params = model.params();
  const auto& slots = adam.slots();
  if (slots.size() != params.size()) throw FormatError("optimizer/model parameter mismatch");

  ByteWriter w;
  w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("MLVG"), 4));
  w.u16(kCheckpointVersion);
  w.u8(0);  // container, not a standalone frozen block
  w.u32(std::uint32_t(model.config().d_llm));
  w.u32(0);
  w.str(run_config_to_json(model.config()));
  w.u64(model.refiner().frozen().checksum());
  w.u64(adam.step_count());
  w.u64(state.epoch);
  w.u64(state.global_step);

  w.u32(std::uint32_t(params.size()));
  for (const Parameter* p : params) {
    if (p->name.size() > 0xffff) throw FormatError("parameter name too long");
    w.u16(std::uint16_t(p->name.size()));
    w.bytes(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(p->name.data()), p->name.size()));
    std::uint8_t flags = 0;
    if (!p->frozen()) flags |= 1;
    flags |= 2;  // float64 payload
    w.u8(flags);
    w.u8(std::uint8_t(p->tensor.rank()));
    for (std::size_t e : p->tensor.shape()) w.u32(std::uint32_t(e));
    for (real v : p->tensor.data()) w.f64(double(v));
  }
  for (const auto& s : slots) {
    for (real v : s.m) w.f64(double(v));
    for (real v : s.v) w.f64(double(v));
  }
  w.u64(fnv1a64(w.buffer()));
  write_file_atomic(path, w.buffer());
}

RunConfig read_checkpoint_config(const fs::path& path) {
  std::vector<std::uint8_t> raw = read_file(path);
  expect(raw.size() >= 8, path.string() + ": truncated checkpoint");
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= std::uint64_t(raw[raw.size() - 8 + i]) << (8 * i);
  }
  expect(fnv1a64(std::span(raw.data(), raw.size() - 8)) == stored,
         path.string() + ": checksum mismatch");
  ByteReader r(raw);
  auto magic = r.bytes(4);
  expect(magic[0] == 'M' && magic[1] == 'L' && magic[2] == 'V' && magic[3] == 'G',
         path.string() + ": bad magic at offset 0");
  std::uint16_t version = r.u16();
  expect(version == kCheckpointVersion,
         path.string() + ": not a checkpoint (version " + std::to_string(version) + ")");
  r.u8();
  r.u32();
  r.u32();
  return run_config_from_json(r.str());
}

TrainState load_checkpoint(const fs::path& path, Model& model, Adam& adam) {
  std::vector<std::uint8_t> raw = read_file(path);
  expect(raw.size() >= 8, path.string() + ": truncated checkpoint");
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= std::uint64_t(raw[raw.size() - 8 + i]) << (8 * i);
  }
  expect(fnv1a64(std::span(raw.data(), raw.size() - 8)) == stored,
         path.string() + ": checksum mismatch");

  ByteReader r(raw);
  auto magic = r.bytes(4);
  expect(magic[0] == 'M' && magic[1] == 'L' && magic[2] == 'V' && magic[3] == 'G',
         path.string() + ": bad magic at offset 0");
  std::uint16_t version = r.u16();
  expect(version == kCheckpointVersion,
         path.string() + ": unsupported checkpoint version " + std::to_string(version));
  r.u8();
  std::uint32_t d_llm = r.u32();
  r.u32();
  r.str();  // config snapshot, consumed by read_checkpoint_config
  std::uint64_t frozen_checksum = r.u64();
  std::uint64_t adam_t = r.u64();
  TrainState state;
  state.epoch = r.u64();
  state.global_step = r.u64();

  expect(d_llm == model.config().d_llm,
         path.string() + ": d_llm " + std::to_string(d_llm) + " != model d_llm " +
             std::to_string(model.config().d_llm));

  const ParamList& params = model.params();
  std::uint32_t n = r.u32();
  expect(n == params.size(), path.string() + ": checkpoint has " + std::to_string(n) +
                                 " parameters, model has " + std::to_string(params.size()));
  for (Parameter* p : params) {
    std::uint16_t name_len = r.u16();
    auto name_bytes = r.bytes(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    expect(name == p->name,
           path.string() + ": parameter order mismatch: '" + name + "' vs '" + p->name + "'");
    std::uint8_t flags = r.u8();
    expect((flags & 1) == (p->frozen() ? 0 : 1),
           path.string() + ": trainable flag mismatch on '" + name + "'");
    bool wide = flags & 2;
    std::uint8_t rank = r.u8();
    expect(rank == p->tensor.rank(), path.string() + ": rank mismatch on '" + name + "'");
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) shape[i] = r.u32();
    expect(shape == p->tensor.shape(), path.string() + ": shape mismatch on '" + name + "'");
    auto dst = p->tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = wide ? real(r.f64()) : real(r.f32());
    }
  }

  std::vector<Adam::Slot> slots(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::size_t sz = params[k]->tensor.numel();
    slots[k].m.resize(sz);
    slots[k].v.resize(sz);
    for (std::size_t i = 0; i < sz; ++i) slots[k].m[i] = real(r.f64());
    for (std::size_t i = 0; i < sz; ++i) slots[k].v[i] = real(r.f64());
  }
  expect(r.remaining() == 8,
         path.string() + ": trailing bytes at offset " + std::to_string(r.offset()));
  adam.load_state(adam_t, std::move(slots));

  expect(model.refiner().frozen().checksum() == frozen_checksum,
         path.string() + ": frozen block checksum does not match the model's block");
  expect(model.refiner().frozen().verify_frozen(),
         path.string() + ": frozen weights in checkpoint fail verification");
  return state;
}

// ===== training =====

TrainResult train(Model& model, const std::vector<GroundingSample>& data,
                  const TrainOptions& opts) {
  if (data.empty()) throw DimensionError("train: empty dataset");
  fs::create_directories(opts.out_dir);
  const RunConfig& cfg = model.config();
  Adam adam(model.params(), real(cfg.lr));

  TrainState st;
  bool resumed = !opts.resume.empty();
  if (resumed) st = load_checkpoint(opts.resume, model, adam);

  TrainResult result;
  result.checkpoint = opts.out_dir / "checkpoint.mlvg";
  result.log_csv = opts.out_dir / "train_log.csv";

  bool fresh_log =
      !resumed || !fs::exists(result.log_csv) || fs::file_size(result.log_csv) == 0;
  std::ofstream log(result.log_csv, resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw FormatError("cannot open " + result.log_csv.string());
  if (fresh_log) log << "step,total,l_f,l_reg,l_inter,l_intra\n";
  log << std::setprecision(17);

  save_checkpoint(result.checkpoint, model, adam, st);
  if (st.epoch >= cfg.epochs) return result;

  Rng base(cfg.seed);
  std::size_t n = data.size();
  for (std::size_t epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng sh = base.fork(0xE000 + epoch);
    for (std::size_t i = n; i-- > 1;) {
      std::size_t j = std::size_t(sh.uniform_int(0, std::int64_t(i)));
      std::swap(order[i], order[j]);
    }

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<std::size_t> batch(order.begin() + std::ptrdiff_t(start),
                                     order.begin() + std::ptrdiff_t(end));
      Rng dr = base.fork(0xD0000000ull + st.global_step);
      Rng* drp = cfg.dropout > 0 ? &dr : nullptr;
      BatchLoss bl = batch_loss(model, data, batch, drp);
      double tv = bl.total.item();
      if (!std::isfinite(tv)) {
        result.nan_abort = true;
        return result;
      }
      adam.zero_grad();
      bl.total.backward();
      adam.step();
      ++st.global_step;
      if (result.steps == 0) result.first_loss = tv;
      result.last_loss = tv;
      ++result.steps;
      log << st.global_step << ',' << tv << ',' << bl.l_f << ',' << bl.l_reg << ','
          << bl.l_inter << ',' << bl.l_intra << '\n';
    }

    if (!model.refiner().frozen().verify_frozen()) {
      throw NumericError("frozen block weights changed during epoch " + std::to_string(epoch));
    }
    st.epoch = epoch + 1;
    save_checkpoint(result.checkpoint, model, adam, st);
    log.flush();
  }
  return result;
}

// ===== evaluation =====

EvalReport evaluate(Model& model, const std::vector<GroundingSample>& data) {
  NoGradGuard ng;
  const RunConfig& cfg = model.config();
  EvalReport rep;
  rep.records.reserve(data.size());
  for (const auto& sample : data) {
    ModelOut out = model.forward(sample, nullptr);
    EvalRecord rec;
    rec.query_id = sample.sample_id;
    rec.predictions = decode_spans(out.tl, cfg.top_k, cfg.nms_iou);
    rec.gt_spans = sample.gt_spans;
    rec.gt_saliency = sample.gt_saliency;
    auto sal = out.hd.saliency.data();
    rec.pred_saliency.assign(sal.begin(), sal.end());
    rep.records.push_back(std::move(rec));
  }
  rep.r1_050 = recall_at_1(rep.records, 0.5);
  rep.r1_070 = recall_at_1(rep.records, 0.7);
  MapReport mr = mean_ap(rep.records, default_tau_grid());
  rep.map_050 = mr.ap[0];
  rep.map_075 = mr.ap[5];
  rep.map_avg = mr.avg;
  rep.miou = mean_iou(rep.records);
  rep.hd_map = hd_map(rep.records);
  rep.hit1 = hit_at_1(rep.records);
  rep.top5 = top5_map(rep.records);
  return rep;
}

std::string eval_report_json(const EvalReport& rep) {
  json j = {{"r1@0.5", rep.r1_050}, {"r1@0.7", rep.r1_070}, {"map@0.5", rep.map_050},
            {"map@0.75", rep.map_075}, {"map_avg", rep.map_avg}, {"miou", rep.miou},
            {"hd_map", rep.hd_map}, {"hit@1", rep.hit1}, {"top5_map", rep.top5}};
  return j.dump(2) + "\n";
}

// ===== inspection =====

InspectOut inspect(Model& model, const GroundingSample& sample) {
  NoGradGuard ng;
  ModelOut out = model.forward(sample, nullptr);
  std::size_t L = out.taps.z_refine.shape()[0];
  std::size_t b = out.taps.boundary;
  InspectOut r;
  r.proj = ops::cosine_sim_matrix(out.taps.q_proj, out.taps.v_proj);
  r.aligned = ops::cosine_sim_matrix(ops::slice_rows(out.taps.z_align, 0, b),
                                     ops::slice_rows(out.taps.z_align, b, L));
  r.refined = ops::cosine_sim_matrix(ops::slice_rows(out.taps.z_refine, 0, b),
                                     ops::slice_rows(out.taps.z_refine, b, L));
  return r;
}

std::string matrix_csv(const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("matrix_csv expects rank 2");
  std::ostringstream os;
  os << std::setprecision(17);
  auto d = m.data();
  std::size_t rows = m.shape()[0], cols = m.shape()[1];
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) os << ',';
      os << d[i * cols + j];
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mlvtg
