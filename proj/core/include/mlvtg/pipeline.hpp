#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlvtg/aligner.hpp"
#include "mlvtg/data.hpp"
#include "mlvtg/frontend.hpp"
#include "mlvtg/heads.hpp"
#include "mlvtg/metrics.hpp"
#include "mlvtg/optim.hpp"
#include "mlvtg/refiner.hpp"

namespace mlvtg {

struct ModelTaps {
  Tensor v_proj, q_proj, s;
  Tensor z0, z_align, z_refine;
  Tensor vid_refined;  // video rows of z_refine
  std::size_t boundary = 0;
};

struct ModelOut {
  ModelTaps taps;
  TlOutput tl;
  HdOutput hd;
};

// Surrogate from the config seed, or the block at frozen_path when set.
FrozenBlock build_frozen_block(const RunConfig& cfg);

// Frontend -> aligner stack -> refiner -> heads, with the aligner and
// refiner stages individually switchable for ablations (a disabled stage
// passes its input through). Construction draws every weight from the
// config seed, so two models built from equal configs are identical.
class Model {
 public:
  Model(const RunConfig& cfg, FrozenBlock block);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Dropout is active iff dropout_rng is non-null.
  ModelOut forward(const GroundingSample& sample, Rng* dropout_rng = nullptr) const;

  const ParamList& params();
  const RunConfig& config() const { return cfg_; }
  Refiner& refiner() { return refiner_; }
  const Refiner& refiner() const { return refiner_; }

 private:
  RunConfig cfg_;
  Rng rng_;
  Frontend frontend_;
  AlignerStack aligner_;
  Refiner refiner_;
  TlHead tl_;
  HdHead hd_;
  ParamList params_;
};

LossTargets targets_for(const GroundingSample& s);

struct BatchLoss {
  Tensor total;
  double l_f = 0, l_reg = 0, l_inter = 0, l_intra = 0;  // batch means
  std::size_t tl_skipped = 0;
};

// Forwards every sample in the batch, then scores each against the others:
// the InfoNCE negatives for a sample are the other samples' mean refined
// clip features. Returns the mean objective.
BatchLoss batch_loss(Model& model, const std::vector<GroundingSample>& data,
                     const std::vector<std::size_t>& batch_idx, Rng* dropout_root);

struct TrainState {
  std::size_t epoch = 0;        // completed epochs
  std::size_t global_step = 0;  // completed optimizer steps
};

// Checkpoint container, version 2 of the frozen-block format: config
// snapshot, per-section trainable/float64 flags, optimizer slots, and step
// counters, checksummed like version 1.
void save_checkpoint(const std::filesystem::path& path, Model& model, const Adam& adam,
                     const TrainState& state);
RunConfig read_checkpoint_config(const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path, Model& model, Adam& adam);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::filesystem::path resume;  // empty for a fresh run
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log_csv;
  double first_loss = 0;
  double last_loss = 0;
  std::size_t steps = 0;
  bool nan_abort = false;
};

// Shuffled mini-batch training with per-epoch checkpoints and a per-epoch
// frozen-weight verification. Dropout and shuffle streams are derived from
// (seed, epoch, step), so a resumed run replays the interrupted schedule
// exactly. A non-finite loss aborts before the optimizer step, leaving the
// last epoch checkpoint in place.
TrainResult train(Model& model, const std::vector<GroundingSample>& data,
                  const TrainOptions& opts);

struct EvalReport {
  double r1_050 = 0, r1_070 = 0;
  double map_050 = 0, map_075 = 0, map_avg = 0;
  double miou = 0, hd_map = 0, hit1 = 0, top5 = 0;
  std::vector<EvalRecord> records;
};

EvalReport evaluate(Model& model, const std::vector<GroundingSample>& data);
std::string eval_report_json(const EvalReport& rep);

// Query-video cosine-similarity matrices [L_q, L_v] at the three taps.
struct InspectOut {
  Tensor proj;
  Tensor aligned;
  Tensor refined;
};

InspectOut inspect(Model& model, const GroundingSample& sample);
std::string matrix_csv(const Tensor& m);

}  // namespace mlvtg
