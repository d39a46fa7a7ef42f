#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mlvtg/metrics.hpp"
#include "mlvtg/tensor.hpp"

namespace mlvtg {

struct GroundingSample {
  std::string sample_id;
  Tensor video_features;  // [L_v, D_in_v]
  Tensor query_features;  // [L_q, D_in_q]
  std::vector<Span> gt_spans;    // normalized to [0,1]
  std::vector<int> gt_saliency;  // one 0-4 label per clip
  double duration_s = 0;
  double clip_len_s = 0;
};

struct SynthSpec {
  std::size_t n_samples = 32;
  std::size_t l_v_min = 24, l_v_max = 48;
  std::size_t l_q_min = 4, l_q_max = 10;
  std::size_t d_in_video = 32, d_in_query = 24;
  double signal_strength = 1.0;
  double clip_len_s = 2.0;
  std::uint64_t seed = 0;
};

// Seed-deterministic synthetic grounding data. Each sample draws a latent
// concept; clips inside the ground-truth spans mix the concept's video
// direction into their (unit-normalized) features at signal_strength, clips
// outside are pure noise, and query tokens carry the concept's text
// direction. Saliency labels are 3-4 inside spans, 0-1 outside.
std::vector<GroundingSample> generate_synthetic(const SynthSpec& spec);

// Binary feature container: magic MLVF, version u16, rank u8, one u32 extent
// per axis, then float32 little-endian payload.
void write_feature_file(const std::string& path, const Tensor& t);
Tensor read_feature_file(const std::string& path);

// One JSON object per line; spans are [start_s, end_s] in seconds.
struct AnnotationRecord {
  std::string sample_id;
  double duration = 0;
  double clip_len = 0;
  std::vector<std::array<double, 2>> spans;
  std::vector<int> saliency;
  std::string video_feat;
  std::string query_feat;
};

void write_annotations(const std::string& path, const std::vector<AnnotationRecord>& recs);
std::vector<AnnotationRecord> read_annotations(const std::string& path);

// Dataset directory layout: annotations.jsonl plus the feature files it
// references (relative paths). Spans convert seconds <-> normalized at the
// boundary.
void save_dataset(const std::string& dir, const std::vector<GroundingSample>& samples);
std::vector<GroundingSample> load_dataset(const std::string& dir);

struct RunConfig {
  std::size_t d = 16;
  std::size_t d_inner = 32;
  std::size_t k_blocks = 2;
  std::size_t d_llm = 64;
  std::size_t n_state = 8;
  std::size_t conv_width = 3;
  std::size_t max_len = 512;
  std::size_t d_in_video = 32;
  std::size_t d_in_query = 24;
  double lambda_f = 4, lambda_reg = 1, lambda_inter = 1, lambda_intra = 1;
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  std::string gate = "silu";  // or "sigmoid"
  bool refiner_residual = true;
  double fps = 0.5;
  double dropout = 0.1;
  bool use_aligner = true;
  bool use_refiner = true;
  std::string frozen_arch = "linear_residual";  // or "mamba_block"
  std::string frozen_path;  // load this block instead of building a surrogate
  double nms_iou = 0.7;
  std::size_t top_k = 10;
};

void validate_run_config(const RunConfig& cfg);
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
void save_run_config(const std::string& path, const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

}  // namespace mlvtg
