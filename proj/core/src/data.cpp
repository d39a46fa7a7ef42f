#include "mlvtg/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mlvtg/error.hpp"
#include "mlvtg/rng.hpp"
#include "mlvtg/serialize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mlvtg {

namespace {

constexpr std::size_t kConceptDim = 8;

void normalize_inplace(std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  if (s > 0) {
    for (double& x : v) x /= s;
  }
}

}  // namespace

std::vector<GroundingSample> generate_synthetic(const SynthSpec& spec) {
  if (spec.l_v_min < 4 || spec.l_v_max < spec.l_v_min || spec.l_q_max < spec.l_q_min ||
      spec.l_q_min < 1) {
    throw DimensionError("synthetic spec: bad length ranges");
  }
  Rng root(spec.seed);
  Rng proj = root.fork(1);

  std::size_t dv = spec.d_in_video, dq = spec.d_in_query;
  std::vector<double> g_v(kConceptDim * dv), g_q(kConceptDim * dq);
  double cscale = 1.0 / std::sqrt(double(kConceptDim));
  for (double& x : g_v) x = proj.normal() * cscale;
  for (double& x : g_q) x = proj.normal() * cscale;

  std::vector<GroundingSample> out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    Rng sr = root.fork(100 + i);
    std::size_t lv = std::size_t(sr.uniform_int(std::int64_t(spec.l_v_min),
                                                std::int64_t(spec.l_v_max)));
    std::size_t lq = std::size_t(sr.uniform_int(std::int64_t(spec.l_q_min),
                                                std::int64_t(spec.l_q_max)));

    std::vector<double> w(kConceptDim);
    for (double& x : w) x = sr.normal();
    normalize_inplace(w);
    std::vector<double> u_v(dv, 0.0), u_q(dq, 0.0);
    for (std::size_t c = 0; c < kConceptDim; ++c) {
      for (std::size_t j = 0; j < dv; ++j) u_v[j] += w[c] * g_v[c * dv + j];
      for (std::size_t j = 0; j < dq; ++j) u_q[j] += w[c] * g_q[c * dq + j];
    }
    normalize_inplace(u_v);
    normalize_inplace(u_q);

    std::size_t n_spans = (lv >= 12 && sr.uniform() < 0.3) ? 2 : 1;
    std::vector<Span> spans;
    std::vector<char> inside(lv, 0);
    for (std::size_t k = 0; k < n_spans; ++k) {
      std::size_t region_lo = k * lv / n_spans;
      std::size_t region_hi = (k + 1) * lv / n_spans;
      std::size_t region = region_hi - region_lo;
      std::size_t max_len = std::max<std::size_t>(2, region / 2);
      std::size_t len = std::size_t(sr.uniform_int(2, std::int64_t(max_len)));
      std::size_t st = region_lo + std::size_t(sr.uniform_int(0, std::int64_t(region - len)));
      spans.push_back({double(st) / double(lv), double(st + len) / double(lv)});
      for (std::size_t c = st; c < st + len; ++c) inside[c] = 1;
    }

    std::vector<int> saliency(lv);
    for (std::size_t c = 0; c < lv; ++c) {
      saliency[c] = inside[c] ? (sr.uniform() < 0.5 ? 3 : 4) : (sr.uniform() < 0.5 ? 0 : 1);
    }

    std::vector<real> vf(lv * dv);
    std::vector<double> row(dv);
    for (std::size_t c = 0; c < lv; ++c) {
      for (std::size_t j = 0; j < dv; ++j) row[j] = 0.3 * sr.normal();
      if (inside[c]) {
        for (std::size_t j = 0; j < dv; ++j) row[j] += spec.signal_strength * u_v[j];
      }
      normalize_inplace(row);
      for (std::size_t j = 0; j < dv; ++j) vf[c * dv + j] = real(row[j]);
    }

    std::vector<real> qf(lq * dq);
    for (std::size_t t = 0; t < lq; ++t) {
      for (std::size_t j = 0; j < dq; ++j) qf[t * dq + j] = real(u_q[j] + 0.3 * sr.normal());
    }

    GroundingSample s;
    std::string idx = std::to_string(i);
    if (idx.size() < 4) idx.insert(0, 4 - idx.size(), '0');
    s.sample_id = "synth-" + idx;
    s.video_features = Tensor::from({lv, dv}, std::move(vf));
    s.query_features = Tensor::from({lq, dq}, std::move(qf));
    s.gt_spans = std::move(spans);
    s.gt_saliency = std::move(saliency);
    s.clip_len_s = spec.clip_len_s;
    s.duration_s = double(lv) * spec.clip_len_s;
    out.push_back(std::move(s));
  }
  return out;
}

// ===== feature files =====

void write_feature_file(const std::string& path, const Tensor& t) {
  ByteWriter w;
  w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("MLVF"), 4));
  w.u16(1);
  if (t.rank() > 255) throw DimensionError("feature tensor rank exceeds format limit");
  w.u8(std::uint8_t(t.rank()));
  for (std::size_t e : t.shape()) w.u32(std::uint32_t(e));
  for (real v : t.data()) w.f32(float(v));
  write_file_atomic(path, w.buffer());
}

Tensor read_feature_file(const std::string& path) {
  std::vector<std::uint8_t> raw = read_file(path);
  ByteReader r(raw);
  auto magic = r.bytes(4);
  if (!(magic[0] == 'M' && magic[1] == 'L' && magic[2] == 'V' && magic[3] == 'F')) {
    throw FormatError(path + ": bad magic at offset 0");
  }
  std::uint16_t version = r.u16();
  if (version != 1) {
    throw FormatError(path + ": unsupported version " + std::to_string(version) +
                      " at offset 4");
  }
  std::size_t rank = r.u8();
  Shape shape(rank);
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = r.u32();
    n *= shape[i];
  }
  std::vector<real> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = real(r.f32());
  if (!r.at_end()) {
    throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
  }
  return Tensor::from(shape, std::move(data));
}

// ===== annotations =====

namespace {

json require_key(const json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw FormatError("annotations line " + std::to_string(line_no) + ": missing key '" +
                      key + "'");
  }
  return *it;
}

}  // namespace

void write_annotations(const std::string& path, const std::vector<AnnotationRecord>& recs) {
  std::ostringstream os;
  for (const auto& r : recs) {
    json spans = json::array();
    for (const auto& s : r.spans) spans.push_back({s[0], s[1]});
    json obj = {{"sample_id", r.sample_id}, {"duration", r.duration},
                {"clip_len", r.clip_len},   {"spans", spans},
                {"saliency", r.saliency},   {"video_feat", r.video_feat},
                {"query_feat", r.query_feat}};
    os << obj.dump() << "\n";
  }
  std::string text = os.str();
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<AnnotationRecord> read_annotations(const std::string& path) {
  std::vector<std::uint8_t> raw = read_file(path);
  std::istringstream is(std::string(raw.begin(), raw.end()));
  std::vector<AnnotationRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("annotations line " + std::to_string(line_no) + ": " + e.what());
    }
    AnnotationRecord r;
    try {
      r.sample_id = require_key(obj, "sample_id", line_no).get<std::string>();
      r.duration = require_key(obj, "duration", line_no).get<double>();
      r.clip_len = require_key(obj, "clip_len", line_no).get<double>();
      for (const auto& s : require_key(obj, "spans", line_no)) {
        if (!s.is_array() || s.size() != 2) {
          throw FormatError("annotations line " + std::to_string(line_no) +
                            ": span must be [st, ed]");
        }
        r.spans.push_back({s[0].get<double>(), s[1].get<double>()});
      }
      r.saliency = require_key(obj, "saliency", line_no).get<std::vector<int>>();
      r.video_feat = require_key(obj, "video_feat", line_no).get<std::string>();
      r.query_feat = require_key(obj, "query_feat", line_no).get<std::string>();
    } catch (const json::exception& e) {
      throw FormatError("annotations line " + std::to_string(line_no) + ": " + e.what());
    }
    if (r.duration <= 0) {
      throw FormatError("annotations line " + std::to_string(line_no) +
                        ": duration must be positive");
    }
    for (const auto& s : r.spans) {
      if (s[1] <= s[0]) {
        throw FormatError("annotations line " + std::to_string(line_no) +
                          ": span end must exceed start");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ===== dataset directories =====

void save_dataset(const std::string& dir, const std::vector<GroundingSample>& samples) {
  fs::create_directories(fs::path(dir) / "features");
  std::vector<AnnotationRecord> recs;
  recs.reserve(samples.size());
  for (const auto& s : samples) {
    AnnotationRecord r;
    r.sample_id = s.sample_id;
    r.duration = s.duration_s;
    r.clip_len = s.clip_len_s;
    for (const auto& sp : s.gt_spans) {
      r.spans.push_back({sp.st * s.duration_s, sp.ed * s.duration_s});
    }
    r.saliency = s.gt_saliency;
    r.video_feat = "features/" + s.sample_id + ".video.mlvf";
    r.query_feat = "features/" + s.sample_id + ".query.mlvf";
    write_feature_file((fs::path(dir) / r.video_feat).string(), s.video_features);
    write_feature_file((fs::path(dir) / r.query_feat).string(), s.query_features);
    recs.push_back(std::move(r));
  }
  write_annotations((fs::path(dir) / "annotations.jsonl").string(), recs);
}

std::vector<GroundingSample> load_dataset(const std::string& dir) {
  auto recs = read_annotations((fs::path(dir) / "annotations.jsonl").string());
  std::vector<GroundingSample> out;
  out.reserve(recs.size());
  for (const auto& r : recs) {
    GroundingSample s;
    s.sample_id = r.sample_id;
    s.duration_s = r.duration;
    s.clip_len_s = r.clip_len;
    s.video_features = read_feature_file((fs::path(dir) / r.video_feat).string());
    s.query_features = read_feature_file((fs::path(dir) / r.query_feat).string());
    if (s.video_features.rank() != 2 || s.query_features.rank() != 2) {
      throw FormatError(r.sample_id + ": feature tensors must be rank 2");
    }
    for (const auto& sp : r.spans) {
      Span n{sp[0] / r.duration, sp[1] / r.duration};
      if (n.st < 0 || n.ed > 1 + 1e-9) {
        throw FormatError(r.sample_id + ": span outside video duration");
      }
      n.ed = std::min(n.ed, 1.0);
      s.gt_spans.push_back(n);
    }
    if (r.saliency.size() != s.video_features.shape()[0]) {
      throw FormatError(r.sample_id + ": saliency length != clip count");
    }
    s.gt_saliency = r.saliency;
    out.push_back(std::move(s));
  }
  return out;
}

// ===== run config =====

void validate_run_config(const RunConfig& cfg) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw FormatError(std::string("config: ") + name + " must be positive");
  };
  positive(cfg.d, "d");
  positive(cfg.d_inner, "d_inner");
  positive(cfg.k_blocks, "k_blocks");
  positive(cfg.d_llm, "d_llm");
  positive(cfg.n_state, "n_state");
  positive(cfg.conv_width, "conv_width");
  positive(cfg.max_len, "max_len");
  positive(cfg.d_in_video, "d_in_video");
  positive(cfg.d_in_query, "d_in_query");
  positive(cfg.batch_size, "batch_size");
  positive(cfg.top_k, "top_k");
  if (cfg.lr <= 0) throw FormatError("config: lr must be positive");
  if (cfg.fps <= 0) throw FormatError("config: fps must be positive");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw FormatError("config: dropout must be in [0,1)");
  if (cfg.gate != "silu" && cfg.gate != "sigmoid") {
    throw FormatError("config: gate must be 'silu' or 'sigmoid'");
  }
  if (cfg.frozen_arch != "linear_residual" && cfg.frozen_arch != "mamba_block") {
    throw FormatError("config: frozen_arch must be 'linear_residual' or 'mamba_block'");
  }
  if (cfg.nms_iou <= 0 || cfg.nms_iou > 1) throw FormatError("config: nms_iou must be in (0,1]");
}

std::string run_config_to_json(const RunConfig& c) {
  json j = {{"d", c.d},
            {"d_inner", c.d_inner},
            {"k_blocks", c.k_blocks},
            {"d_llm", c.d_llm},
            {"n_state", c.n_state},
            {"conv_width", c.conv_width},
            {"max_len", c.max_len},
            {"d_in_video", c.d_in_video},
            {"d_in_query", c.d_in_query},
            {"lambda_f", c.lambda_f},
            {"lambda_reg", c.lambda_reg},
            {"lambda_inter", c.lambda_inter},
            {"lambda_intra", c.lambda_intra},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"gate", c.gate},
            {"refiner_residual", c.refiner_residual},
            {"fps", c.fps},
            {"dropout", c.dropout},
            {"use_aligner", c.use_aligner},
            {"use_refiner", c.use_refiner},
            {"frozen_arch", c.frozen_arch},
            {"frozen_path", c.frozen_path},
            {"nms_iou", c.nms_iou},
            {"top_k", c.top_k}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  RunConfig c;
  try {
    auto take = [&](const char* key, auto& field) {
      auto it = j.find(key);
      if (it != j.end()) field = it->get<std::decay_t<decltype(field)>>();
    };
    take("d", c.d);
    take("d_inner", c.d_inner);
    take("k_blocks", c.k_blocks);
    take("d_llm", c.d_llm);
    take("n_state", c.n_state);
    take("conv_width", c.conv_width);
    take("max_len", c.max_len);
    take("d_in_video", c.d_in_video);
    take("d_in_query", c.d_in_query);
    take("lambda_f", c.lambda_f);
    take("lambda_reg", c.lambda_reg);
    take("lambda_inter", c.lambda_inter);
    take("lambda_intra", c.lambda_intra);
    take("lr", c.lr);
    take("batch_size", c.batch_size);
    take("epochs", c.epochs);
    take("seed", c.seed);
    take("gate", c.gate);
    take("refiner_residual", c.refiner_residual);
    take("fps", c.fps);
    take("dropout", c.dropout);
    take("use_aligner", c.use_aligner);
    take("use_refiner", c.use_refiner);
    take("frozen_arch", c.frozen_arch);
    take("frozen_path", c.frozen_path);
    take("nms_iou", c.nms_iou);
    take("top_k", c.top_k);
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  validate_run_config(c);
  return c;
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::string text = run_config_to_json(cfg);
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

RunConfig load_run_config(const std::string& path) {
  std::vector<std::uint8_t> raw = read_file(path);
  return run_config_from_json(std::string(raw.begin(), raw.end()));
}

}  // namespace mlvtg
