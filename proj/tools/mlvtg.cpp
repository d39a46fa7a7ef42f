#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlvtg/bench.hpp"
#include "mlvtg/data.hpp"
#include "mlvtg/error.hpp"
#include "mlvtg/pipeline.hpp"
#include "mlvtg/serialize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mlvtg;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Every command lists what it produced, with sizes and content hashes.
void write_manifest(const fs::path& out_dir, const std::vector<fs::path>& files) {
  json entries = json::array();
  for (const auto& f : files) {
    auto raw = read_file(f);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(raw)));
    entries.push_back({{"path", fs::relative(f, out_dir).generic_string()},
                       {"bytes", raw.size()},
                       {"fnv1a64", hex}});
  }
  json j = {{"files", entries}};
  write_text(out_dir / "manifest.json", j.dump(2) + "\n");
}

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration file");
  cmd->add_option("--seed", f.seed, "Seed override");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config_path.empty()) cfg = load_run_config(f.config_path);
  if (f.seed) cfg.seed = *f.seed;
  return cfg;
}

int cmd_gen_data(const CommonFlags& common, const std::string& out_dir,
                 std::optional<std::size_t> n_samples, std::optional<double> signal,
                 std::optional<std::size_t> lv_min, std::optional<std::size_t> lv_max) {
  RunConfig cfg = resolve_config(common);
  SynthSpec spec;
  spec.seed = cfg.seed;
  spec.d_in_video = cfg.d_in_video;
  spec.d_in_query = cfg.d_in_query;
  spec.clip_len_s = 1.0 / cfg.fps;
  if (n_samples) spec.n_samples = *n_samples;
  if (signal) spec.signal_strength = *signal;
  if (lv_min) spec.l_v_min = *lv_min;
  if (lv_max) spec.l_v_max = *lv_max;

  auto samples = generate_synthetic(spec);
  save_dataset(out_dir, samples);

  std::vector<fs::path> files;
  files.push_back(fs::path(out_dir) / "annotations.jsonl");
  for (const auto& s : samples) {
    files.push_back(fs::path(out_dir) / "features" / (s.sample_id + ".video.mlvf"));
    files.push_back(fs::path(out_dir) / "features" / (s.sample_id + ".query.mlvf"));
  }
  write_manifest(out_dir, files);
  std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_make_surrogate(const CommonFlags& common, const std::string& out_dir,
                       const std::string& arch, std::optional<std::size_t> d_llm,
                       std::uint32_t layer_index) {
  RunConfig cfg = resolve_config(common);
  if (arch != "linear_residual" && arch != "mamba_block") {
    std::cerr << "error: --arch must be linear_residual or mamba_block\n";
    return kExitUsage;
  }
  FrozenArch a = arch == "mamba_block" ? FrozenArch::mamba_block : FrozenArch::linear_residual;
  std::size_t width = d_llm ? *d_llm : cfg.d_llm;
  FrozenBlock block =
      FrozenBlock::make_surrogate(a, width, cfg.n_state, layer_index, cfg.seed);
  fs::create_directories(out_dir);
  fs::path path = fs::path(out_dir) / ("frozen_" + arch + ".mlvg");
  save_frozen_block(path, block);
  write_manifest(out_dir, {path});
  std::cout << "wrote " << path.string() << " (checksum " << std::hex << block.checksum()
            << std::dec << ")\n";
  return 0;
}

int cmd_train(const CommonFlags& common, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume,
              std::optional<std::size_t> epochs, std::optional<std::size_t> batch_size,
              std::optional<double> lr, bool no_aligner, bool no_refiner,
              const std::string& frozen) {
  RunConfig cfg;
  if (!resume.empty() && common.config_path.empty()) {
    cfg = read_checkpoint_config(resume);
  } else {
    cfg = resolve_config(common);
  }
  if (common.seed) cfg.seed = *common.seed;
  if (epochs) cfg.epochs = *epochs;
  if (batch_size) cfg.batch_size = *batch_size;
  if (lr) cfg.lr = *lr;
  if (no_aligner) cfg.use_aligner = false;
  if (no_refiner) cfg.use_refiner = false;
  if (!frozen.empty()) cfg.frozen_path = frozen;
  validate_run_config(cfg);

  auto data = load_dataset(data_dir);
  Model model(cfg, build_frozen_block(cfg));
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.resume = resume;
  TrainResult res = train(model, data, opts);

  write_manifest(out_dir, {res.checkpoint, res.log_csv});
  if (res.nan_abort) {
    std::cerr << "error: non-finite loss at step " << res.steps
              << "; last epoch checkpoint retained\n";
    return kExitNumeric;
  }
  std::cout << "trained " << res.steps << " steps";
  if (res.steps > 0) {
    std::cout << ", loss " << res.first_loss << " -> " << res.last_loss;
  }
  std::cout << "; checkpoint at " << res.checkpoint.string() << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& common, const std::string& checkpoint,
             const std::string& data_dir, const std::string& out_dir,
             std::optional<double> nms_iou, std::optional<std::size_t> top_k) {
  RunConfig cfg = read_checkpoint_config(checkpoint);
  if (!common.config_path.empty()) {
    RunConfig file_cfg = load_run_config(common.config_path);
    cfg.nms_iou = file_cfg.nms_iou;
    cfg.top_k = file_cfg.top_k;
  }
  if (common.seed) cfg.seed = *common.seed;
  if (nms_iou) cfg.nms_iou = *nms_iou;
  if (top_k) cfg.top_k = *top_k;
  validate_run_config(cfg);

  Model model(cfg, build_frozen_block(cfg));
  Adam adam(model.params(), real(cfg.lr));
  load_checkpoint(checkpoint, model, adam);

  auto data = load_dataset(data_dir);
  EvalReport rep = evaluate(model, data);
  fs::create_directories(out_dir);
  fs::path report = fs::path(out_dir) / "report.json";
  write_text(report, eval_report_json(rep));
  write_manifest(out_dir, {report});
  std::cout << eval_report_json(rep);
  return 0;
}

int cmd_bench(const CommonFlags& common, const std::string& out_dir,
              std::vector<std::size_t> lengths, std::size_t repeats, std::size_t warmup,
              std::size_t d) {
  RunConfig cfg = resolve_config(common);
  if (lengths.empty()) lengths = default_bench_lengths();
  BenchReport rep = run_bench(lengths, repeats, warmup, d, cfg.seed);
  fs::create_directories(out_dir);
  fs::path csv = fs::path(out_dir) / "bench.csv";
  fs::path summary = fs::path(out_dir) / "bench_summary.json";
  write_text(csv, bench_csv(rep));
  write_text(summary, bench_json(rep));
  write_manifest(out_dir, {csv, summary});
  std::cout << bench_csv(rep);
  std::cout << "time slopes: attention " << rep.attention_time_slope << ", aligner "
            << rep.aligner_time_slope << "\n";
  return 0;
}

int cmd_inspect(const CommonFlags& common, const std::string& checkpoint,
                const std::string& data_dir, const std::string& sample_id,
                const std::string& out_dir) {
  RunConfig cfg = read_checkpoint_config(checkpoint);
  if (common.seed) cfg.seed = *common.seed;

  Model model(cfg, build_frozen_block(cfg));
  Adam adam(model.params(), real(cfg.lr));
  load_checkpoint(checkpoint, model, adam);

  auto data = load_dataset(data_dir);
  const GroundingSample* sample = nullptr;
  for (const auto& s : data) {
    if (s.sample_id == sample_id) {
      sample = &s;
      break;
    }
  }
  if (!sample) throw FormatError("sample '" + sample_id + "' not found in " + data_dir);

  InspectOut out = inspect(model, *sample);
  fs::create_directories(out_dir);
  fs::path p1 = fs::path(out_dir) / "similarity_proj.csv";
  fs::path p2 = fs::path(out_dir) / "similarity_aligner.csv";
  fs::path p3 = fs::path(out_dir) / "similarity_refiner.csv";
  write_text(p1, matrix_csv(out.proj));
  write_text(p2, matrix_csv(out.aligned));
  write_text(p3, matrix_csv(out.refined));
  write_manifest(out_dir, {p1, p2, p3});
  std::cout << "wrote similarity matrices for " << sample_id << " ("
            << out.proj.shape()[0] << "x" << out.proj.shape()[1] << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MLVTG: video temporal grounding with bidirectional state-space alignment"};
  app.require_subcommand(1);

  CommonFlags gen_common;
  std::string gen_out;
  std::optional<std::size_t> gen_n, gen_lv_min, gen_lv_max;
  std::optional<double> gen_signal;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic grounding dataset");
  add_common(gen, gen_common);
  gen->add_option("--out-dir", gen_out, "Output directory")->required();
  gen->add_option("--n-samples", gen_n, "Number of samples (default 32)");
  gen->add_option("--signal", gen_signal, "Concept signal strength (default 1.0)");
  gen->add_option("--lv-min", gen_lv_min, "Minimum clips per video");
  gen->add_option("--lv-max", gen_lv_max, "Maximum clips per video");

  CommonFlags sur_common;
  std::string sur_out, sur_arch = "linear_residual";
  std::optional<std::size_t> sur_d_llm;
  std::uint32_t sur_layer = 0;
  auto* sur = app.add_subcommand("make-surrogate", "Create a frozen surrogate block file");
  add_common(sur, sur_common);
  sur->add_option("--out-dir", sur_out, "Output directory")->required();
  sur->add_option("--arch", sur_arch, "linear_residual or mamba_block");
  sur->add_option("--d-llm", sur_d_llm, "Frozen block width");
  sur->add_option("--layer-index", sur_layer, "Source layer index label");

  CommonFlags tr_common;
  std::string tr_data, tr_out, tr_resume, tr_frozen;
  std::optional<std::size_t> tr_epochs, tr_batch;
  std::optional<double> tr_lr;
  bool tr_no_aligner = false, tr_no_refiner = false;
  auto* tr = app.add_subcommand("train", "Train the grounding model");
  add_common(tr, tr_common);
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out-dir", tr_out, "Output directory")->required();
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  tr->add_option("--epochs", tr_epochs, "Epoch count override");
  tr->add_option("--batch-size", tr_batch, "Batch size override");
  tr->add_option("--lr", tr_lr, "Learning rate override");
  tr->add_flag("--no-aligner", tr_no_aligner, "Ablation: bypass the aligner stack");
  tr->add_flag("--no-refiner", tr_no_refiner, "Ablation: bypass the refiner");
  tr->add_option("--frozen", tr_frozen, "Frozen block file (default: seeded surrogate)");

  CommonFlags ev_common;
  std::string ev_ckpt, ev_data, ev_out;
  std::optional<double> ev_nms;
  std::optional<std::size_t> ev_topk;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, ev_common);
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--out-dir", ev_out, "Output directory")->required();
  ev->add_option("--nms-iou", ev_nms, "NMS IoU threshold override");
  ev->add_option("--top-k", ev_topk, "Prediction count override");

  CommonFlags be_common;
  std::string be_out;
  std::vector<std::size_t> be_lengths;
  std::size_t be_repeats = 9, be_warmup = 3, be_d = 64;
  auto* be = app.add_subcommand("bench", "Compare aligner vs attention scaling");
  add_common(be, be_common);
  be->add_option("--out-dir", be_out, "Output directory")->required();
  be->add_option("--lengths", be_lengths, "Sequence lengths (default 512..8192)");
  be->add_option("--repeats", be_repeats, "Timing repeats (>= 5)");
  be->add_option("--warmup", be_warmup, "Warmup passes (>= 1)");
  be->add_option("--d", be_d, "Model width (default 64)");

  CommonFlags in_common;
  std::string in_ckpt, in_data, in_sample, in_out;
  auto* in = app.add_subcommand("inspect", "Dump query-video similarity matrices");
  add_common(in, in_common);
  in->add_option("--checkpoint", in_ckpt, "Checkpoint file")->required();
  in->add_option("--data", in_data, "Dataset directory")->required();
  in->add_option("--sample", in_sample, "Sample id")->required();
  in->add_option("--out-dir", in_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_common, gen_out, gen_n, gen_signal, gen_lv_min, gen_lv_max);
    }
    if (sur->parsed()) {
      return cmd_make_surrogate(sur_common, sur_out, sur_arch, sur_d_llm, sur_layer);
    }
    if (tr->parsed()) {
      return cmd_train(tr_common, tr_data, tr_out, tr_resume, tr_epochs, tr_batch, tr_lr,
                       tr_no_aligner, tr_no_refiner, tr_frozen);
    }
    if (ev->parsed()) {
      return cmd_eval(ev_common, ev_ckpt, ev_data, ev_out, ev_nms, ev_topk);
    }
    if (be->parsed()) {
      return cmd_bench(be_common, be_out, be_lengths, be_repeats, be_warmup, be_d);
    }
    if (in->parsed()) {
      return cmd_inspect(in_common, in_ckpt, in_data, in_sample, in_out);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const OracleError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ModeError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
