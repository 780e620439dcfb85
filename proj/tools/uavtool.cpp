// uavtool: scene generation, dataset bookkeeping, evaluation, and toy
// training in one binary. Exit codes: 0 ok, 1 runtime failure, 2 usage or
// input validation.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "uavkit/datasetio.hpp"
#include "uavkit/errors.hpp"
#include "uavkit/evalkit.hpp"
#include "uavkit/fusionnet.hpp"
#include "uavkit/pipeline.hpp"
#include "uavkit/rng.hpp"
#include "uavkit/scenario.hpp"
#include "uavkit/transferkit.hpp"

namespace fs = std::filesystem;
using namespace uavkit;

namespace {

// Failures while reading or validating inputs exit 2; everything later
// exits 1.
class UsageFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename F>
auto load_phase(F&& f) {
  try {
    return f();
  } catch (const UsageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageFailure(e.what());
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("failed writing: " + path);
}

void parallel_for(std::size_t n, int parallelism, const std::function<void(std::size_t)>& body) {
  if (parallelism < 1) throw ValidationError("--parallel must be >= 1");
  if (parallelism == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(n);
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) break;
      try {
        body(i);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const int threads = std::min<std::size_t>(static_cast<std::size_t>(parallelism), n);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
}

std::string histogram_table(const std::vector<datasetio::SizeBin>& bins) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "%-12s %8s\n", "size bin", "count");
  os << line;
  std::size_t total = 0;
  for (const auto& b : bins) {
    std::snprintf(line, sizeof(line), "%-12s %8zu\n", b.label.c_str(), b.count);
    os << line;
    total += b.count;
  }
  std::snprintf(line, sizeof(line), "%-12s %8zu\n", "total", total);
  os << line;
  return os.str();
}

std::array<double, 3> parse_bins(const std::string& text) {
  std::array<double, 3> edges{};
  std::istringstream ss(text);
  std::string token;
  int i = 0;
  while (std::getline(ss, token, ',')) {
    if (i >= 3) throw ValidationError("--bins expects exactly three ascending edges");
    try {
      edges[i++] = std::stod(token);
    } catch (const std::exception&) {
      throw ValidationError("--bins has a non-numeric edge: " + token);
    }
  }
  if (i != 3 || !(edges[0] > 0.0 && edges[0] < edges[1] && edges[1] < edges[2])) {
    throw ValidationError("--bins expects exactly three ascending edges");
  }
  return edges;
}

std::string frame_id(const scenario::ScenarioConfig& cfg, const scenario::AnnotatedFrame& f) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s_f%05d_c%d", scenario::to_string(cfg.scene).c_str(),
                f.frame_index, f.camera_index);
  return buf;
}

struct GenerateArgs {
  std::string config_path;
  std::string out_dir = "dataset_out";
  std::string assets_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool label_only = false;
  int parallel = 1;
};

int cmd_generate(const GenerateArgs& args) {
  auto cfg = load_phase([&] {
    scenario::ScenarioConfig c = scenario::load_config(args.config_path);
    if (args.seed_set) c.seed = args.seed;
    scenario::validate(c);
    return c;
  });
  auto assets = load_phase([&] {
    std::map<std::pair<int, int>, scenario::SceneAssets> by_size;
    if (args.label_only) return by_size;
    for (const auto& mount : cfg.rig) {
      const auto key = std::make_pair(mount.image_width, mount.image_height);
      if (by_size.count(key) != 0) continue;
      by_size.emplace(key, args.assets_dir.empty()
                               ? scenario::builtin_assets(cfg.scene, cfg.models, mount.image_width,
                                                          mount.image_height)
                               : scenario::load_assets(args.assets_dir, cfg.scene, cfg.models));
    }
    return by_size;
  });

  const std::vector<scenario::AnnotatedFrame> frames = scenario::run_scenario(cfg);
  fs::create_directories(fs::path(args.out_dir) / "labels");
  if (!args.label_only) fs::create_directories(fs::path(args.out_dir) / "images");

  datasetio::DatasetManifest manifest;
  manifest.entries.resize(frames.size());
  parallel_for(frames.size(), args.parallel, [&](std::size_t i) {
    const scenario::AnnotatedFrame& frame = frames[i];
    const std::string id = frame_id(cfg, frame);
    std::string file_name;
    if (!args.label_only) {
      file_name = "images/" + id + ".ppm";
      const auto& scene_assets = assets.at(std::make_pair(frame.image_width, frame.image_height));
      image::write_image((fs::path(args.out_dir) / file_name).string(),
                         scenario::composite_image(frame, scene_assets));
    }
    manifest.entries[i] = datasetio::entry_from_frame(frame, id, file_name);
    write_text_file((fs::path(args.out_dir) / "labels" / (id + ".txt")).string(),
                    datasetio::write_labels_normalized(frame));
  });
  write_text_file((fs::path(args.out_dir) / "manifest.json").string(),
                  datasetio::write_coco_manifest(manifest));
  std::cout << histogram_table(datasetio::size_histogram(manifest));
  std::cout << "wrote " << manifest.entries.size() << " frames to " << args.out_dir << "\n";
  return 0;
}

struct SplitArgs {
  std::string manifest_path;
  std::string out_dir = ".";
  int parts = 3;
  std::uint64_t seed = 0;
};

int cmd_split(const SplitArgs& args) {
  auto manifest = load_phase([&] {
    if (args.parts < 1) throw ValidationError("--parts must be >= 1");
    return datasetio::load_manifest(args.manifest_path);
  });
  const auto subsets = datasetio::partition_nested(manifest, args.parts, args.seed);
  fs::create_directories(args.out_dir);
  for (std::size_t k = 0; k < subsets.size(); ++k) {
    const std::string stem = "rd" + std::to_string(k + 1);
    std::string ids;
    for (const std::string& line : datasetio::split_file_lines(subsets[k])) ids += line + "\n";
    write_text_file((fs::path(args.out_dir) / (stem + ".txt")).string(), ids);
    write_text_file((fs::path(args.out_dir) / (stem + ".json")).string(),
                    datasetio::write_coco_manifest(subsets[k]));
    std::cout << stem << ": " << subsets[k].entries.size() << " entries\n";
  }
  return 0;
}

struct StatsArgs {
  std::string manifest_path;
  std::string bins;
  bool per_box = false;
};

int cmd_stats(const StatsArgs& args) {
  auto manifest = load_phase([&] {
    datasetio::DatasetManifest m = datasetio::load_manifest(args.manifest_path);
    if (!args.bins.empty()) m.bin_edges = parse_bins(args.bins);
    return m;
  });
  std::cout << histogram_table(datasetio::size_histogram(
      manifest,
      args.per_box ? datasetio::BinCounting::per_box : datasetio::BinCounting::per_image_largest));
  return 0;
}

struct EvalArgs {
  std::string detections_path;
  std::string manifest_path;
  std::string out_path;
  std::string bins;
  double iou_threshold = 0.5;
  bool keep_outside_bin = false;
};

int cmd_eval(const EvalArgs& args) {
  struct Inputs {
    std::vector<evalkit::Detection> dets;
    evalkit::GroundTruthMap gts;
    evalkit::EvalOptions opts;
  };
  auto in = load_phase([&] {
    Inputs inputs;
    std::ifstream det_in(args.detections_path, std::ios::binary);
    if (!det_in) throw IoError("cannot open: " + args.detections_path);
    inputs.dets = evalkit::parse_detections(det_in);
    inputs.gts = datasetio::ground_truth_map(datasetio::load_manifest(args.manifest_path));
    inputs.opts.iou_threshold = args.iou_threshold;
    inputs.opts.ignore_outside_bin = !args.keep_outside_bin;
    if (!args.bins.empty()) inputs.opts.bin_edges = parse_bins(args.bins);
    if (!(args.iou_threshold > 0.0 && args.iou_threshold <= 1.0)) {
      throw ValidationError("--iou-threshold must be in (0, 1]");
    }
    return inputs;
  });
  const evalkit::APReport report = evalkit::size_stratified_report(in.dets, in.gts, in.opts);
  std::cout << evalkit::format_report(report);
  if (!args.out_path.empty()) write_text_file(args.out_path, evalkit::report_to_json(report));
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string out_path;
  std::string mode = "adaptive";
  double alpha = 1.0;
  double lr = 0.2;
  int steps = 50;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_train(const TrainArgs& args) {
  auto samples = load_phase([&] {
    if (args.steps < 1) throw ValidationError("--steps must be >= 1");
    if (args.mode != "adaptive" && args.mode != "fixed") {
      throw ValidationError("--mode must be adaptive or fixed");
    }
    scenario::ScenarioConfig cfg = scenario::load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    return pipeline::samples_from_scenario(cfg);
  });
  const auto mode =
      args.mode == "fixed" ? fusionnet::FusionMode::fixed : fusionnet::FusionMode::adaptive;
  fusionnet::ToyModel model =
      fusionnet::ToyModel::random(Rng::derive_seed(args.seed, "train_init"), mode);
  if (mode == fusionnet::FusionMode::fixed) {
    model.fusion.a45 = args.alpha;
    model.fusion.a34 = args.alpha;
  }
  for (int step = 0; step < args.steps; ++step) {
    const double loss = fusionnet::train_step(model, samples, args.lr);
    std::printf("step %4d  loss %.6f\n", step + 1, loss);
  }
  std::printf("alpha45 %.6f  alpha34 %.6f\n", model.fusion.a45, model.fusion.a34);
  if (!args.out_path.empty()) fusionnet::save_checkpoint(args.out_path, model);
  return 0;
}

struct SweepArgs {
  std::string config_path;
  std::string out_path;
  std::string values = "0,0.25,0.5,0.75,1";
  double lr = 0.2;
  double iou_threshold = 0.5;
  int steps = 30;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_sweep(const SweepArgs& args) {
  struct Inputs {
    fusionnet::SweepConfig cfg;
    std::vector<double> values;
  };
  auto in = load_phase([&] {
    Inputs inputs;
    std::istringstream ss(args.values);
    std::string token;
    while (std::getline(ss, token, ',')) {
      try {
        inputs.values.push_back(std::stod(token));
      } catch (const std::exception&) {
        throw ValidationError("--values has a non-numeric entry: " + token);
      }
    }
    if (inputs.values.empty()) throw ValidationError("--values must list at least one alpha");
    scenario::ScenarioConfig cfg = scenario::load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    inputs.cfg.train = pipeline::samples_from_scenario(cfg);
    inputs.cfg.steps = args.steps;
    inputs.cfg.lr = args.lr;
    inputs.cfg.seed = args.seed;
    inputs.cfg.iou_threshold = args.iou_threshold;
    return inputs;
  });
  const auto cells = fusionnet::alpha_sweep(in.values, in.cfg);
  const std::string table = fusionnet::format_sweep_table(cells);
  std::cout << table;
  if (!args.out_path.empty()) write_text_file(args.out_path, table);
  return 0;
}

struct TransferArgs {
  std::string sim_config_path;
  std::string real_config_path;
  std::string out_dir;
  std::string mode = "grid";
  int pretrain_steps = 20;
  int finetune_steps = 20;
  double lr = 0.2;
  std::uint64_t seed = 0;
  int parallel = 1;
};

int cmd_transfer(const TransferArgs& args) {
  struct Inputs {
    std::vector<fusionnet::TrainSample> sim, real;
  };
  auto in = load_phase([&] {
    if (args.mode != "grid" && args.mode != "tl1" && args.mode != "tl2") {
      throw ValidationError("--mode must be tl1, tl2, or grid");
    }
    Inputs inputs;
    inputs.sim = pipeline::samples_from_scenario(scenario::load_config(args.sim_config_path));
    inputs.real = pipeline::samples_from_scenario(scenario::load_config(args.real_config_path));
    return inputs;
  });
  auto plan_for = [&](transferkit::TransferMode mode, int pretrain_steps) {
    transferkit::TransferPlan plan = transferkit::TransferPlan::make(mode);
    plan.pretrain.steps = pretrain_steps;
    plan.pretrain.lr = args.lr;
    plan.finetune.steps = args.finetune_steps;
    plan.finetune.lr = args.lr;
    plan.seed = args.seed;
    return plan;
  };
  if (args.mode == "grid") {
    std::vector<transferkit::GridRun> runs = {
        {"scratch", plan_for(transferkit::TransferMode::TL2, 0), &in.sim, &in.real},
        {"tl1", plan_for(transferkit::TransferMode::TL1, args.pretrain_steps), &in.sim, &in.real},
        {"tl2", plan_for(transferkit::TransferMode::TL2, args.pretrain_steps), &in.sim, &in.real},
    };
    const auto reports = transferkit::run_grid(runs, args.parallel);
    std::cout << transferkit::format_grid_table(reports);
    if (!args.out_dir.empty()) {
      fs::create_directories(args.out_dir);
      write_text_file((fs::path(args.out_dir) / "grid.txt").string(),
                      transferkit::format_grid_table(reports));
      for (const auto& r : reports) {
        fusionnet::save_checkpoint((fs::path(args.out_dir) / (r.label + "_finetuned.json")).string(),
                                   r.finetuned);
      }
    }
    return 0;
  }
  const auto mode =
      args.mode == "tl1" ? transferkit::TransferMode::TL1 : transferkit::TransferMode::TL2;
  transferkit::TransferReport report =
      transferkit::run_transfer(plan_for(mode, args.pretrain_steps), in.sim, in.real);
  report.label = args.mode;
  std::cout << transferkit::format_transfer_report(report);
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    fusionnet::save_checkpoint((fs::path(args.out_dir) / "pretrained.json").string(),
                               report.pretrained);
    fusionnet::save_checkpoint((fs::path(args.out_dir) / "finetuned.json").string(),
                               report.finetuned);
    write_text_file((fs::path(args.out_dir) / "report.txt").string(),
                    transferkit::format_transfer_report(report));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV small-object dataset and detection toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* sc_gen = app.add_subcommand("generate", "Render a scenario into images, labels, manifest");
  sc_gen->add_option("config", gen.config_path, "scenario config JSON")->required();
  sc_gen->add_option("--out", gen.out_dir, "output directory");
  sc_gen->add_option("--assets", gen.assets_dir, "asset directory (default: procedural)");
  sc_gen->add_option("--seed", gen.seed, "override config seed");
  sc_gen->add_flag("--label-only", gen.label_only, "skip image rendering");
  sc_gen->add_option("--parallel", gen.parallel, "worker threads");

  SplitArgs split;
  auto* sc_split = app.add_subcommand("split", "Partition a manifest into nested subsets");
  sc_split->add_option("manifest", split.manifest_path, "manifest JSON")->required();
  sc_split->add_option("--parts", split.parts, "number of nested subsets");
  sc_split->add_option("--seed", split.seed, "shuffle seed");
  sc_split->add_option("--out", split.out_dir, "output directory");

  StatsArgs stats;
  auto* sc_stats = app.add_subcommand("stats", "Print the size-bin histogram of a manifest");
  sc_stats->add_option("manifest", stats.manifest_path, "manifest JSON")->required();
  sc_stats->add_option("--bins", stats.bins, "comma-separated area edges (default 64,256,1024)");
  sc_stats->add_flag("--per-box", stats.per_box, "count boxes instead of images");

  EvalArgs eval;
  auto* sc_eval = app.add_subcommand("eval", "Size-stratified AP of detections against a manifest");
  sc_eval->add_option("detections", eval.detections_path, "detection list file")->required();
  sc_eval->add_option("manifest", eval.manifest_path, "ground-truth manifest JSON")->required();
  sc_eval->add_option("--iou-threshold", eval.iou_threshold, "TP threshold");
  sc_eval->add_option("--bins", eval.bins, "comma-separated area edges");
  sc_eval->add_option("--out", eval.out_path, "write JSON report here");
  sc_eval->add_flag("--keep-outside-bin", eval.keep_outside_bin,
                    "count detections in every bin regardless of their area");

  TrainArgs train;
  auto* sc_train = app.add_subcommand("train", "Train the toy detector on a scenario");
  sc_train->add_option("config", train.config_path, "scenario config JSON")->required();
  sc_train->add_option("--steps", train.steps, "gradient steps");
  sc_train->add_option("--lr", train.lr, "learning rate");
  sc_train->add_option("--mode", train.mode, "adaptive|fixed");
  sc_train->add_option("--alpha", train.alpha, "fixed-mode fusion coefficient");
  sc_train->add_option("--seed", train.seed, "override config seed; also seeds the model");
  sc_train->add_option("--out", train.out_path, "checkpoint path");

  SweepArgs sweep;
  auto* sc_sweep = app.add_subcommand("sweep", "Fusion-coefficient sweep plus an adaptive run");
  sc_sweep->add_option("config", sweep.config_path, "scenario config JSON")->required();
  sc_sweep->add_option("--values", sweep.values, "comma-separated fixed alphas");
  sc_sweep->add_option("--steps", sweep.steps, "gradient steps per cell");
  sc_sweep->add_option("--lr", sweep.lr, "learning rate");
  sc_sweep->add_option("--iou-threshold", sweep.iou_threshold, "TP threshold for the report");
  sc_sweep->add_option("--seed", sweep.seed, "override config seed; also seeds the models");
  sc_sweep->add_option("--out", sweep.out_path, "write the table here");

  TransferArgs transfer;
  auto* sc_transfer = app.add_subcommand("transfer", "Pretrain on one scenario, finetune on another");
  sc_transfer->add_option("sim_config", transfer.sim_config_path, "pretraining scenario config")
      ->required();
  sc_transfer->add_option("real_config", transfer.real_config_path, "finetuning scenario config")
      ->required();
  sc_transfer->add_option("--mode", transfer.mode, "tl1|tl2|grid");
  sc_transfer->add_option("--pretrain-steps", transfer.pretrain_steps, "pretraining steps");
  sc_transfer->add_option("--finetune-steps", transfer.finetune_steps, "finetuning steps");
  sc_transfer->add_option("--lr", transfer.lr, "learning rate for both stages");
  sc_transfer->add_option("--seed", transfer.seed, "model/init seed");
  sc_transfer->add_option("--parallel", transfer.parallel, "concurrent grid runs");
  sc_transfer->add_option("--out", transfer.out_dir, "checkpoint/report directory");

  gen.seed_set = false;
  train.seed_set = false;
  sweep.seed_set = false;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  gen.seed_set = sc_gen->count("--seed") > 0;
  train.seed_set = sc_train->count("--seed") > 0;
  sweep.seed_set = sc_sweep->count("--seed") > 0;

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (sc_gen->parsed()) return cmd_generate(gen);
    if (sc_split->parsed()) return cmd_split(split);
    if (sc_stats->parsed()) return cmd_stats(stats);
    if (sc_eval->parsed()) return cmd_eval(eval);
    if (sc_train->parsed()) return cmd_train(train);
    if (sc_sweep->parsed()) return cmd_sweep(sweep);
    if (sc_transfer->parsed()) return cmd_transfer(transfer);
  } catch (const UsageFailure& e) {
    std::cerr << "error: " << name << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << name << ": " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 2;
}
