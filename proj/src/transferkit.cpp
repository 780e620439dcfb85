#include "uavkit/transferkit.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <thread>

#include "uavkit/errors.hpp"
#include "uavkit/rng.hpp"

namespace uavkit::transferkit {

namespace {

const std::set<std::string>& known_groups() {
  static const std::set<std::string> groups = {"backbone", "neck", "head", "fusion"};
  return groups;
}

void validate_stage(const StageConfig& stage, const char* name) {
  if (stage.steps < 0) throw ValidationError(std::string(name) + " steps must be >= 0");
  if (!(stage.lr >= 0.0) || !std::isfinite(stage.lr)) {
    throw ValidationError(std::string(name) + " learning rate must be finite and >= 0");
  }
}

std::vector<double> run_stage(fusionnet::ToyModel& model,
                              const std::vector<fusionnet::TrainSample>& data,
                              const StageConfig& stage, const std::vector<std::string>& frozen,
                              const char* stage_name) {
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(stage.steps));
  for (int i = 0; i < stage.steps; ++i) {
    try {
      losses.push_back(fusionnet::train_step(model, data, stage.lr, frozen));
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(stage_name) + " stage diverged at step " +
                            std::to_string(i) + ": " + e.what());
    }
  }
  return losses;
}

std::string fmt(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

double empirical_error(const Predictor& predictor, const LabeledSet& set) {
  if (!predictor) throw ValidationError("predictor is empty");
  if (set.samples.empty()) throw ValidationError("error estimation needs a nonempty sample set");
  std::size_t wrong = 0;
  for (const Sample& s : set.samples) {
    if (s.label != 0 && s.label != 1) throw ValidationError("labels must be 0 or 1");
    if (predictor(s.input) != s.label) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(set.samples.size());
}

ErrorEstimate generalization_gap(const Predictor& predictor, const LabeledSet& source,
                                 const LabeledSet& target) {
  ErrorEstimate e;
  e.eps_source = empirical_error(predictor, source);
  e.eps_target = empirical_error(predictor, target);
  e.eps_gap = e.eps_target - e.eps_source;
  return e;
}

const char* to_string(TransferMode mode) { return mode == TransferMode::TL1 ? "TL1" : "TL2"; }

TransferPlan TransferPlan::make(TransferMode mode) {
  TransferPlan plan;
  plan.mode = mode;
  if (mode == TransferMode::TL1) plan.frozen_groups = {"backbone"};
  return plan;
}

void TransferPlan::validate() const {
  validate_stage(pretrain, "pretrain");
  validate_stage(finetune, "finetune");
  for (const std::string& g : frozen_groups) {
    if (known_groups().count(g) == 0) throw ValidationError("unknown parameter group: " + g);
  }
  if (mode == TransferMode::TL1 && frozen_groups.empty()) {
    throw ValidationError("TL1 plan must declare a frozen parameter group");
  }
  if (mode == TransferMode::TL2 && !frozen_groups.empty()) {
    throw ValidationError("TL2 plan must not freeze any parameter group");
  }
}

Predictor presence_predictor(const fusionnet::ToyModel& model, int image_width, int image_height) {
  fusionnet::ToyModel copy = model;
  return [copy, image_width, image_height](const std::vector<double>& input) -> int {
    const auto expected = static_cast<std::size_t>(3) * image_width * image_height;
    if (input.size() != expected) {
      throw ValidationError("presence predictor input size mismatch");
    }
    fusionnet::FeatureMap image{3, image_height, image_width, input};
    const fusionnet::ModelOutput out = fusionnet::forward(copy, image);
    const auto dets = fusionnet::decode_detections(out, "probe", image_width, image_height);
    for (const auto& d : dets) {
      if (d.confidence >= 0.5) return 1;
    }
    return 0;
  };
}

LabeledSet presence_set(const std::vector<fusionnet::TrainSample>& samples, Domain domain) {
  if (samples.empty()) throw ValidationError("presence set needs samples");
  LabeledSet set;
  set.domain = domain;
  for (const auto& s : samples) {
    set.samples.push_back({s.image.values, s.gt_boxes.empty() ? 0 : 1});
  }
  return set;
}

TransferReport run_transfer(const TransferPlan& plan,
                            const std::vector<fusionnet::TrainSample>& sim_data,
                            const std::vector<fusionnet::TrainSample>& real_data,
                            const ModelFactory& factory) {
  plan.validate();
  if (sim_data.empty() || real_data.empty()) {
    throw ValidationError("transfer run needs nonempty sim and real sample sets");
  }
  TransferReport report;
  report.mode = plan.mode;
  report.seed = plan.seed;
  report.pretrain_config = plan.pretrain;
  report.finetune_config = plan.finetune;

  fusionnet::ToyModel model =
      factory ? factory(plan.seed)
              : fusionnet::ToyModel::random(Rng::derive_seed(plan.seed, "transfer_init"),
                                            fusionnet::FusionMode::adaptive);
  report.pretrain_losses = run_stage(model, sim_data, plan.pretrain, {}, "pretrain");
  report.pretrained = model;

  const std::vector<std::string> frozen =
      plan.mode == TransferMode::TL1 ? plan.frozen_groups : std::vector<std::string>{};
  report.finetune_losses = run_stage(model, real_data, plan.finetune, frozen, "finetune");
  report.finetuned = model;

  std::vector<evalkit::Detection> dets;
  evalkit::GroundTruthMap gts;
  bool any_gt = false;
  for (const auto& s : real_data) {
    const fusionnet::ModelOutput out = fusionnet::forward(model, s.image);
    for (auto& d : fusionnet::decode_detections(out, s.id, s.image.width, s.image.height)) {
      dets.push_back(std::move(d));
    }
    gts[s.id] = s.gt_boxes;
    any_gt = any_gt || !s.gt_boxes.empty();
  }
  if (any_gt) report.eval = evalkit::size_stratified_report(dets, gts, evalkit::EvalOptions{});

  const Predictor predictor =
      presence_predictor(model, real_data.front().image.width, real_data.front().image.height);
  report.errors = generalization_gap(predictor, presence_set(sim_data, Domain::source),
                                     presence_set(real_data, Domain::target));
  return report;
}

std::vector<TransferReport> run_grid(const std::vector<GridRun>& runs, int parallelism) {
  if (parallelism < 1) throw ValidationError("parallelism must be >= 1");
  for (const GridRun& run : runs) {
    if (run.sim == nullptr || run.real == nullptr) {
      throw ValidationError("grid run missing data sets: " + run.label);
    }
  }
  std::vector<TransferReport> reports(runs.size());
  std::vector<std::exception_ptr> failures(runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= runs.size()) break;
      try {
        reports[i] = run_transfer(runs[i].plan, *runs[i].sim, *runs[i].real);
        reports[i].label = runs[i].label;
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const int threads = std::min<int>(parallelism, static_cast<int>(runs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return reports;
}

std::string format_transfer_report(const TransferReport& report) {
  std::ostringstream os;
  os << "transfer run: " << (report.label.empty() ? "(unnamed)" : report.label) << "\n";
  os << "mode: " << to_string(report.mode) << "\n";
  os << "seed: " << report.seed << "\n";
  os << "pretrain: steps=" << report.pretrain_config.steps << " lr=" << report.pretrain_config.lr
     << "\n";
  os << "finetune: steps=" << report.finetune_config.steps << " lr=" << report.finetune_config.lr
     << "\n";
  auto curve = [&](const char* name, const std::vector<double>& losses) {
    os << name << " loss:";
    for (double v : losses) os << " " << fmt(v, "%.6f");
    os << "\n";
  };
  curve("pretrain", report.pretrain_losses);
  curve("finetune", report.finetune_losses);
  os << evalkit::format_report(report.eval);
  os << "eps_source=" << fmt(report.errors.eps_source, "%.6f")
     << " eps_target=" << fmt(report.errors.eps_target, "%.6f")
     << " eps_gap=" << fmt(report.errors.eps_gap, "%.6f") << "\n";
  return os.str();
}

std::string format_grid_table(const std::vector<TransferReport>& reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %6s %9s %9s %12s %10s %10s %10s %10s\n", "run", "mode",
                "pre_steps", "ft_steps", "final_loss", "AP_all", "eps_src", "eps_tgt", "eps_gap");
  os << line;
  for (const TransferReport& r : reports) {
    const double final_loss = r.finetune_losses.empty()
                                  ? (r.pretrain_losses.empty() ? 0.0 : r.pretrain_losses.back())
                                  : r.finetune_losses.back();
    const std::string ap =
        r.eval.ap_overall.has_value() ? fmt(*r.eval.ap_overall, "%.4f") : std::string("-");
    std::snprintf(line, sizeof(line), "%-24s %6s %9d %9d %12.6f %10s %10.4f %10.4f %10.4f\n",
                  r.label.c_str(), to_string(r.mode), r.pretrain_config.steps,
                  r.finetune_config.steps, final_loss, ap.c_str(), r.errors.eps_source,
                  r.errors.eps_target, r.errors.eps_gap);
    os << line;
  }
  return os.str();
}

}  // namespace uavkit::transferkit
