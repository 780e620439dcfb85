#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uavkit/evalkit.hpp"
#include "uavkit/fusionnet.hpp"

namespace uavkit::transferkit {

// Binary-label sample for the 0-1-loss estimators.
struct Sample {
  std::vector<double> input;
  int label = 0;  // 0 or 1
};

enum class Domain { source, target };

struct LabeledSet {
  std::vector<Sample> samples;
  Domain domain = Domain::source;
};

using Predictor = std::function<int(const std::vector<double>&)>;

// Fraction of samples the predictor labels incorrectly (0-1 loss).
double empirical_error(const Predictor& predictor, const LabeledSet& set);

struct ErrorEstimate {
  double eps_source = 0.0;
  double eps_target = 0.0;
  double eps_gap = 0.0;  // eps_target - eps_source, exactly
};

ErrorEstimate generalization_gap(const Predictor& predictor, const LabeledSet& source,
                                 const LabeledSet& target);

// TL1 freezes the declared parameter groups during finetuning; TL2 retrains
// everything.
enum class TransferMode { TL1, TL2 };

const char* to_string(TransferMode mode);

struct StageConfig {
  int steps = 20;
  double lr = 0.2;
};

struct TransferPlan {
  TransferMode mode = TransferMode::TL2;
  StageConfig pretrain;
  StageConfig finetune;
  std::vector<std::string> frozen_groups;  // TL1: nonempty, default {"backbone"}
  std::uint64_t seed = 0;

  static TransferPlan make(TransferMode mode);
  void validate() const;
};

struct TransferReport {
  std::string label;
  TransferMode mode = TransferMode::TL2;
  std::uint64_t seed = 0;
  StageConfig pretrain_config;
  StageConfig finetune_config;
  std::vector<double> pretrain_losses;
  std::vector<double> finetune_losses;
  fusionnet::ToyModel pretrained;
  fusionnet::ToyModel finetuned;
  evalkit::APReport eval;
  ErrorEstimate errors;
};

using ModelFactory = std::function<fusionnet::ToyModel(std::uint64_t seed)>;

// Pretrains on sim_data, finetunes on real_data per the plan, evaluates on
// real_data, and estimates source/target 0-1 errors with a presence
// classifier (any decoded detection at confidence >= 0.5) derived from the
// finetuned model. Divergence is reported with the stage name.
TransferReport run_transfer(const TransferPlan& plan,
                            const std::vector<fusionnet::TrainSample>& sim_data,
                            const std::vector<fusionnet::TrainSample>& real_data,
                            const ModelFactory& factory = {});

// Presence classifier and the labeled set it is scored against.
Predictor presence_predictor(const fusionnet::ToyModel& model, int image_width, int image_height);
LabeledSet presence_set(const std::vector<fusionnet::TrainSample>& samples, Domain domain);

struct GridRun {
  std::string label;
  TransferPlan plan;
  const std::vector<fusionnet::TrainSample>* sim = nullptr;
  const std::vector<fusionnet::TrainSample>* real = nullptr;
};

// Executes independent runs (concurrently when parallelism > 1) and returns
// reports in input order.
std::vector<TransferReport> run_grid(const std::vector<GridRun>& runs, int parallelism = 1);

std::string format_transfer_report(const TransferReport& report);
std::string format_grid_table(const std::vector<TransferReport>& reports);

}  // namespace uavkit::transferkit
