#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spba/datamodel.hpp"
#include "spba/features.hpp"
#include "spba/mgda.hpp"
#include "spba/model.hpp"
#include "spba/triggers.hpp"

namespace spba {

/// Dataset in model-input form: one row per sample. Audio payloads are
/// featurized and flattened frame-major.
struct EncodedDataset {
  Eigen::MatrixXd inputs;
  std::vector<int> labels;
  std::vector<std::optional<std::string>> trigger_ids;
  std::size_t frames = 0;  // audio only
  std::size_t bands = 0;

  std::size_t size() const { return labels.size(); }
  /// Rows selected by `rows`, in that order.
  EncodedDataset subset(std::span<const std::size_t> rows) const;
};

EncodedDataset encode_dataset(const LabeledDataset& d, const FeatureConfig& fe = {});

/// Sub-batch indices per task. Indices refer to positions in the batch.
struct TaskPartition {
  std::vector<std::size_t> clean;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> per_trigger;

  /// Clean (when nonempty) first, then triggers.
  std::vector<std::string> task_ids() const;
  std::size_t tasks() const { return (clean.empty() ? 0 : 1) + per_trigger.size(); }
};

inline constexpr const char* kCleanTask = "clean";

/// Routes samples by trigger id. Triggers follow registry order when a
/// registry is given, otherwise lexicographic order. Empty entries are omitted.
TaskPartition partition_batch(std::span<const std::optional<std::string>> trigger_ids,
                              const TriggerRegistry* registry = nullptr);
TaskPartition partition_batch(std::span<const Sample> batch, const TriggerRegistry* registry = nullptr);

struct TaskLoss {
  std::string task_id;
  double loss = 0.0;
};

/// Mean cross-entropy per task, in partition order.
std::vector<TaskLoss> task_losses(const Model& model, const EncodedDataset& batch,
                                  const TaskPartition& partition);

/// Per-task losses plus the gradient of each one.
GradientSet task_gradients(const Model& model, const EncodedDataset& batch,
                           const TaskPartition& partition, std::vector<TaskLoss>* losses = nullptr);

enum class OptimizerKind { sgd, adam };

const char* to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  std::size_t batch_size = 64;
  int epochs = 30;
  double learning_rate = 1e-3;
  /// When set, the rate decays linearly to this value at the last epoch.
  std::optional<double> final_learning_rate;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool mgda_enabled = true;
  double mixed_batch_fraction = 0.5;
  Normalization normalization = Normalization::l2;
  double mgda_tol = 1e-6;
  int mgda_max_iter = 250;
  std::uint64_t seed = 0;

  /// `tasks` is T = 1 + K; batch_size must leave room for every task.
  void validate(std::size_t tasks) const;
  double rate_at(int epoch) const;
};

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t parameter_count);

  /// params -= update(gradient)
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient, double learning_rate);

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, epsilon_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

struct StepResult {
  std::vector<TaskLoss> losses;         // pre-step
  std::optional<SimplexWeights> weights;  // MGDA steps only
  bool skipped = false;                 // Pareto-stationary batch
};

/// One optimizer step on the sum of per-task mean losses.
StepResult train_step_plain(Model& model, const EncodedDataset& batch, Optimizer& optimizer,
                            double learning_rate, const TriggerRegistry* registry = nullptr);

/// Observer hook for MGDA steps.
struct MgdaStepInfo {
  int epoch = 0;
  std::size_t batch = 0;
  const GradientSet* gradients = nullptr;
  const BalancedDirection* balanced = nullptr;
};
using MgdaObserver = std::function<void(const MgdaStepInfo&)>;

/// One optimizer step along the MGDA min-norm direction of the task gradients.
StepResult train_step_mgda(Model& model, const EncodedDataset& batch, const TrainConfig& cfg,
                           Optimizer& optimizer, double learning_rate,
                           const TriggerRegistry* registry = nullptr,
                           BalancedDirection* balanced_out = nullptr,
                           GradientSet* gradients_out = nullptr);

/// Batch composition for one epoch.
struct EpochPlan {
  std::vector<std::vector<std::size_t>> batches;
  std::vector<bool> mixed;

  std::size_t mixed_count() const;
};

/// Stratified sampler. `task_of[i]` is 0 for clean rows and k >= 1 for rows
/// of trigger task k. Clean rows appear exactly once. round(fraction * batches)
/// batches (at least one) are mixed: each carries ceil(B / 2K) rows of every
/// trigger, cycling through that trigger's rows, so poisoned rows appear at
/// least once and are repeated when scarce. Mixed batches are added beyond the
/// fraction only when the poisoned rows would not fit otherwise, and every
/// mixed batch keeps at least one clean row when clean rows exist.
EpochPlan plan_epoch(std::span<const int> task_of, std::size_t trigger_tasks,
                     const TrainConfig& cfg, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  std::vector<std::string> task_ids;
  std::vector<double> losses;  // full-dataset mean loss per task, after the epoch
  // Per task, over this epoch's MGDA steps; empty when MGDA did not run.
  std::vector<std::optional<double>> lambda_mean, lambda_min, lambda_max;
  std::size_t batches = 0;
  std::size_t mixed_batches = 0;
  std::size_t mgda_steps = 0;
  std::size_t skipped_steps = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<std::string> task_ids;
};

/// Full training loop over Dp.
TrainResult train(Model& model, const EncodedDataset& train_set, const TrainConfig& cfg,
                  const TriggerRegistry& registry, const MgdaObserver& observer = {});

/// CSV: epoch,task_id,loss,lambda_mean,lambda_min,lambda_max
void write_history_csv(const TrainResult& result, const std::filesystem::path& path);
std::string history_csv(const TrainResult& result);

}  // namespace spba
