#include "spba/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "spba/error.hpp"
#include "spba/rng.hpp"

namespace spba {

EncodedDataset EncodedDataset::subset(std::span<const std::size_t> rows) const {
  EncodedDataset out;
  out.frames = frames;
  out.bands = bands;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  out.labels.reserve(rows.size());
  out.trigger_ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
    out.trigger_ids.push_back(trigger_ids[rows[i]]);
  }
  return out;
}

EncodedDataset encode_dataset(const LabeledDataset& d, const FeatureConfig& fe) {
  EncodedDataset out;
  const auto n = static_cast<Eigen::Index>(d.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Sample& s = d.samples[static_cast<std::size_t>(i)];
    if (s.is_vector()) {
      const auto& x = s.features();
      if (i == 0) out.inputs.resize(n, static_cast<Eigen::Index>(x.size()));
      if (static_cast<Eigen::Index>(x.size()) != out.inputs.cols()) {
        data_error("encode_dataset: dimension mismatch at uid '" + s.uid + "'");
      }
      for (std::size_t j = 0; j < x.size(); ++j) out.inputs(i, static_cast<Eigen::Index>(j)) = x[j];
    } else {
      const Spectrogram spec = featurize(s.waveform(), fe);
      if (i == 0) {
        out.frames = spec.frames;
        out.bands = spec.bands;
        out.inputs.resize(n, static_cast<Eigen::Index>(spec.values.size()));
      }
      if (spec.frames != out.frames || spec.bands != out.bands) {
        data_error("encode_dataset: spectrogram shape mismatch at uid '" + s.uid + "'");
      }
      for (std::size_t j = 0; j < spec.values.size(); ++j) {
        out.inputs(i, static_cast<Eigen::Index>(j)) = spec.values[j];
      }
    }
    out.labels.push_back(s.label);
    out.trigger_ids.push_back(s.trigger_id);
  }
  return out;
}

std::vector<std::string> TaskPartition::task_ids() const {
  std::vector<std::string> ids;
  if (!clean.empty()) ids.emplace_back(kCleanTask);
  for (const auto& [id, rows] : per_trigger) ids.push_back(id);
  return ids;
}

TaskPartition partition_batch(std::span<const std::optional<std::string>> trigger_ids,
                              const TriggerRegistry* registry) {
  TaskPartition p;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < trigger_ids.size(); ++i) {
    if (trigger_ids[i]) {
      groups[*trigger_ids[i]].push_back(i);
    } else {
      p.clean.push_back(i);
    }
  }
  if (registry) {
    for (const auto& spec : registry->specs()) {
      auto it = groups.find(spec.trigger_id);
      if (it == groups.end()) continue;
      p.per_trigger.emplace_back(it->first, std::move(it->second));
      groups.erase(it);
    }
    if (!groups.empty()) data_error("batch contains unknown trigger '" + groups.begin()->first + "'");
  } else {
    for (auto& [id, rows] : groups) p.per_trigger.emplace_back(id, std::move(rows));
  }
  return p;
}

TaskPartition partition_batch(std::span<const Sample> batch, const TriggerRegistry* registry) {
  std::vector<std::optional<std::string>> ids;
  ids.reserve(batch.size());
  for (const auto& s : batch) ids.push_back(s.trigger_id);
  return partition_batch(ids, registry);
}

namespace {

struct TaskRows {
  std::string id;
  const std::vector<std::size_t>* rows;
};

std::vector<TaskRows> task_rows(const TaskPartition& p) {
  std::vector<TaskRows> out;
  if (!p.clean.empty()) out.push_back({kCleanTask, &p.clean});
  for (const auto& [id, rows] : p.per_trigger) out.push_back({id, &rows});
  if (out.empty()) data_error("task partition is empty");
  return out;
}

}  // namespace

std::vector<TaskLoss> task_losses(const Model& model, const EncodedDataset& batch,
                                  const TaskPartition& partition) {
  std::vector<TaskLoss> out;
  for (const auto& t : task_rows(partition)) {
    const EncodedDataset sub = batch.subset(*t.rows);
    out.push_back({t.id, model.loss(sub.inputs, sub.labels)});
  }
  return out;
}

GradientSet task_gradients(const Model& model, const EncodedDataset& batch,
                           const TaskPartition& partition, std::vector<TaskLoss>* losses) {
  GradientSet g;
  if (losses) losses->clear();
  for (const auto& t : task_rows(partition)) {
    const EncodedDataset sub = batch.subset(*t.rows);
    Eigen::VectorXd grad;
    const double value = model.loss(sub.inputs, sub.labels, &grad);
    g.gradients.push_back(std::move(grad));
    g.task_ids.push_back(t.id);
    if (losses) losses->push_back({t.id, value});
  }
  return g;
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  config_error("unknown optimizer '" + s + "'");
}

void TrainConfig::validate(std::size_t tasks) const {
  if (batch_size == 0) config_error("train: batch_size must be > 0");
  if (batch_size < tasks) {
    config_error("train: batch_size " + std::to_string(batch_size) + " < number of tasks " +
                 std::to_string(tasks));
  }
  if (epochs < 0) config_error("train: epochs must be >= 0");
  if (!(learning_rate >= 0.0)) config_error("train: learning_rate must be >= 0");
  if (final_learning_rate && !(*final_learning_rate >= 0.0)) {
    config_error("train: final_learning_rate must be >= 0");
  }
  if (!(mixed_batch_fraction >= 0.0 && mixed_batch_fraction <= 1.0)) {
    config_error("train: mixed_batch_fraction must lie in [0, 1]");
  }
  if (!(mgda_tol > 0.0) || mgda_max_iter < 0) config_error("train: invalid MGDA solver settings");
}

double TrainConfig::rate_at(int epoch) const {
  if (!final_learning_rate || epochs <= 1) return learning_rate;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return learning_rate + (*final_learning_rate - learning_rate) * t;
}

Optimizer::Optimizer(const TrainConfig& cfg, std::size_t parameter_count)
    : kind_(cfg.optimizer),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      epsilon_(cfg.adam_epsilon),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count))) {}

void Optimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient, double learning_rate) {
  if (kind_ == OptimizerKind::sgd) {
    params -= learning_rate * gradient;
    return;
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * gradient;
  v_ = beta2_ * v_ + (1.0 - beta2_) * gradient.cwiseProduct(gradient);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

StepResult train_step_plain(Model& model, const EncodedDataset& batch, Optimizer& optimizer,
                            double learning_rate, const TriggerRegistry* registry) {
  StepResult r;
  const TaskPartition p = partition_batch(batch.trigger_ids, registry);
  const GradientSet g = task_gradients(model, batch, p, &r.losses);
  Eigen::VectorXd total = g.gradients.front();
  for (std::size_t i = 1; i < g.tasks(); ++i) total += g.gradients[i];
  optimizer.step(model.parameters(), total, learning_rate);
  return r;
}

StepResult train_step_mgda(Model& model, const EncodedDataset& batch, const TrainConfig& cfg,
                           Optimizer& optimizer, double learning_rate,
                           const TriggerRegistry* registry, BalancedDirection* balanced_out,
                           GradientSet* gradients_out) {
  StepResult r;
  const TaskPartition p = partition_batch(batch.trigger_ids, registry);
  GradientSet g = task_gradients(model, batch, p, &r.losses);
  MgdaOptions opts;
  opts.normalization = cfg.normalization;
  opts.tol = cfg.mgda_tol;
  opts.max_iter = cfg.mgda_max_iter;

  BalancedDirection b;
  try {
    b = balance_gradients(g, opts);
  } catch (const Error&) {
    r.skipped = true;
    if (gradients_out) *gradients_out = std::move(g);
    return r;
  }
  r.weights = b.weights;
  if (b.direction.norm() < 1e-12) {
    r.skipped = true;
  } else {
    optimizer.step(model.parameters(), b.direction, learning_rate);
  }
  if (balanced_out) *balanced_out = std::move(b);
  if (gradients_out) *gradients_out = std::move(g);
  return r;
}

std::size_t EpochPlan::mixed_count() const {
  return static_cast<std::size_t>(std::count(mixed.begin(), mixed.end(), true));
}

EpochPlan plan_epoch(std::span<const int> task_of, std::size_t trigger_tasks, const TrainConfig& cfg,
                     std::uint64_t seed) {
  EpochPlan plan;
  const std::size_t n = task_of.size();
  if (n == 0) return plan;
  const std::size_t b = cfg.batch_size;

  Rng rng(seed);
  std::vector<std::size_t> clean;
  std::vector<std::vector<std::size_t>> poison(trigger_tasks);
  for (std::size_t i = 0; i < n; ++i) {
    const int t = task_of[i];
    if (t == 0) {
      clean.push_back(i);
    } else {
      if (t < 0 || static_cast<std::size_t>(t) > trigger_tasks) runtime_error("plan_epoch: bad task index");
      poison[static_cast<std::size_t>(t) - 1].push_back(i);
    }
  }
  std::shuffle(clean.begin(), clean.end(), rng);
  for (auto& rows : poison) std::shuffle(rows.begin(), rows.end(), rng);
  std::erase_if(poison, [](const auto& rows) { return rows.empty(); });

  const std::size_t n_clean = clean.size();
  if (poison.empty()) {
    for (std::size_t i = 0; i < n_clean; i += b) {
      plan.batches.emplace_back(clean.begin() + static_cast<std::ptrdiff_t>(i),
                                clean.begin() + static_cast<std::ptrdiff_t>(std::min(n_clean, i + b)));
      plan.mixed.push_back(false);
    }
    return plan;
  }

  // Per-trigger slots in a mixed batch: ceil(B / 2K), lowered so one clean
  // slot remains, raised so each poisoned row is visited once per epoch.
  const std::size_t k = poison.size();
  const std::size_t poison_cap = n_clean > 0 ? b - 1 : b;
  const std::size_t base_slots = std::max<std::size_t>(1, std::min((b + 2 * k - 1) / (2 * k), poison_cap / k));
  auto slots_for = [&](std::size_t m, std::vector<std::size_t>& slots) {
    std::size_t total = 0;
    slots.resize(k);
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t need = (poison[t].size() + m - 1) / m;
      slots[t] = std::min(poison[t].size(), std::max(base_slots, need));
      total += slots[t];
    }
    return total;
  };

  std::size_t n_batches = std::max<std::size_t>(1, (n_clean + b - 1) / b);
  std::size_t n_mixed = 0;
  std::vector<std::size_t> slots;
  for (;; ++n_batches) {
    n_mixed = static_cast<std::size_t>(std::llround(cfg.mixed_batch_fraction * static_cast<double>(n_batches)));
    n_mixed = std::clamp<std::size_t>(n_mixed, 1, n_batches);
    while (n_mixed < n_batches && slots_for(n_mixed, slots) > poison_cap) ++n_mixed;
    const std::size_t per_mixed = slots_for(n_mixed, slots);
    if (per_mixed > poison_cap) continue;
    const std::size_t capacity = (n_batches - n_mixed) * b + n_mixed * (b - per_mixed);
    if (capacity >= n_clean) break;
  }

  std::vector<std::size_t> positions(n_batches);
  std::iota(positions.begin(), positions.end(), 0);
  std::shuffle(positions.begin(), positions.end(), rng);
  positions.resize(n_mixed);
  std::sort(positions.begin(), positions.end());

  // Each trigger cycles through its shuffled rows, so scarce triggers are
  // revisited within the epoch.
  std::vector<std::vector<std::size_t>> poisoned_rows(n_batches);
  std::vector<std::size_t> cursor(k, 0);
  for (std::size_t pos : positions) {
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t j = 0; j < slots[t]; ++j) {
        poisoned_rows[pos].push_back(poison[t][cursor[t]]);
        cursor[t] = (cursor[t] + 1) % poison[t].size();
      }
    }
  }

  // Clean rows go round-robin, mixed batches first, so sizes stay even.
  std::vector<std::size_t> order = positions;
  for (std::size_t i = 0; i < n_batches; ++i) {
    if (poisoned_rows[i].empty()) order.push_back(i);
  }
  std::vector<std::vector<std::size_t>> clean_rows(n_batches);
  std::size_t next = 0;
  for (std::size_t i = 0; next < n_clean; i = (i + 1) % n_batches) {
    const std::size_t batch = order[i];
    if (clean_rows[batch].size() + poisoned_rows[batch].size() < b) clean_rows[batch].push_back(clean[next++]);
  }

  for (std::size_t i = 0; i < n_batches; ++i) {
    std::vector<std::size_t> rows = std::move(clean_rows[i]);
    rows.insert(rows.end(), poisoned_rows[i].begin(), poisoned_rows[i].end());
    if (rows.empty()) continue;
    plan.mixed.push_back(!poisoned_rows[i].empty());
    plan.batches.push_back(std::move(rows));
  }
  return plan;
}

TrainResult train(Model& model, const EncodedDataset& train_set, const TrainConfig& cfg,
                  const TriggerRegistry& registry, const MgdaObserver& observer) {
  const std::size_t k = registry.size();
  std::vector<int> task_of(train_set.size());
  std::vector<std::vector<std::size_t>> rows_of(k + 1);
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const auto& id = train_set.trigger_ids[i];
    if (id && !registry.contains(*id)) data_error("training set contains unknown trigger '" + *id + "'");
    task_of[i] = id ? static_cast<int>(registry.index_of(*id)) + 1 : 0;
    rows_of[static_cast<std::size_t>(task_of[i])].push_back(i);
  }

  TrainResult result;
  std::vector<std::size_t> present;
  for (std::size_t t = 0; t <= k; ++t) {
    if (rows_of[t].empty()) continue;
    present.push_back(t);
    result.task_ids.push_back(t == 0 ? std::string(kCleanTask) : registry.specs()[t - 1].trigger_id);
  }
  if (present.empty()) data_error("train: empty training set");
  cfg.validate(present.size());

  std::vector<EncodedDataset> task_sets;
  for (std::size_t t : present) task_sets.push_back(train_set.subset(rows_of[t]));

  Optimizer optimizer(cfg, model.parameter_count());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.rate_at(epoch);
    const EpochPlan plan = plan_epoch(task_of, k, cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.task_ids = result.task_ids;
    rec.batches = plan.batches.size();
    rec.mixed_batches = plan.mixed_count();
    std::map<std::string, std::vector<double>> lambdas;

    for (std::size_t bi = 0; bi < plan.batches.size(); ++bi) {
      const EncodedDataset batch = train_set.subset(plan.batches[bi]);
      if (cfg.mgda_enabled && plan.mixed[bi]) {
        BalancedDirection balanced;
        GradientSet grads;
        const StepResult r = train_step_mgda(model, batch, cfg, optimizer, lr, &registry, &balanced, &grads);
        ++rec.mgda_steps;
        if (r.skipped) ++rec.skipped_steps;
        if (r.weights) {
          for (std::size_t i = 0; i < grads.tasks(); ++i) lambdas[grads.task_ids[i]].push_back(r.weights->lambda[i]);
          if (observer) observer(MgdaStepInfo{epoch, bi, &grads, &balanced});
        }
      } else {
        train_step_plain(model, batch, optimizer, lr, &registry);
      }
    }

    for (std::size_t t = 0; t < present.size(); ++t) {
      rec.losses.push_back(model.loss(task_sets[t].inputs, task_sets[t].labels));
      const auto it = lambdas.find(result.task_ids[t]);
      if (it == lambdas.end() || it->second.empty()) {
        rec.lambda_mean.emplace_back();
        rec.lambda_min.emplace_back();
        rec.lambda_max.emplace_back();
      } else {
        const auto& v = it->second;
        rec.lambda_mean.emplace_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
        rec.lambda_min.emplace_back(*std::min_element(v.begin(), v.end()));
        rec.lambda_max.emplace_back(*std::max_element(v.begin(), v.end()));
      }
    }
    result.history.push_back(std::move(rec));
  }
  return result;
}

std::string history_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "epoch,task_id,loss,lambda_mean,lambda_min,lambda_max\n";
  char buf[64];
  auto opt = [&](const std::optional<double>& v) -> std::string {
    if (!v) return "";
    std::snprintf(buf, sizeof buf, "%.9g", *v);
    return buf;
  };
  for (const auto& rec : result.history) {
    for (std::size_t t = 0; t < rec.task_ids.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%.9g", rec.losses[t]);
      os << rec.epoch << ',' << rec.task_ids[t] << ',' << buf << ',' << opt(rec.lambda_mean[t]) << ','
         << opt(rec.lambda_min[t]) << ',' << opt(rec.lambda_max[t]) << '\n';
    }
  }
  return os.str();
}

void write_history_csv(const TrainResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) runtime_error("cannot write " + path.string());
  out << history_csv(result);
}

}  // namespace spba
