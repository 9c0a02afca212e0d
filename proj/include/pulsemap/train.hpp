#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pulsemap/checkpoint.hpp"
#include "pulsemap/model.hpp"
#include "pulsemap/optim.hpp"
#include "pulsemap/params.hpp"
#include "pulsemap/patch_embed.hpp"

namespace pulsemap {

struct TrainConfig {
  int batch_size = 4;
  double base_lr = 1e-4;
  double finetune_lr = 1e-4;
  double weight_decay = 0.001;
  double lr_floor_fraction = 0.0;
  std::int64_t total_steps = 200;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int finetune_epochs = 10;
  bool freeze_encoder = false;
  std::int64_t checkpoint_every = 0;  // 0 -> only the final checkpoint

  AdamConfig adam() const { return {beta1, beta2, epsilon, weight_decay}; }
  void validate() const;
};

enum class Axis { Valence, Arousal };
/// Binary: rating > 5 is high. Ternary: 1-3 calm/unpleasant, 4-6 medium/neutral, 7-9 activated/pleasant.
enum class ClassScheme { Binary, Ternary };

Axis parse_axis(const std::string& s);
ClassScheme parse_scheme(const std::string& s);
const char* scheme_name(ClassScheme s);
int n_classes(ClassScheme s);
int class_of(double rating, ClassScheme scheme);

/// A ready-to-train example: standardized patches of both streams plus labels.
struct PreparedExample {
  PatchGrid face;
  PatchGrid bio;
  std::string subject_id;
  double valence = 5.0;
  double arousal = 5.0;

  int label(Axis axis, ClassScheme scheme) const {
    return class_of(axis == Axis::Valence ? valence : arousal, scheme);
  }
};

// ---------------------------------------------------------------------------

/// One entry of a contrastive batch: which example supplies each stream.
struct MatchExample {
  std::size_t face_source = 0;
  std::size_t bio_source = 0;
  int label = 1;
};

/// batch_size distinct examples; the first half keep their own face (y=1), the
/// second half get a face from a different random example (y=0).
std::vector<MatchExample> make_pretrain_batch(std::size_t dataset_size, std::size_t batch_size,
                                              std::uint64_t seed);

/// Materializes a batch, drawing independent mask plans per stream and example.
Batch build_pretrain_batch(const std::vector<PreparedExample>& data,
                           const std::vector<MatchExample>& matches, double mask_ratio,
                           std::uint64_t seed);

struct FoldPlan {
  int k = 10;
  std::map<std::string, int> assignments;

  std::vector<std::string> test_subjects(int fold) const;
  std::vector<std::string> train_subjects(int fold) const;
};

FoldPlan kfold_split(const std::vector<std::string>& subject_ids, int k, std::uint64_t seed);

struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;  // macro over classes seen in labels or predictions
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]

  std::int64_t total() const;
};

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels, int n_classes);

std::vector<int> predict(const ParamStore& params, const TransformerConfig& config,
                         const std::vector<PreparedExample>& examples);

Metrics evaluate(const ParamStore& params, const TransformerConfig& config,
                 const std::vector<PreparedExample>& examples, Axis axis, ClassScheme scheme);

/// Fraction of correct match decisions (p > 0.5 <=> aligned) over a batch.
double matching_accuracy(const ParamStore& params, const TransformerConfig& config, const Batch& batch);

// ---------------------------------------------------------------------------

struct LossRow {
  std::int64_t step = 0;
  double l_m = 0.0;
  double l_c = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

void write_loss_trace(const std::filesystem::path& path, const std::vector<LossRow>& rows);
std::vector<LossRow> read_loss_trace(const std::filesystem::path& path);

struct PretrainResult {
  ParamStore params;
  AdamState optimizer;
  std::vector<LossRow> trace;
};

struct PretrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Continue from a checkpoint holding optimizer state; steps after its
  /// `step` are run.
  const Checkpoint* resume = nullptr;
  /// Called after each step (for progress output).
  std::function<void(const LossRow&)> on_step;
};

/// Per step: sample a batch, MAE pass on aligned pairs with fresh masks,
/// unmasked matching pass on the whole batch, one Adam step at the scheduled
/// learning rate. Parameters are kept at float precision after every step.
PretrainResult pretrain_loop(const std::vector<PreparedExample>& data, const TransformerConfig& model,
                             const TrainConfig& train, const PretrainOptions& options = {});

struct FinetuneReport {
  std::vector<Metrics> per_fold;
  Metrics mean;  // accuracy and F1 averaged over folds, confusion summed
};

FinetuneReport finetune_loop(const std::vector<PreparedExample>& data, const ParamStore& pretrained,
                             const TransformerConfig& model, const TrainConfig& train, Axis axis,
                             ClassScheme scheme, const FoldPlan& folds);

/// Trains encoder + head on `train_set` starting from `pretrained`.
ParamStore finetune_fold(const std::vector<PreparedExample>& train_set, const ParamStore& pretrained,
                         const TransformerConfig& model, const TrainConfig& train, Axis axis,
                         ClassScheme scheme, std::uint64_t seed);

std::string metrics_report_json(const FinetuneReport& report);

}  // namespace pulsemap
