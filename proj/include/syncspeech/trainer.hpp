#pragma once

// Two-stage optimisation: masked pretraining over whole sentences, then
// fine-tuning on sequences built exactly as streaming inference builds them.

#include "syncspeech/checkpoint.hpp"
#include "syncspeech/corpus.hpp"
#include "syncspeech/model.hpp"
#include "syncspeech/sequence.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace syncspeech {

enum class Stage { pretrain, finetune };
const char* stage_name(Stage stage);

struct TrainConfig {
  Stage stage = Stage::pretrain;
  std::size_t steps = 3000;
  std::size_t batch_size = 16;
  double learning_rate = 3e-4;
  std::size_t warmup_steps = 100;
  double min_lr_ratio = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  std::size_t q = 1;
  bool use_designed_mask = true;
  bool supervise_all_durations = false;
  bool supervise_first_duration = true;
  std::filesystem::path checkpoint_path;
  std::filesystem::path curve_path;
  std::size_t eval_every = 0;
};

struct StepReport {
  std::size_t step = 0;
  Stage stage = Stage::pretrain;
  double l_mask = 0.0;
  double l_duration = 0.0;
  double total = 0.0;
  double wall_ms = 0.0;
  std::size_t speech_positions = 0;
  std::size_t duration_positions = 0;
  friend bool operator==(const StepReport& a, const StepReport& b) {
    return a.step == b.step && a.stage == b.stage && a.l_mask == b.l_mask && a.l_duration == b.l_duration &&
           a.total == b.total;
  }
};

struct TrainingSample {
  ComposedSequence sequence;
  LossTargets targets;
};

/// Mean cross-entropy over supervised rows of each head.
struct SupervisedLoss {
  Tensor mask_loss;      // scalar, undefined when there are no speech targets
  Tensor duration_loss;  // scalar, undefined when there are no duration targets
  std::size_t speech_positions = 0;
  std::size_t duration_positions = 0;
  double mask_value() const { return mask_loss.defined() ? mask_loss.item() : 0.0; }
  double duration_value() const { return duration_loss.defined() ? duration_loss.item() : 0.0; }
};

SupervisedLoss supervised_loss(Tape& tape, const Tensor& speech_logits, std::span<const int> speech_targets,
                               const Tensor& duration_logits, std::span<const int> duration_targets);

/// Builds the batch graph (trunk over all sequences, heads on supervised rows
/// only) and returns the losses.
SupervisedLoss batch_loss(Tape& tape, const ModelParams& params, std::span<const TrainingSample> samples,
                          bool use_designed_mask);

AttentionMask mask_for(const ComposedSequence& seq, bool use_designed_mask);

AdamState make_adam_state(const ModelParams& params);
double learning_rate_at(const TrainConfig& config, std::size_t step);
/// Clips the global grad norm, applies one Adam update, and returns the
/// pre-clip norm.
double adam_update(ModelParams& params, AdamState& state, const TrainConfig& config, double lr);

StepReport pretrain_step(ModelParams& params, std::span<const AlignedExample> batch, Rng& rng, AdamState& opt,
                         const TrainConfig& config, const VocabLayout& vocab);
StepReport finetune_step(ModelParams& params, std::span<const AlignedExample> batch, Rng& rng, AdamState& opt,
                         const TrainConfig& config, const VocabLayout& vocab);

struct EvalMetrics {
  double speech_token_accuracy = 0.0;
  double duration_exact_match = 0.0;
  double span_exact_match = 0.0;
  std::size_t tokens = 0;
  std::size_t spans = 0;
};

/// Teacher-forced evaluation over every (example, n) fine-tune sequence.
EvalMetrics evaluate(const ModelParams& params, std::span<const AlignedExample> corpus, std::size_t q,
                     const VocabLayout& vocab, bool use_designed_mask = true);

struct TrainingHooks {
  std::function<void(const StepReport&)> on_step;
  std::function<void(std::size_t step, const EvalMetrics&)> on_eval;
  std::span<const AlignedExample> eval_corpus;
};

struct TrainingResult {
  Checkpoint checkpoint;
  std::vector<StepReport> reports;
};

/// Runs `config.steps` steps of the configured stage starting from `init`.
/// Optimizer state restarts per stage. Writes the checkpoint and the
/// `step,stage,l_mask,l_duration,total,wall_ms` curve when paths are set.
TrainingResult run_training(const TrainConfig& config, std::span<const AlignedExample> corpus, const Checkpoint& init,
                            const TrainingHooks& hooks = {});

void write_curve_csv(const std::filesystem::path& path, std::span<const StepReport> reports);

}  // namespace syncspeech
