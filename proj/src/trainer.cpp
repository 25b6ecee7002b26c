#include "syncspeech/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace syncspeech {

const char* stage_name(Stage stage) { return stage == Stage::pretrain ? "pretrain" : "finetune"; }

AttentionMask mask_for(const ComposedSequence& seq, bool use_designed_mask) {
  return use_designed_mask ? build_designed_mask(seq) : build_causal_mask(seq.size());
}

SupervisedLoss supervised_loss(Tape& tape, const Tensor& speech_logits, std::span<const int> speech_targets,
                               const Tensor& duration_logits, std::span<const int> duration_targets) {
  SupervisedLoss out;
  out.speech_positions = speech_targets.size();
  out.duration_positions = duration_targets.size();
  if (!speech_targets.empty()) out.mask_loss = cross_entropy_rows(tape, speech_logits, speech_targets);
  if (!duration_targets.empty()) out.duration_loss = cross_entropy_rows(tape, duration_logits, duration_targets);
  return out;
}

SupervisedLoss batch_loss(Tape& tape, const ModelParams& params, std::span<const TrainingSample> samples,
                          bool use_designed_mask) {
  std::vector<AttentionMask> masks;
  masks.reserve(samples.size());
  for (const auto& s : samples) masks.push_back(mask_for(s.sequence, use_designed_mask));
  std::vector<SequenceInput> inputs;
  for (std::size_t i = 0; i < samples.size(); ++i) inputs.push_back({samples[i].sequence.ids, &masks[i]});
  auto hidden = forward_hidden(tape, params, inputs);

  std::vector<std::size_t> speech_rows, duration_rows;
  std::vector<int> speech_targets, duration_targets;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto& t : samples[i].targets.speech) {
      speech_rows.push_back(hidden.offsets[i] + t.position);
      speech_targets.push_back(t.value);
    }
    for (const auto& t : samples[i].targets.duration) {
      duration_rows.push_back(hidden.offsets[i] + t.position);
      duration_targets.push_back(t.value);
    }
  }
  Tensor speech_logits, duration_logits;
  if (!speech_rows.empty()) {
    speech_logits = matmul(tape, gather_rows(tape, hidden.hidden, speech_rows), params.speech_head);
  }
  if (!duration_rows.empty()) {
    duration_logits = matmul(tape, gather_rows(tape, hidden.hidden, duration_rows), params.duration_head);
  }
  return supervised_loss(tape, speech_logits, speech_targets, duration_logits, duration_targets);
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState s;
  for (const auto& t : params.tensors()) {
    s.m.emplace_back(t.numel(), 0.0);
    s.v.emplace_back(t.numel(), 0.0);
  }
  return s;
}

double learning_rate_at(const TrainConfig& c, std::size_t step) {
  if (c.warmup_steps > 0 && step < c.warmup_steps) {
    return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  const std::size_t decay_steps = c.steps > c.warmup_steps ? c.steps - c.warmup_steps : 1;
  const double progress =
      std::min(1.0, static_cast<double>(step - std::min(step, c.warmup_steps)) / static_cast<double>(decay_steps));
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return c.learning_rate * (c.min_lr_ratio + (1.0 - c.min_lr_ratio) * cosine);
}

double adam_update(ModelParams& params, AdamState& state, const TrainConfig& c, double lr) {
  auto tensors = params.tensors();
  if (state.m.size() != tensors.size()) state = make_adam_state(params);
  double sq = 0.0;
  for (auto& t : tensors) {
    for (double g : t.mutable_grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double clip = (c.clip_norm > 0.0 && norm > c.clip_norm) ? c.clip_norm / norm : 1.0;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto w = tensors[i].mutable_data();
    auto g = tensors[i].mutable_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * clip;
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.adam_eps);
    }
  }
  return norm;
}

namespace {

StepReport optimise(ModelParams& params, std::span<const TrainingSample> samples, AdamState& opt,
                    const TrainConfig& config, Stage stage) {
  const auto start = std::chrono::steady_clock::now();
  StepReport report;
  report.stage = stage;
  report.step = static_cast<std::size_t>(opt.step);
  std::vector<TrainingSample> supervised;
  for (const auto& s : samples)
    if (!s.targets.empty()) supervised.push_back(s);
  if (!supervised.empty()) {
    params.zero_grad();
    Tape tape;
    auto loss = batch_loss(tape, params, supervised, config.use_designed_mask);
    Tensor total;
    if (loss.mask_loss.defined() && loss.duration_loss.defined()) total = add(tape, loss.mask_loss, loss.duration_loss);
    else total = loss.mask_loss.defined() ? loss.mask_loss : loss.duration_loss;
    tape.backward(total);
    adam_update(params, opt, config, learning_rate_at(config, static_cast<std::size_t>(opt.step)));
    report.l_mask = loss.mask_value();
    report.l_duration = loss.duration_value();
    report.total = total.item();
    report.speech_positions = loss.speech_positions;
    report.duration_positions = loss.duration_positions;
  }
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace

StepReport pretrain_step(ModelParams& params, std::span<const AlignedExample> batch, Rng& rng, AdamState& opt,
                         const TrainConfig& config, const VocabLayout& vocab) {
  if (batch.empty()) throw std::invalid_argument("pretrain_step: empty batch");
  std::vector<TrainingSample> samples;
  for (const auto& ex : batch) {
    auto s = build_pretrain_sequence(ex, rng, vocab);
    samples.push_back({std::move(s.sequence), std::move(s.targets)});
  }
  return optimise(params, samples, opt, config, Stage::pretrain);
}

StepReport finetune_step(ModelParams& params, std::span<const AlignedExample> batch, Rng& rng, AdamState& opt,
                         const TrainConfig& config, const VocabLayout& vocab) {
  if (batch.empty()) throw std::invalid_argument("finetune_step: empty batch");
  std::vector<TrainingSample> samples;
  FinetuneOptions options{config.supervise_all_durations, config.supervise_first_duration};
  for (const auto& ex : batch) {
    std::uniform_int_distribution<std::size_t> pick(1, ex.num_text());
    auto s = build_finetune_sequence(ex, pick(rng), config.q, vocab, options);
    samples.push_back({std::move(s.sequence), std::move(s.targets)});
  }
  return optimise(params, samples, opt, config, Stage::finetune);
}

namespace {

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  const std::size_t m = t.cols();
  auto d = t.data().subspan(row * m, m);
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

}  // namespace

EvalMetrics evaluate(const ModelParams& params, std::span<const AlignedExample> corpus, std::size_t q,
                     const VocabLayout& vocab, bool use_designed_mask) {
  EvalMetrics m;
  if (corpus.empty()) return m;
  std::vector<TrainingSample> samples;
  for (const auto& ex : corpus) {
    for (std::size_t n = 1; n <= ex.num_text(); ++n) {
      auto s = build_finetune_sequence(ex, n, q, vocab);
      samples.push_back({std::move(s.sequence), std::move(s.targets)});
    }
  }
  std::size_t token_hits = 0, duration_hits = 0, span_hits = 0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<AttentionMask> masks;
    std::vector<SequenceInput> inputs;
    for (std::size_t i = start; i < end; ++i) masks.push_back(mask_for(samples[i].sequence, use_designed_mask));
    for (std::size_t i = start; i < end; ++i) inputs.push_back({samples[i].sequence.ids, &masks[i - start]});
    Tape tape(false);
    auto hidden = forward_hidden(tape, params, inputs);
    auto logits = apply_heads(tape, params, hidden.hidden);
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t base = hidden.offsets[i - start];
      bool all = true;
      for (const auto& t : samples[i].targets.speech) {
        const bool hit = argmax_row(logits.speech, base + t.position) == static_cast<std::size_t>(t.value);
        token_hits += hit ? 1 : 0;
        all = all && hit;
        ++m.tokens;
      }
      span_hits += all ? 1 : 0;
      const auto& d = samples[i].targets.duration.back();
      duration_hits += argmax_row(logits.duration, base + d.position) == static_cast<std::size_t>(d.value) ? 1 : 0;
      ++m.spans;
    }
  }
  m.speech_token_accuracy = static_cast<double>(token_hits) / static_cast<double>(m.tokens);
  m.duration_exact_match = static_cast<double>(duration_hits) / static_cast<double>(m.spans);
  m.span_exact_match = static_cast<double>(span_hits) / static_cast<double>(m.spans);
  return m;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const StepReport> reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training curve " + path.string());
  out << "step,stage,l_mask,l_duration,total,wall_ms\n";
  out.precision(10);
  for (const auto& r : reports) {
    out << r.step << ',' << stage_name(r.stage) << ',' << r.l_mask << ',' << r.l_duration << ',' << r.total << ','
        << r.wall_ms << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

TrainingResult run_training(const TrainConfig& config, std::span<const AlignedExample> corpus, const Checkpoint& init,
                            const TrainingHooks& hooks) {
  if (corpus.empty()) throw std::invalid_argument("run_training: empty corpus");
  if (config.batch_size == 0) throw std::invalid_argument("run_training: batch_size must be >= 1");
  TrainingResult result;
  result.checkpoint.vocab = init.vocab;
  result.checkpoint.params = clone_params(init.params);
  result.checkpoint.step = init.step;
  auto& params = result.checkpoint.params;
  AdamState opt = make_adam_state(params);
  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  std::vector<AlignedExample> batch(config.batch_size);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& ex : batch) ex = corpus[pick(rng)];
    auto report = config.stage == Stage::pretrain
                      ? pretrain_step(params, batch, rng, opt, config, init.vocab)
                      : finetune_step(params, batch, rng, opt, config, init.vocab);
    report.step = step;
    result.reports.push_back(report);
    if (hooks.on_step) hooks.on_step(report);
    if (config.eval_every > 0 && hooks.on_eval && !hooks.eval_corpus.empty() && (step + 1) % config.eval_every == 0) {
      hooks.on_eval(step + 1, evaluate(params, hooks.eval_corpus, config.q, init.vocab, config.use_designed_mask));
    }
  }
  result.checkpoint.step = init.step + config.steps;
  result.checkpoint.optimizer = std::move(opt);
  if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path, result.checkpoint);
  if (!config.curve_path.empty()) write_curve_csv(config.curve_path, result.reports);
  return result;
}

}  // namespace syncspeech
