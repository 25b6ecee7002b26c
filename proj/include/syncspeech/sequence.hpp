#pragma once

// Model-input sequence construction.
//
// Layout of every sequence: a text segment (prompt text then live text), an
// optional end-of-text token, then one duration placeholder D before each
// speech span. Fine-tune and inference sequences end with a trailing D that
// predicts the next span's duration; pretraining sequences do not.
//
// Spans are numbered from 1. Positions and span bounds are 0-based and
// half-open. A D carries the index of the span it precedes.

#include "syncspeech/corpus.hpp"
#include "syncspeech/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace syncspeech {

enum class PositionRole : std::uint8_t { text, eot, dur_placeholder, speech, masked_speech };

const char* role_name(PositionRole role);
inline bool is_speech_role(PositionRole r) { return r == PositionRole::speech || r == PositionRole::masked_speech; }

struct SpanBounds {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const SpanBounds&, const SpanBounds&) = default;
};

struct SequenceMeta {
  std::size_t n = 0;        // spans present (prompt spans included)
  std::size_t q = 0;        // look-ahead
  std::size_t L = 0;        // full text length, when known
  std::size_t L_prime = 0;  // text tokens present
  std::size_t prompt_spans = 0;
  std::vector<int> durations;  // length of each present span
  friend bool operator==(const SequenceMeta&, const SequenceMeta&) = default;
};

struct ComposedSequence {
  std::vector<int> ids;
  std::vector<PositionRole> roles;
  std::vector<std::size_t> span_index;
  std::vector<SpanBounds> span_bounds;
  SequenceMeta meta;
  std::size_t text_len = 0;
  bool has_eot = false;

  std::size_t size() const { return ids.size(); }
  bool ends_with_placeholder() const { return !roles.empty() && roles.back() == PositionRole::dur_placeholder; }
  friend bool operator==(const ComposedSequence&, const ComposedSequence&) = default;
};

struct Target {
  std::size_t position = 0;
  int value = 0;
  friend bool operator==(const Target&, const Target&) = default;
};

/// Speech targets hold raw speech token ids (0..V_s-1); duration targets hold
/// duration classes (0 = STOP).
struct LossTargets {
  std::vector<Target> speech;
  std::vector<Target> duration;
  bool empty() const { return speech.empty() && duration.empty(); }
};

struct PretrainMaskPlan {
  std::vector<std::uint8_t> bpe_mask;    // per text token
  std::vector<std::uint8_t> frame_mask;  // per speech token
  std::vector<std::size_t> masked_spans;  // J, 1-based
};

struct FinetuneSample {
  ComposedSequence sequence;
  LossTargets targets;
};

struct PretrainSample {
  ComposedSequence sequence;
  LossTargets targets;
  PretrainMaskPlan plan;
};

class SequenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FinetuneOptions {
  /// Also supervise every earlier D with the duration of the span it precedes.
  bool supervise_all_durations = false;
  /// Also supervise the first D with l_1. Inference predicts l_1 from the
  /// bootstrap sequence [y_1..y_{q+1}, D], which at n = 1 is exactly this
  /// D's visible context; otherwise nothing trains that prediction.
  bool supervise_first_duration = false;
};

/// Sequence for predicting span n (masked) and the duration of span n+1.
FinetuneSample build_finetune_sequence(const AlignedExample& example, std::size_t n, std::size_t q,
                                       const VocabLayout& vocab, const FinetuneOptions& options = {});

/// Alternating text-token mask whose first value is `first`.
PretrainMaskPlan make_pretrain_plan(const AlignedExample& example, bool first);
PretrainMaskPlan draw_pretrain_plan(const AlignedExample& example, Rng& rng);

PretrainSample build_pretrain_sequence(const AlignedExample& example, const PretrainMaskPlan& plan,
                                       const VocabLayout& vocab);
PretrainSample build_pretrain_sequence(const AlignedExample& example, Rng& rng, const VocabLayout& vocab);

/// First inference sequence: [y_1..y_{q+1}, D]. With end-of-text signalled
/// the available tokens are used, and EOT is included when the sentence has
/// a single token (the position the first fine-tune step would place it).
ComposedSequence build_inference_init(std::span<const int> text_so_far, std::size_t q, bool end_of_text,
                                      const VocabLayout& vocab);

/// Prompt rendered with every span visible and no trailing D.
ComposedSequence build_prompt_prefix(const AlignedExample& prompt, const VocabLayout& vocab);

void append_text(ComposedSequence& seq, int token, const VocabLayout& vocab);
void append_eot(ComposedSequence& seq, const VocabLayout& vocab);
void append_placeholder(ComposedSequence& seq, const VocabLayout& vocab);

/// Appends `duration` masked positions (a new span) and a trailing D.
void pad_seq(ComposedSequence& seq, int duration, const VocabLayout& vocab);

/// Overwrites the newest masked span with `generated` speech tokens.
void update_seq(ComposedSequence& seq, std::span<const int> generated, const VocabLayout& vocab);

enum class SequenceForm { finetune, pretrain, prompt };

/// Structural check of every ComposedSequence invariant; throws SequenceError.
void check_sequence(const ComposedSequence& seq, const VocabLayout& vocab, SequenceForm form);

/// One line per position: index, role, id, span.
std::string dump_sequence(const ComposedSequence& seq);

}  // namespace syncspeech
