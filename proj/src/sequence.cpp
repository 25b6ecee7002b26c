#include "syncspeech/sequence.hpp"

#include <algorithm>
#include <sstream>

namespace syncspeech {

const char* role_name(PositionRole role) {
  switch (role) {
    case PositionRole::text: return "TEXT";
    case PositionRole::eot: return "EOT";
    case PositionRole::dur_placeholder: return "DUR_PLACEHOLDER";
    case PositionRole::speech: return "SPEECH";
    case PositionRole::masked_speech: return "MASKED_SPEECH";
  }
  return "?";
}

namespace {

void push(ComposedSequence& seq, int id, PositionRole role, std::size_t span) {
  seq.ids.push_back(id);
  seq.roles.push_back(role);
  seq.span_index.push_back(span);
}

void push_text(ComposedSequence& seq, int token) {
  push(seq, token, PositionRole::text, 0);
  ++seq.text_len;
  ++seq.meta.L_prime;
}

void push_eot(ComposedSequence& seq, const VocabLayout& vocab) {
  push(seq, vocab.eot_id(), PositionRole::eot, 0);
  seq.has_eot = true;
}

void push_placeholder(ComposedSequence& seq, const VocabLayout& vocab) {
  push(seq, vocab.dur_id(), PositionRole::dur_placeholder, seq.span_bounds.size() + 1);
}

// Appends span j = span_bounds.size() + 1 holding example tokens [begin, end).
void push_span(ComposedSequence& seq, const AlignedExample& ex, int begin, int end, bool masked,
               const VocabLayout& vocab) {
  const std::size_t j = seq.span_bounds.size() + 1;
  SpanBounds bounds{seq.size(), seq.size() + static_cast<std::size_t>(end - begin)};
  for (int i = begin; i < end; ++i) {
    if (masked) push(seq, vocab.mask_id(), PositionRole::masked_speech, j);
    else push(seq, vocab.speech_embedding(ex.speech[static_cast<std::size_t>(i)]), PositionRole::speech, j);
  }
  seq.span_bounds.push_back(bounds);
  seq.meta.durations.push_back(end - begin);
  ++seq.meta.n;
}

void add_span_targets(LossTargets& targets, const ComposedSequence& seq, const AlignedExample& ex, std::size_t j) {
  const auto& b = seq.span_bounds[j - 1];
  const int first = ex.span_begin(j);
  for (std::size_t p = b.begin; p < b.end; ++p) {
    targets.speech.push_back({p, ex.speech[static_cast<std::size_t>(first) + (p - b.begin)]});
  }
}

void check_duration(int l, const VocabLayout& vocab) {
  if (l < 1 || l > vocab.max_duration) {
    throw SequenceError("duration " + std::to_string(l) + " outside [1, " + std::to_string(vocab.max_duration) + "]");
  }
}

void insert_at_text_end(ComposedSequence& seq, int id, PositionRole role) {
  const std::size_t at = seq.text_len + (seq.has_eot ? 1 : 0);
  seq.ids.insert(seq.ids.begin() + static_cast<std::ptrdiff_t>(at), id);
  seq.roles.insert(seq.roles.begin() + static_cast<std::ptrdiff_t>(at), role);
  seq.span_index.insert(seq.span_index.begin() + static_cast<std::ptrdiff_t>(at), 0);
  for (auto& b : seq.span_bounds) {
    ++b.begin;
    ++b.end;
  }
}

}  // namespace

FinetuneSample build_finetune_sequence(const AlignedExample& ex, std::size_t n, std::size_t q,
                                       const VocabLayout& vocab, const FinetuneOptions& options) {
  const std::size_t L = ex.num_text();
  if (n < 1 || n > L) {
    throw SequenceError("span index n = " + std::to_string(n) + " outside [1, " + std::to_string(L) + "]");
  }
  if (ex.durations_end.size() != L) throw SequenceError("durations_end does not cover the text");
  FinetuneSample out;
  auto& seq = out.sequence;
  seq.meta.q = q;
  seq.meta.L = L;
  const std::size_t text_count = std::min(L, n + q);
  for (std::size_t i = 0; i < text_count; ++i) push_text(seq, ex.text[i]);
  if (n == L) push_eot(seq, vocab);
  for (std::size_t j = 1; j <= n; ++j) {
    check_duration(ex.duration(j), vocab);
    push_placeholder(seq, vocab);
    push_span(seq, ex, ex.span_begin(j), ex.span_end(j), j == n, vocab);
  }
  push_placeholder(seq, vocab);

  add_span_targets(out.targets, seq, ex, n);
  if (options.supervise_all_durations) {
    for (std::size_t j = 1; j <= n; ++j) out.targets.duration.push_back({seq.span_bounds[j - 1].begin - 1, ex.duration(j)});
  } else if (options.supervise_first_duration) {
    out.targets.duration.push_back({seq.span_bounds[0].begin - 1, ex.duration(1)});
  }
  int next = VocabLayout::kStopClass;
  if (n < L) {
    next = ex.duration(n + 1);
    check_duration(next, vocab);
  }
  out.targets.duration.push_back({seq.size() - 1, next});
  return out;
}

PretrainMaskPlan make_pretrain_plan(const AlignedExample& ex, bool first) {
  PretrainMaskPlan plan;
  const std::size_t L = ex.num_text();
  plan.bpe_mask.resize(L);
  for (std::size_t j = 0; j < L; ++j) plan.bpe_mask[j] = static_cast<std::uint8_t>((j % 2 == 0) == first ? 1 : 0);
  plan.frame_mask.assign(ex.num_speech(), 0);
  for (std::size_t j = 1; j <= L; ++j) {
    if (!plan.bpe_mask[j - 1]) continue;
    plan.masked_spans.push_back(j);
    for (int i = ex.span_begin(j); i < ex.span_end(j); ++i) plan.frame_mask[static_cast<std::size_t>(i)] = 1;
  }
  return plan;
}

PretrainMaskPlan draw_pretrain_plan(const AlignedExample& ex, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  return make_pretrain_plan(ex, coin(rng));
}

PretrainSample build_pretrain_sequence(const AlignedExample& ex, const PretrainMaskPlan& plan,
                                       const VocabLayout& vocab) {
  validate_example(ex, vocab);
  const std::size_t L = ex.num_text();
  if (plan.bpe_mask.size() != L) throw SequenceError("mask plan does not match the text length");
  PretrainSample out;
  out.plan = plan;
  auto& seq = out.sequence;
  seq.meta.L = L;
  for (int t : ex.text) push_text(seq, t);
  push_eot(seq, vocab);
  for (std::size_t j = 1; j <= L; ++j) {
    push_placeholder(seq, vocab);
    push_span(seq, ex, ex.span_begin(j), ex.span_end(j), plan.bpe_mask[j - 1] != 0, vocab);
  }
  for (std::size_t j : plan.masked_spans) {
    out.targets.duration.push_back({seq.span_bounds[j - 1].begin - 1, ex.duration(j)});
    add_span_targets(out.targets, seq, ex, j);
  }
  return out;
}

PretrainSample build_pretrain_sequence(const AlignedExample& ex, Rng& rng, const VocabLayout& vocab) {
  return build_pretrain_sequence(ex, draw_pretrain_plan(ex, rng), vocab);
}

ComposedSequence build_inference_init(std::span<const int> text, std::size_t q, bool end_of_text,
                                      const VocabLayout& vocab) {
  if (text.empty() || (!end_of_text && text.size() < q + 1)) {
    throw SequenceError("need " + std::to_string(q + 1) + " text tokens or end of text, have " +
                        std::to_string(text.size()));
  }
  ComposedSequence seq;
  seq.meta.q = q;
  if (end_of_text) seq.meta.L = text.size();
  const std::size_t count = std::min(text.size(), q + 1);
  for (std::size_t i = 0; i < count; ++i) push_text(seq, text[i]);
  if (end_of_text && text.size() == 1) push_eot(seq, vocab);
  push_placeholder(seq, vocab);
  return seq;
}

ComposedSequence build_prompt_prefix(const AlignedExample& prompt, const VocabLayout& vocab) {
  validate_example(prompt, vocab);
  ComposedSequence seq;
  for (int t : prompt.text) push_text(seq, t);
  for (std::size_t j = 1; j <= prompt.num_text(); ++j) {
    push_placeholder(seq, vocab);
    push_span(seq, prompt, prompt.span_begin(j), prompt.span_end(j), false, vocab);
  }
  seq.meta.prompt_spans = seq.meta.n;
  return seq;
}

void append_text(ComposedSequence& seq, int token, const VocabLayout& vocab) {
  if (seq.has_eot) throw SequenceError("text appended after end of text");
  if (token < 0 || token >= vocab.text_vocab) throw SequenceError("text token " + std::to_string(token) + " out of range");
  insert_at_text_end(seq, token, PositionRole::text);
  ++seq.text_len;
  ++seq.meta.L_prime;
}

void append_eot(ComposedSequence& seq, const VocabLayout& vocab) {
  if (seq.has_eot) throw SequenceError("end of text appended twice");
  insert_at_text_end(seq, vocab.eot_id(), PositionRole::eot);
  seq.has_eot = true;
}

void append_placeholder(ComposedSequence& seq, const VocabLayout& vocab) {
  if (seq.ends_with_placeholder()) throw SequenceError("sequence already ends with a duration placeholder");
  push_placeholder(seq, vocab);
}

void pad_seq(ComposedSequence& seq, int duration, const VocabLayout& vocab) {
  if (duration == VocabLayout::kStopClass) throw SequenceError("pad_seq called with STOP duration");
  check_duration(duration, vocab);
  if (!seq.ends_with_placeholder()) throw SequenceError("pad_seq requires a trailing duration placeholder");
  const std::size_t j = seq.span_bounds.size() + 1;
  SpanBounds bounds{seq.size(), seq.size() + static_cast<std::size_t>(duration)};
  for (int i = 0; i < duration; ++i) push(seq, vocab.mask_id(), PositionRole::masked_speech, j);
  seq.span_bounds.push_back(bounds);
  seq.meta.durations.push_back(duration);
  ++seq.meta.n;
  push_placeholder(seq, vocab);
}

void update_seq(ComposedSequence& seq, std::span<const int> generated, const VocabLayout& vocab) {
  if (seq.span_bounds.empty()) {
    if (generated.empty()) return;
    throw SequenceError("update_seq: no span to update");
  }
  const auto& b = seq.span_bounds.back();
  if (b.size() != generated.size()) {
    throw SequenceError("update_seq: span has " + std::to_string(b.size()) + " positions, got " +
                        std::to_string(generated.size()) + " tokens");
  }
  for (std::size_t p = b.begin; p < b.end; ++p) {
    if (seq.roles[p] != PositionRole::masked_speech) throw SequenceError("update_seq: newest span is not masked");
  }
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const int k = generated[i];
    if (k < 0 || k >= vocab.speech_vocab) throw SequenceError("speech token " + std::to_string(k) + " out of range");
    seq.ids[b.begin + i] = vocab.speech_embedding(k);
    seq.roles[b.begin + i] = PositionRole::speech;
  }
}

void check_sequence(const ComposedSequence& seq, const VocabLayout& vocab, SequenceForm form) {
  auto fail = [](const std::string& what) { throw SequenceError("invalid sequence: " + what); };
  const std::size_t N = seq.size();
  if (seq.roles.size() != N || seq.span_index.size() != N) fail("per-position arrays differ in length");
  if (seq.text_len > N) fail("text segment longer than sequence");
  for (std::size_t p = 0; p < seq.text_len; ++p) {
    if (seq.roles[p] != PositionRole::text || seq.span_index[p] != 0) fail("position " + std::to_string(p) + " not TEXT");
    if (seq.ids[p] < 0 || seq.ids[p] >= vocab.text_vocab) fail("text id out of range at " + std::to_string(p));
  }
  std::size_t p = seq.text_len;
  if (seq.has_eot) {
    if (p >= N || seq.roles[p] != PositionRole::eot || seq.ids[p] != vocab.eot_id() || seq.span_index[p] != 0) {
      fail("missing EOT after text");
    }
    ++p;
  }
  if (form == SequenceForm::pretrain && !seq.has_eot) fail("pretraining sequence without EOT");
  if (form == SequenceForm::prompt && seq.has_eot) fail("prompt prefix with EOT");
  std::size_t masked_spans = 0;
  for (std::size_t j = 1; j <= seq.span_bounds.size(); ++j) {
    if (p >= N || seq.roles[p] != PositionRole::dur_placeholder || seq.ids[p] != vocab.dur_id() || seq.span_index[p] != j) {
      fail("span " + std::to_string(j) + " not preceded by its duration placeholder");
    }
    const auto& b = seq.span_bounds[j - 1];
    if (b.begin != p + 1 || b.end <= b.begin || b.end > N) fail("span " + std::to_string(j) + " bounds");
    if (j > seq.meta.durations.size() || seq.meta.durations[j - 1] != static_cast<int>(b.size())) {
      fail("span " + std::to_string(j) + " length disagrees with meta durations");
    }
    const PositionRole role = seq.roles[b.begin];
    if (!is_speech_role(role)) fail("span " + std::to_string(j) + " holds non-speech positions");
    for (std::size_t i = b.begin; i < b.end; ++i) {
      if (seq.roles[i] != role || seq.span_index[i] != j) fail("span " + std::to_string(j) + " mixes roles");
      if (role == PositionRole::masked_speech && seq.ids[i] != vocab.mask_id()) fail("masked position without MASK id");
      if (role == PositionRole::speech &&
          (seq.ids[i] < vocab.speech_base() || seq.ids[i] >= vocab.speech_base() + vocab.speech_vocab)) {
        fail("speech position with non-speech id");
      }
    }
    if (role == PositionRole::masked_speech) {
      ++masked_spans;
      if (form == SequenceForm::finetune && j != seq.span_bounds.size()) fail("masked span before the newest span");
      if (form == SequenceForm::prompt) fail("masked span inside prompt prefix");
    }
    p = b.end;
  }
  if (seq.meta.n != seq.span_bounds.size()) fail("meta n disagrees with span count");
  if (form == SequenceForm::finetune) {
    if (p + 1 != N || seq.roles[p] != PositionRole::dur_placeholder || seq.span_index[p] != seq.span_bounds.size() + 1) {
      fail("missing trailing duration placeholder");
    }
  } else if (p != N) {
    fail("trailing positions after the last span");
  }
}

std::string dump_sequence(const ComposedSequence& seq) {
  std::ostringstream os;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    os << i << '\t' << role_name(seq.roles[i]) << '\t' << seq.ids[i] << '\t' << seq.span_index[i] << '\n';
  }
  return os.str();
}

}  // namespace syncspeech
