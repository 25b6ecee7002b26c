#pragma once

// Streaming synthesis session. Text tokens arrive one at a time; once the
// look-ahead is satisfied, every arriving token triggers exactly one forward
// pass that decodes the newest masked span and predicts the next duration.
// The first duration is predicted by one extra bootstrap pass.

#include "syncspeech/corpus.hpp"
#include "syncspeech/masks.hpp"
#include "syncspeech/model.hpp"
#include "syncspeech/sequence.hpp"

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace syncspeech {

enum class SpeechSampling { greedy, topk };

struct SessionConfig {
  std::size_t q = 1;
  std::size_t chunk_size = 15;
  std::size_t duration_topk = 3;
  double duration_modulation = 1.0;
  SpeechSampling speech_sampling = SpeechSampling::greedy;
  std::size_t speech_topk = 1;
  std::uint64_t seed = 0;
  bool use_designed_mask = true;
  std::size_t samples_per_token = 4;

  void validate() const;
};

struct AudioChunk {
  std::vector<double> samples;
  std::size_t first_token = 0;  // offset into the generated token stream
  std::size_t token_count = 0;
  std::size_t index = 0;
};

enum class TraceKind { feed, forward, emit, stop };
const char* trace_kind_name(TraceKind kind);

struct TraceEvent {
  std::size_t step = 0;
  TraceKind kind = TraceKind::feed;
  std::size_t tokens_in = 0;
  std::size_t span_len = 0;
  std::size_t cum_speech_tokens = 0;
  double wall_ms = 0.0;
};

class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Restricts to the top-k classes by logit, renormalises and samples (k = 1
/// is argmax). Non-STOP results are scaled by `modulation`, rounded half up
/// and clamped to [1, max_duration]. STOP is excluded when `allow_stop` is
/// false.
int sample_duration(std::span<const double> logits, std::size_t topk, double modulation, Rng& rng,
                    bool allow_stop = true);

/// One token per row; greedy takes the argmax, topk samples among the k best.
std::vector<int> sample_speech(const Tensor& logits, std::span<const std::size_t> rows, SpeechSampling policy,
                               std::size_t topk, Rng& rng);

/// Token k becomes `samples_per_token` copies of (k + 1) / speech_vocab.
AudioChunk mock_decode(std::span<const int> tokens, std::size_t chunk_index, int speech_vocab,
                       std::size_t samples_per_token);

class StreamSession {
 public:
  StreamSession(const ModelParams& params, VocabLayout vocab, SessionConfig config,
                std::optional<AlignedExample> prompt = std::nullopt);

  std::vector<AudioChunk> feed_token(int token);
  /// Signals end of text, runs the remaining steps and flushes the last chunk.
  std::vector<AudioChunk> feed_end();

  bool closed() const { return closed_; }
  const ComposedSequence& sequence() const { return seq_; }
  /// Speech tokens generated for the live text, in order.
  const std::vector<int>& speech_tokens() const { return speech_; }
  const std::vector<int>& span_lengths() const { return span_lengths_; }
  std::size_t forward_count() const { return forwards_; }
  std::size_t decoded_spans() const { return decoded_; }
  /// Duration class predicted at the trailing D of the final step.
  std::optional<int> final_duration() const { return final_duration_; }
  const std::vector<TraceEvent>& trace() const { return trace_; }

 private:
  void advance(std::vector<AudioChunk>& out);
  void bootstrap();
  void decode_step(std::vector<AudioChunk>& out);
  void emit(std::vector<AudioChunk>& out, bool flush);
  Logits run_forward();
  void log(TraceKind kind, std::size_t span_len);

  const ModelParams& params_;
  VocabLayout vocab_;
  SessionConfig config_;
  Rng rng_;
  ComposedSequence seq_;
  std::vector<int> arrived_;
  std::size_t text_in_seq_ = 0;
  bool end_of_text_ = false;
  bool bootstrapped_ = false;
  bool closed_ = false;
  std::size_t decoded_ = 0;
  int pre_dur_ = 0;
  std::vector<int> speech_;
  std::vector<int> span_lengths_;
  std::size_t emitted_tokens_ = 0;
  std::size_t chunks_ = 0;
  std::size_t forwards_ = 0;
  std::optional<int> final_duration_;
  std::vector<TraceEvent> trace_;
  std::chrono::steady_clock::time_point start_;
};

void write_trace_csv(std::ostream& out, std::span<const TraceEvent> trace);
/// Raw little-endian f64 samples.
void write_raw_audio(std::ostream& out, const AudioChunk& chunk);

}  // namespace syncspeech
