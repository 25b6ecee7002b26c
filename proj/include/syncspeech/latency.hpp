#pragma once

// First-packet latency and real-time factor for streaming TTS pipelines:
// closed-form models per model class plus a discrete-event simulation of
// upstream LLM -> TTS -> chunk decoder that reproduces them.
//
// Closed forms (d_LLM per text token, d_TTS per TTS step, chunk tokens per
// decoder packet):
//   CosyVoice, VALL-E   L * d_LLM + chunk * d_TTS
//   CosyVoice2          min(L, 5) * d_LLM + chunk * d_TTS
//   MaskGCT, F5-TTS     L * d_LLM + b * d_TTS
//   SyncSpeech          min(q + 1, L) * d_LLM + c * d_TTS
// Mode A (text already available) drops the LLM term.

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace syncspeech {

using Nanos = std::chrono::nanoseconds;

enum class ModelClass { cosyvoice, valle, cosyvoice2, maskgct, f5tts, syncspeech };
enum class LatencyMode { A, L };

const char* model_class_name(ModelClass model);
ModelClass parse_model_class(const std::string& name);
const char* latency_mode_name(LatencyMode mode);

/// Text tokens CosyVoice2 reads before its first speech token.
inline constexpr std::size_t kCosyVoice2TextLead = 5;

struct LatencyParams {
  Nanos d_llm{std::chrono::milliseconds(25)};
  Nanos d_tts{std::chrono::milliseconds(5)};
  Nanos frame{std::chrono::milliseconds(40)};
  std::size_t chunk = 15;
  std::size_t L = 20;
  std::size_t T = 100;
  std::optional<std::size_t> b;  // NAR sampling iterations
  std::optional<std::size_t> c;  // SyncSpeech decode steps until the first chunk
  std::size_t q = 1;             // look-ahead, the k of the SyncSpeech formula
};

class LatencyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void validate(const LatencyParams& p, ModelClass model);

Nanos analytic_fpl(ModelClass model, const LatencyParams& p, LatencyMode mode);
/// SyncSpeech: (L + 1) * d_TTS / (T * F).
double analytic_rtf(const LatencyParams& p);
/// Autoregressive classes: T * d_TTS / (T * F) = d_TTS / F.
double analytic_rtf_ar(const LatencyParams& p);
/// RTF for any class (NAR classes use b * d_TTS / (T * F)).
double analytic_rtf(ModelClass model, const LatencyParams& p);

/// Decode steps until cumulative span lengths reach `chunk`; all spans when
/// they never do.
std::size_t steps_until_chunk(std::span<const int> spans, std::size_t chunk);

enum class SimActor { llm, tts, decoder };
const char* sim_actor_name(SimActor actor);

struct SimEvent {
  std::int64_t t_ns = 0;
  SimActor actor = SimActor::llm;
  std::string event;
};

struct SimOptions {
  /// Model the pipeline physically: the bootstrap pass sits on the critical
  /// path and each decode step waits for its look-ahead token. The default
  /// follows the closed-form accounting, where the TTS runs its first c steps
  /// back to back once the first q + 1 tokens are in.
  bool stall_on_arrival = false;
};

struct SimulationResult {
  std::vector<SimEvent> events;  // mode L timeline
  Nanos fpl_a{0};
  Nanos fpl_l{0};
  double rtf = 0.0;
  std::size_t c = 0;  // SyncSpeech steps to the first chunk (0 for other classes)
  LatencyParams params;  // after applying the trace
};

/// `spans` gives per-text-token speech lengths (SyncSpeech); when present it
/// sets L and T and determines c.
SimulationResult simulate_pipeline(ModelClass model, const LatencyParams& p,
                                   std::optional<std::vector<int>> spans = std::nullopt,
                                   const SimOptions& options = {});

void write_results_header(std::ostream& out);
void write_results_row(std::ostream& out, ModelClass model, LatencyMode mode, const LatencyParams& p, Nanos fpl,
                       double rtf);
void write_event_log(std::ostream& out, std::span<const SimEvent> events);

double to_ms(Nanos n);

}  // namespace syncspeech
