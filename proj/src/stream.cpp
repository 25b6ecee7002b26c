#include "syncspeech/stream.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <ostream>

namespace syncspeech {

void SessionConfig::validate() const {
  if (chunk_size < 1) throw SessionError("chunk_size must be >= 1");
  if (!(duration_modulation > 0.0)) throw SessionError("duration modulation must be > 0");
  if (duration_topk < 1) throw SessionError("duration_topk must be >= 1");
  if (speech_topk < 1) throw SessionError("speech_topk must be >= 1");
  if (samples_per_token < 1) throw SessionError("samples_per_token must be >= 1");
}

const char* trace_kind_name(TraceKind kind) {
  switch (kind) {
    case TraceKind::feed: return "feed";
    case TraceKind::forward: return "forward";
    case TraceKind::emit: return "emit";
    case TraceKind::stop: return "stop";
  }
  return "?";
}

namespace {

// Indices of the k largest entries among `candidates`, best first; ties keep
// the lower index.
std::vector<std::size_t> top_k(std::span<const double> logits, std::vector<std::size_t> candidates, std::size_t k) {
  k = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                    [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
  candidates.resize(k);
  return candidates;
}

std::size_t sample_among(std::span<const double> logits, const std::vector<std::size_t>& best, Rng& rng) {
  if (best.size() == 1) return best.front();
  const double mx = logits[best.front()];
  std::vector<double> weights;
  for (auto c : best) weights.push_back(std::exp(logits[c] - mx));
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return best[dist(rng)];
}

}  // namespace

int sample_duration(std::span<const double> logits, std::size_t topk, double modulation, Rng& rng, bool allow_stop) {
  if (logits.size() < 2) throw SessionError("duration logits need at least two classes");
  std::vector<std::size_t> candidates(logits.size());
  std::iota(candidates.begin(), candidates.end(), 0);
  if (!allow_stop) candidates.erase(candidates.begin());
  const auto cls = static_cast<int>(sample_among(logits, top_k(logits, std::move(candidates), topk), rng));
  if (cls == VocabLayout::kStopClass) return cls;
  const int max_duration = static_cast<int>(logits.size()) - 1;
  const auto scaled = static_cast<int>(std::floor(modulation * cls + 0.5));
  return std::clamp(scaled, 1, max_duration);
}

std::vector<int> sample_speech(const Tensor& logits, std::span<const std::size_t> rows, SpeechSampling policy,
                               std::size_t topk, Rng& rng) {
  const std::size_t width = logits.cols();
  std::vector<std::size_t> all(width);
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) {
    auto row = logits.data().subspan(r * width, width);
    const std::size_t k = policy == SpeechSampling::greedy ? 1 : topk;
    out.push_back(static_cast<int>(sample_among(row, top_k(row, all, k), rng)));
  }
  return out;
}

AudioChunk mock_decode(std::span<const int> tokens, std::size_t chunk_index, int speech_vocab,
                       std::size_t samples_per_token) {
  if (tokens.empty()) throw SessionError("mock_decode: empty token chunk");
  AudioChunk chunk;
  chunk.index = chunk_index;
  chunk.token_count = tokens.size();
  chunk.samples.reserve(tokens.size() * samples_per_token);
  for (int k : tokens) {
    const double value = static_cast<double>(k + 1) / static_cast<double>(speech_vocab);
    chunk.samples.insert(chunk.samples.end(), samples_per_token, value);
  }
  return chunk;
}

StreamSession::StreamSession(const ModelParams& params, VocabLayout vocab, SessionConfig config,
                             std::optional<AlignedExample> prompt)
    : params_(params), vocab_(vocab), config_(config), rng_(config.seed), start_(std::chrono::steady_clock::now()) {
  config_.validate();
  if (prompt && !prompt->text.empty()) seq_ = build_prompt_prefix(*prompt, vocab_);
}

std::vector<AudioChunk> StreamSession::feed_token(int token) {
  if (closed_) throw SessionError("session is closed");
  if (end_of_text_) throw SessionError("token fed after end of text");
  if (token < 0 || token >= vocab_.text_vocab) throw SessionError("text token " + std::to_string(token) + " out of range");
  arrived_.push_back(token);
  log(TraceKind::feed, 0);
  std::vector<AudioChunk> out;
  advance(out);
  return out;
}

std::vector<AudioChunk> StreamSession::feed_end() {
  if (closed_) throw SessionError("session is closed");
  if (end_of_text_) throw SessionError("end of text signalled twice");
  end_of_text_ = true;
  log(TraceKind::feed, 0);
  std::vector<AudioChunk> out;
  if (arrived_.empty()) {
    closed_ = true;
    log(TraceKind::stop, 0);
    return out;
  }
  advance(out);
  return out;
}

void StreamSession::advance(std::vector<AudioChunk>& out) {
  const std::size_t q = config_.q;
  while (!closed_) {
    const std::size_t arrived = arrived_.size();
    if (!bootstrapped_) {
      // The step-1 sequence carries EOT only for one-token sentences, so the
      // second token (or end of text) must be known first.
      if (!(end_of_text_ || (arrived >= q + 1 && arrived >= 2))) break;
      bootstrap();
      continue;
    }
    const std::size_t n = decoded_ + 1;
    if (!(end_of_text_ || (arrived >= n + q && arrived > n))) break;
    decode_step(out);
  }
}

Logits StreamSession::run_forward() {
  ++forwards_;
  const auto mask = config_.use_designed_mask ? build_designed_mask(seq_) : build_causal_mask(seq_.size());
  return forward(params_, seq_.ids, mask);
}

void StreamSession::bootstrap() {
  const std::size_t count = std::min(arrived_.size(), config_.q + 1);
  for (std::size_t i = 0; i < count; ++i) append_text(seq_, arrived_[i], vocab_);
  text_in_seq_ = count;
  if (end_of_text_ && arrived_.size() == 1) append_eot(seq_, vocab_);
  append_placeholder(seq_, vocab_);
  seq_.meta.q = config_.q;

  auto logits = run_forward();
  const std::size_t last = seq_.size() - 1;
  const auto row = logits.duration.data().subspan(last * logits.duration.cols(), logits.duration.cols());
  pre_dur_ = sample_duration(row, config_.duration_topk, config_.duration_modulation, rng_, false);
  log(TraceKind::forward, 0);
  pad_seq(seq_, pre_dur_, vocab_);
  bootstrapped_ = true;
}

void StreamSession::decode_step(std::vector<AudioChunk>& out) {
  const std::size_t n = decoded_ + 1;
  const std::size_t wanted = end_of_text_ ? std::min(n + config_.q, arrived_.size()) : n + config_.q;
  while (text_in_seq_ < wanted) append_text(seq_, arrived_[text_in_seq_++], vocab_);
  const bool final = end_of_text_ && n == arrived_.size();
  if (final) {
    if (!seq_.has_eot) append_eot(seq_, vocab_);
    seq_.meta.L = arrived_.size();
  }

  auto logits = run_forward();
  const auto& span = seq_.span_bounds.back();
  std::vector<std::size_t> rows(span.size());
  std::iota(rows.begin(), rows.end(), span.begin);
  auto tokens = sample_speech(logits.speech, rows, config_.speech_sampling, config_.speech_topk, rng_);
  const std::size_t last = seq_.size() - 1;
  const auto row = logits.duration.data().subspan(last * logits.duration.cols(), logits.duration.cols());
  const int next = sample_duration(row, config_.duration_topk, config_.duration_modulation, rng_, final);

  update_seq(seq_, tokens, vocab_);
  speech_.insert(speech_.end(), tokens.begin(), tokens.end());
  span_lengths_.push_back(static_cast<int>(tokens.size()));
  ++decoded_;
  log(TraceKind::forward, tokens.size());

  if (final) {
    final_duration_ = next;
    emit(out, true);
    closed_ = true;
    log(TraceKind::stop, 0);
    return;
  }
  pad_seq(seq_, next, vocab_);
  pre_dur_ = next;
  emit(out, false);
}

void StreamSession::emit(std::vector<AudioChunk>& out, bool flush) {
  while (speech_.size() - emitted_tokens_ >= config_.chunk_size ||
         (flush && speech_.size() > emitted_tokens_)) {
    const std::size_t count = std::min(config_.chunk_size, speech_.size() - emitted_tokens_);
    auto chunk = mock_decode(std::span<const int>(speech_).subspan(emitted_tokens_, count), chunks_++,
                             vocab_.speech_vocab, config_.samples_per_token);
    chunk.first_token = emitted_tokens_;
    emitted_tokens_ += count;
    log(TraceKind::emit, count);
    out.push_back(std::move(chunk));
  }
}

void StreamSession::log(TraceKind kind, std::size_t span_len) {
  TraceEvent e;
  e.step = bootstrapped_ ? decoded_ : 0;
  e.kind = kind;
  e.tokens_in = arrived_.size();
  e.span_len = span_len;
  e.cum_speech_tokens = speech_.size();
  e.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  trace_.push_back(e);
}

void write_trace_csv(std::ostream& out, std::span<const TraceEvent> trace) {
  out << "step,event,tokens_in,span_len,cum_speech_tokens,wall_ms\n";
  for (const auto& e : trace) {
    out << e.step << ',' << trace_kind_name(e.kind) << ',' << e.tokens_in << ',' << e.span_len << ','
        << e.cum_speech_tokens << ',' << e.wall_ms << '\n';
  }
}

void write_raw_audio(std::ostream& out, const AudioChunk& chunk) {
  for (double s : chunk.samples) {
    const auto bits = std::bit_cast<std::uint64_t>(s);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
  }
}

}  // namespace syncspeech
