#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace syncspeech {

/// Embedding-id plan shared by text tokens, special tokens and speech tokens.
struct VocabLayout {
  int text_vocab = 32;
  int speech_vocab = 64;
  int max_duration = 32;

  int eot_id() const { return text_vocab; }
  int dur_id() const { return text_vocab + 1; }
  int mask_id() const { return text_vocab + 2; }
  int pad_id() const { return text_vocab + 3; }
  int speech_base() const { return text_vocab + 4; }
  int total_vocab() const { return text_vocab + 4 + speech_vocab; }
  int speech_embedding(int speech_token) const { return speech_base() + speech_token; }

  /// Duration classes are {STOP, 1..max_duration}.
  static constexpr int kStopClass = 0;
  int num_duration_classes() const { return max_duration + 1; }

  void validate() const;
  friend bool operator==(const VocabLayout&, const VocabLayout&) = default;
};

/// One sentence: text tokens y, speech tokens s, and per-token end positions a
/// (a_L = T, a_0 = 0 implicit).
struct AlignedExample {
  std::vector<int> text;
  std::vector<int> speech;
  std::vector<int> durations_end;

  std::size_t num_text() const { return text.size(); }
  std::size_t num_speech() const { return speech.size(); }
  /// l_j for 1-based j.
  int duration(std::size_t j) const;
  /// Span start (a_{j-1}) for 1-based j.
  int span_begin(std::size_t j) const { return j <= 1 ? 0 : durations_end[j - 2]; }
  int span_end(std::size_t j) const { return durations_end[j - 1]; }
  std::vector<int> durations() const;

  friend bool operator==(const AlignedExample&, const AlignedExample&) = default;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws CorpusError naming the offending field.
void validate_example(const AlignedExample& example, const VocabLayout& vocab);

struct LengthRange {
  int min = 3;
  int max = 12;
};

/// Duration of text token `token` at 0-based sentence position `position`.
int rule_duration(int token, int position);
/// Speech token at 0-based `offset` inside the span of text token `token`.
int rule_speech_token(int token, int offset, const VocabLayout& vocab);

/// Builds an example from text alone using the generator rule.
AlignedExample example_from_text(const std::vector<int>& text, const VocabLayout& vocab);

std::vector<AlignedExample> generate_corpus(std::size_t num_sentences, std::uint64_t seed,
                                            const VocabLayout& vocab, LengthRange lengths = {});

std::string format_example(const AlignedExample& example);
AlignedExample parse_example(const std::string& line, const VocabLayout& vocab, std::size_t line_number = 0);

void save_corpus(const std::filesystem::path& path, const std::vector<AlignedExample>& corpus);
std::vector<AlignedExample> load_corpus(const std::filesystem::path& path, const VocabLayout& vocab);

}  // namespace syncspeech
