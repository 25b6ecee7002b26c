#include "syncspeech/corpus.hpp"

#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

namespace syncspeech {

void VocabLayout::validate() const {
  if (text_vocab < 2) throw CorpusError("text_vocab must be >= 2");
  if (speech_vocab < 2) throw CorpusError("speech_vocab must be >= 2");
  if (max_duration < 1) throw CorpusError("max_duration must be >= 1");
}

int AlignedExample::duration(std::size_t j) const { return span_end(j) - span_begin(j); }

std::vector<int> AlignedExample::durations() const {
  std::vector<int> out(text.size());
  for (std::size_t j = 1; j <= text.size(); ++j) out[j - 1] = duration(j);
  return out;
}

void validate_example(const AlignedExample& ex, const VocabLayout& vocab) {
  if (ex.durations_end.size() != ex.text.size()) {
    throw CorpusError("durations_end: " + std::to_string(ex.durations_end.size()) + " entries for " +
                      std::to_string(ex.text.size()) + " text tokens");
  }
  for (int t : ex.text) {
    if (t < 0 || t >= vocab.text_vocab) throw CorpusError("text: token " + std::to_string(t) + " out of range");
  }
  for (int s : ex.speech) {
    if (s < 0 || s >= vocab.speech_vocab) throw CorpusError("speech: token " + std::to_string(s) + " out of range");
  }
  int prev = 0;
  for (std::size_t i = 0; i < ex.durations_end.size(); ++i) {
    const int l = ex.durations_end[i] - prev;
    if (l < 1 || l > vocab.max_duration) {
      throw CorpusError("durations: token " + std::to_string(i) + " has duration " + std::to_string(l) +
                        " outside [1, " + std::to_string(vocab.max_duration) + "]");
    }
    prev = ex.durations_end[i];
  }
  if (prev != static_cast<int>(ex.speech.size())) {
    throw CorpusError("durations: a_L = " + std::to_string(prev) + " but speech has " +
                      std::to_string(ex.speech.size()) + " tokens");
  }
}

int rule_duration(int token, int position) { return 1 + (token + position) % 4; }

int rule_speech_token(int token, int offset, const VocabLayout& vocab) {
  return (7 * token + 3 * offset) % vocab.speech_vocab;
}

AlignedExample example_from_text(const std::vector<int>& text, const VocabLayout& vocab) {
  AlignedExample ex;
  ex.text = text;
  int end = 0;
  for (std::size_t p = 0; p < text.size(); ++p) {
    const int l = rule_duration(text[p], static_cast<int>(p));
    for (int o = 0; o < l; ++o) ex.speech.push_back(rule_speech_token(text[p], o, vocab));
    end += l;
    ex.durations_end.push_back(end);
  }
  return ex;
}

std::vector<AlignedExample> generate_corpus(std::size_t num_sentences, std::uint64_t seed, const VocabLayout& vocab,
                                            LengthRange lengths) {
  vocab.validate();
  if (lengths.min < 1 || lengths.max > 64 || lengths.min > lengths.max) {
    throw CorpusError("invalid length range [" + std::to_string(lengths.min) + ", " + std::to_string(lengths.max) +
                      "]");
  }
  if (vocab.max_duration < 4) throw CorpusError("generator rule needs max_duration >= 4");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> length_dist(lengths.min, lengths.max);
  std::uniform_int_distribution<int> token_dist(0, vocab.text_vocab - 1);
  std::vector<AlignedExample> corpus;
  corpus.reserve(num_sentences);
  for (std::size_t i = 0; i < num_sentences; ++i) {
    std::vector<int> text(static_cast<std::size_t>(length_dist(rng)));
    for (auto& t : text) t = token_dist(rng);
    corpus.push_back(example_from_text(text, vocab));
  }
  return corpus;
}

namespace {

void append_ids(std::string& out, const std::vector<int>& ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(ids[i]);
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::vector<int> parse_ids(const std::string& field, const std::string& name, std::size_t line_number) {
  std::vector<int> ids;
  if (field.empty()) return ids;
  for (const auto& tok : split(field, ' ')) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw CorpusError("line " + std::to_string(line_number) + ": bad " + name + " id '" + tok + "'");
    }
    ids.push_back(v);
  }
  return ids;
}

}  // namespace

std::string format_example(const AlignedExample& ex) {
  std::string out = "TEXT\t";
  append_ids(out, ex.text);
  out += "\tDUR\t";
  append_ids(out, ex.durations());
  out += "\tSPEECH\t";
  append_ids(out, ex.speech);
  return out;
}

AlignedExample parse_example(const std::string& line, const VocabLayout& vocab, std::size_t line_number) {
  const auto fields = split(line, '\t');
  if (fields.size() != 6 || fields[0] != "TEXT" || fields[2] != "DUR" || fields[4] != "SPEECH") {
    throw CorpusError("line " + std::to_string(line_number) + ": expected TEXT/DUR/SPEECH fields");
  }
  AlignedExample ex;
  ex.text = parse_ids(fields[1], "text", line_number);
  const auto lengths = parse_ids(fields[3], "duration", line_number);
  ex.speech = parse_ids(fields[5], "speech", line_number);
  int end = 0;
  for (int l : lengths) {
    end += l;
    ex.durations_end.push_back(end);
  }
  try {
    validate_example(ex, vocab);
  } catch (const CorpusError& e) {
    throw CorpusError("line " + std::to_string(line_number) + ": " + e.what());
  }
  return ex;
}

void save_corpus(const std::filesystem::path& path, const std::vector<AlignedExample>& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write corpus file " + path.string());
  for (const auto& ex : corpus) out << format_example(ex) << '\n';
  if (!out) throw CorpusError("write failed for " + path.string());
}

std::vector<AlignedExample> load_corpus(const std::filesystem::path& path, const VocabLayout& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file " + path.string());
  std::vector<AlignedExample> corpus;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    corpus.push_back(parse_example(line, vocab, number));
  }
  return corpus;
}

}  // namespace syncspeech
