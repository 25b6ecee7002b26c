#include "syncspeech/masks.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace syncspeech;

namespace {

VocabLayout V;

AttentionMask pairwise(const ComposedSequence& s) {
  AttentionMask m;
  m.allow = BoolMatrix(s.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) m.allow.set(i, j, oracle::allowed(s, i, j));
  return m;
}

AlignedExample three_token_example() {
  AlignedExample ex;
  ex.text = {3, 4, 5};
  ex.speech.assign(14, 0);
  ex.durations_end = {7, 12, 14};
  return ex;
}

}  // namespace

TEST_CASE("designed mask matches the golden three-token example") {
  auto seq = build_finetune_sequence(three_token_example(), 2, 1, V).sequence;
  REQUIRE(seq.size() == 18);
  std::ifstream in(std::string(SYNCSPEECH_TEST_DATA_DIR) + "/golden/three_token_mask.txt");
  REQUIRE(in.good());
  const auto golden = parse_mask(in);
  CHECK(build_designed_mask(seq) == golden);
  CHECK(format_mask(golden).substr(0, 3) == "18\n");
}

TEST_CASE("designed mask row semantics") {
  auto seq = build_finetune_sequence(three_token_example(), 2, 1, V).sequence;
  auto m = build_designed_mask(seq);
  // first position of the masked span sees the whole span but not the trailing D
  CHECK(m(12, 16));
  CHECK_FALSE(m(12, 17));
  // D before span 2 is causal
  CHECK_FALSE(m(11, 12));
  // history span rows see their own span only up to its end
  CHECK(m(4, 10));
  CHECK_FALSE(m(4, 11));
  // text rows are causal
  CHECK_FALSE(m(0, 1));
  CHECK(m(17, 0));
}

TEST_CASE("designed mask equals the pairwise oracle on random sequences") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    auto ex = oracle::random_example(rng, V, 8, 6);
    const std::size_t L = ex.num_text();
    ComposedSequence seq;
    switch (trial % 3) {
      case 0: {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, L)(rng);
        seq = build_finetune_sequence(ex, n, trial % 2, V).sequence;
        break;
      }
      case 1: seq = build_pretrain_sequence(ex, rng, V).sequence; break;
      default: {
        seq = build_prompt_prefix(ex, V);
        append_text(seq, 1, V);
        append_placeholder(seq, V);
        pad_seq(seq, 3, V);
      }
    }
    const auto designed = build_designed_mask(seq);
    REQUIRE(designed == oracle_mask(seq.roles, seq.span_index, seq.span_bounds));
    REQUIRE(designed == pairwise(seq));
  }
}

TEST_CASE("causal mask") {
  auto m = build_causal_mask(4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(m(i, j) == (j <= i));
  CHECK_THROWS_AS(build_causal_mask(0), MaskError);
}

TEST_CASE("mask metadata validation") {
  auto seq = build_finetune_sequence(three_token_example(), 2, 1, V).sequence;
  auto idx = seq.span_index;
  idx.pop_back();
  CHECK_THROWS_AS(build_designed_mask(seq.roles, idx, seq.span_bounds), MaskError);
  auto bounds = seq.span_bounds;
  bounds[0].end = 999;
  CHECK_THROWS_AS(build_designed_mask(seq.roles, seq.span_index, bounds), MaskError);
  auto bad_idx = seq.span_index;
  bad_idx[5] = 7;
  CHECK_THROWS_AS(build_designed_mask(seq.roles, bad_idx, seq.span_bounds), MaskError);
}

TEST_CASE("mask text format round trip and errors") {
  auto m = build_designed_mask(build_finetune_sequence(three_token_example(), 3, 0, V).sequence);
  std::istringstream in(format_mask(m));
  CHECK(parse_mask(in) == m);
  std::istringstream bad("3\n100\n11\n111\n");
  CHECK_THROWS_AS(parse_mask(bad), MaskError);
  std::istringstream junk("2\n1x\n11\n");
  CHECK_THROWS_AS(parse_mask(junk), MaskError);
}
