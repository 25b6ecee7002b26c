#pragma once

// Attention masks over composed sequences. allow(i, j) means position i may
// attend to position j.
//
// Designed rule: TEXT, EOT and D rows are causal; a speech or masked row in
// span k sees everything up to the end of span k, which gives full attention
// inside its own span and causal attention across spans.

#include "syncspeech/sequence.hpp"
#include "syncspeech/tensor.hpp"

#include <iosfwd>
#include <span>
#include <string>

namespace syncspeech {

struct AttentionMask {
  BoolMatrix allow;

  std::size_t size() const { return allow.rows; }
  bool operator()(std::size_t i, std::size_t j) const { return allow(i, j); }
  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;
};

class MaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

AttentionMask build_designed_mask(std::span<const PositionRole> roles, std::span<const std::size_t> span_index,
                                  std::span<const SpanBounds> span_bounds);
AttentionMask build_designed_mask(const ComposedSequence& seq);

AttentionMask build_causal_mask(std::size_t length);

/// Pairwise reference for build_designed_mask: j <= i, or i and j are speech
/// positions of the same span.
AttentionMask oracle_mask(std::span<const PositionRole> roles, std::span<const std::size_t> span_index,
                          std::span<const SpanBounds> span_bounds);

/// Golden format: N, then N lines of '0'/'1'.
std::string format_mask(const AttentionMask& mask);
AttentionMask parse_mask(std::istream& in);

}  // namespace syncspeech
