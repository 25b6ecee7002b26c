#include "syncspeech/masks.hpp"

#include <algorithm>
#include <istream>
#include <sstream>

namespace syncspeech {

namespace {

void check_metadata(std::span<const PositionRole> roles, std::span<const std::size_t> span_index,
                    std::span<const SpanBounds> span_bounds) {
  const std::size_t n = roles.size();
  if (span_index.size() != n) throw MaskError("roles and span_index differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_speech_role(roles[i])) continue;
    const std::size_t k = span_index[i];
    if (k == 0 || k > span_bounds.size()) {
      throw MaskError("speech position " + std::to_string(i) + " has no span (index " + std::to_string(k) + ")");
    }
    const auto& b = span_bounds[k - 1];
    if (i < b.begin || i >= b.end || b.end > n) {
      throw MaskError("position " + std::to_string(i) + " lies outside the bounds of span " + std::to_string(k));
    }
  }
}

}  // namespace

AttentionMask build_designed_mask(std::span<const PositionRole> roles, std::span<const std::size_t> span_index,
                                  std::span<const SpanBounds> span_bounds) {
  check_metadata(roles, span_index, span_bounds);
  const std::size_t n = roles.size();
  AttentionMask mask{BoolMatrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t visible = is_speech_role(roles[i]) ? span_bounds[span_index[i] - 1].end : i + 1;
    auto row = mask.allow.values.begin() + static_cast<std::ptrdiff_t>(i * n);
    std::fill(row, row + static_cast<std::ptrdiff_t>(visible), std::uint8_t{1});
  }
  return mask;
}

AttentionMask build_designed_mask(const ComposedSequence& seq) {
  return build_designed_mask(seq.roles, seq.span_index, seq.span_bounds);
}

AttentionMask build_causal_mask(std::size_t length) {
  if (length == 0) throw MaskError("causal mask needs length >= 1");
  AttentionMask mask{BoolMatrix(length, length)};
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask.allow.set(i, j, true);
  return mask;
}

AttentionMask oracle_mask(std::span<const PositionRole> roles, std::span<const std::size_t> span_index,
                          std::span<const SpanBounds> span_bounds) {
  check_metadata(roles, span_index, span_bounds);
  const std::size_t n = roles.size();
  AttentionMask mask{BoolMatrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool same_span = is_speech_role(roles[i]) && is_speech_role(roles[j]) && span_index[i] == span_index[j];
      mask.allow.set(i, j, j <= i || same_span);
    }
  }
  return mask;
}

std::string format_mask(const AttentionMask& mask) {
  std::ostringstream os;
  const std::size_t n = mask.size();
  os << n << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) os << (mask(i, j) ? '1' : '0');
    os << '\n';
  }
  return os.str();
}

AttentionMask parse_mask(std::istream& in) {
  std::size_t n = 0;
  if (!(in >> n)) throw MaskError("mask file: missing size line");
  AttentionMask mask{BoolMatrix(n, n)};
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line) || line.size() != n) {
      throw MaskError("mask file: row " + std::to_string(i) + " malformed");
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (line[j] != '0' && line[j] != '1') throw MaskError("mask file: bad character in row " + std::to_string(i));
      mask.allow.set(i, j, line[j] == '1');
    }
  }
  return mask;
}

}  // namespace syncspeech
