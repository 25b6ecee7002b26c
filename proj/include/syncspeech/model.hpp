#pragma once

// Llama-style temporal masked transformer: shared embedding table over the
// whole vocabulary, pre-norm residual blocks with rotary attention and a
// gated SiLU feed-forward, and two linear heads reading the final hidden
// state (speech tokens and duration classes).

#include "syncspeech/corpus.hpp"
#include "syncspeech/masks.hpp"
#include "syncspeech/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace syncspeech {

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t model_dim = 128;
  std::size_t ffn_dim = 256;
  std::size_t total_vocab = 100;
  std::size_t speech_vocab = 64;
  std::size_t num_duration_classes = 33;
  std::size_t max_seq_len = 512;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  // Learned absolute position table added to the input embeddings, on top of
  // rotary attention. Rotary alone gives no absolute position, which the toy
  // duration rule depends on.
  bool learned_positions = true;

  static ModelConfig for_vocab(const VocabLayout& vocab);
  std::size_t head_dim() const { return model_dim / num_heads; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Tensor attn_norm, wq, wk, wv, wo;
  Tensor ffn_norm, w_gate, w_up, w_down;
};

struct ModelParams {
  ModelConfig config;
  Tensor embedding;
  Tensor positions;  // max_seq_len x model_dim, empty unless learned_positions
  std::vector<LayerParams> layers;
  Tensor final_norm;
  Tensor speech_head;
  Tensor duration_head;

  /// Every learnable tensor with a stable name; handles share storage.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
  void zero_grad();
};

std::size_t count_parameters(const ModelConfig& config);

/// Normal(0, 0.02) weights, output projections scaled by 1/sqrt(2 * layers),
/// norm scales at 1.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Deep copy with fresh storage.
ModelParams clone_params(const ModelParams& params);

struct SequenceInput {
  std::span<const int> ids;
  const AttentionMask* mask = nullptr;
};

struct BatchHidden {
  Tensor hidden;                     // final-normed states, sequences stacked by rows
  std::vector<std::size_t> offsets;  // first row of each sequence
};

/// Runs the trunk over several sequences at once. Linear layers see all rows
/// stacked; attention is computed per sequence with its own mask.
BatchHidden forward_hidden(Tape& tape, const ModelParams& params, std::span<const SequenceInput> batch);

struct Logits {
  Tensor speech;    // N x V_s
  Tensor duration;  // N x num_duration_classes
};

Logits apply_heads(Tape& tape, const ModelParams& params, const Tensor& hidden);

/// Full logits for one sequence, no gradient recording.
Logits forward(const ModelParams& params, std::span<const int> ids, const AttentionMask& mask);

/// Dense forward FLOP estimate (multiply-add counted as 2).
double count_flops(const ModelConfig& config, std::size_t seq_len);

}  // namespace syncspeech
