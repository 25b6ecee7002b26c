#include "syncspeech/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace syncspeech {

namespace {

constexpr double kMaskFill = -1e30;

Tensor normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor ones(std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0), true); }

Tensor copy(const Tensor& t) {
  return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), t.requires_grad());
}

}  // namespace

ModelConfig ModelConfig::for_vocab(const VocabLayout& vocab) {
  ModelConfig c;
  c.total_vocab = static_cast<std::size_t>(vocab.total_vocab());
  c.speech_vocab = static_cast<std::size_t>(vocab.speech_vocab);
  c.num_duration_classes = static_cast<std::size_t>(vocab.num_duration_classes());
  return c;
}

void ModelConfig::validate() const {
  if (num_heads == 0 || model_dim % num_heads != 0) throw std::invalid_argument("model_dim must be divisible by num_heads");
  if (head_dim() % 2 != 0) throw std::invalid_argument("head dimension must be even for rotary encoding");
  if (num_duration_classes < 2) throw std::invalid_argument("num_duration_classes must be >= 2");
  if (total_vocab == 0 || speech_vocab == 0 || ffn_dim == 0 || max_seq_len == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  if (config.learned_positions) out.emplace_back("positions", positions);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto p = "layers." + std::to_string(l) + ".";
    const auto& L = layers[l];
    out.emplace_back(p + "attn_norm", L.attn_norm);
    out.emplace_back(p + "wq", L.wq);
    out.emplace_back(p + "wk", L.wk);
    out.emplace_back(p + "wv", L.wv);
    out.emplace_back(p + "wo", L.wo);
    out.emplace_back(p + "ffn_norm", L.ffn_norm);
    out.emplace_back(p + "w_gate", L.w_gate);
    out.emplace_back(p + "w_up", L.w_up);
    out.emplace_back(p + "w_down", L.w_down);
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("speech_head", speech_head);
  out.emplace_back("duration_head", duration_head);
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void ModelParams::zero_grad() {
  for (auto& t : tensors()) t.zero_grad();
}

std::size_t count_parameters(const ModelConfig& c) {
  const std::size_t d = c.model_dim, f = c.ffn_dim;
  const std::size_t per_layer = 2 * d + 4 * d * d + 3 * d * f;
  const std::size_t table = c.learned_positions ? c.max_seq_len * d : 0;
  return c.total_vocab * d + table + c.num_layers * per_layer + d + d * c.speech_vocab + d * c.num_duration_classes;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.model_dim, f = config.ffn_dim;
  const double std = 0.02;
  const double out_std = std / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(config.num_layers, 1)));
  ModelParams p;
  p.config = config;
  p.embedding = normal({config.total_vocab, d}, std, rng);
  if (config.learned_positions) p.positions = normal({config.max_seq_len, d}, std, rng);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerParams L;
    L.attn_norm = ones(d);
    L.wq = normal({d, d}, std, rng);
    L.wk = normal({d, d}, std, rng);
    L.wv = normal({d, d}, std, rng);
    L.wo = normal({d, d}, out_std, rng);
    L.ffn_norm = ones(d);
    L.w_gate = normal({d, f}, std, rng);
    L.w_up = normal({d, f}, std, rng);
    L.w_down = normal({f, d}, out_std, rng);
    p.layers.push_back(std::move(L));
  }
  p.final_norm = ones(d);
  p.speech_head = normal({d, config.speech_vocab}, std, rng);
  p.duration_head = normal({d, config.num_duration_classes}, std, rng);
  return p;
}

ModelParams clone_params(const ModelParams& src) {
  ModelParams p;
  p.config = src.config;
  p.embedding = copy(src.embedding);
  if (src.config.learned_positions) p.positions = copy(src.positions);
  for (const auto& L : src.layers) {
    p.layers.push_back({copy(L.attn_norm), copy(L.wq), copy(L.wk), copy(L.wv), copy(L.wo), copy(L.ffn_norm),
                        copy(L.w_gate), copy(L.w_up), copy(L.w_down)});
  }
  p.final_norm = copy(src.final_norm);
  p.speech_head = copy(src.speech_head);
  p.duration_head = copy(src.duration_head);
  return p;
}

BatchHidden forward_hidden(Tape& tape, const ModelParams& params, std::span<const SequenceInput> batch) {
  const auto& cfg = params.config;
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  BatchHidden out;
  std::vector<int> ids;
  std::vector<std::size_t> positions;
  for (const auto& s : batch) {
    if (s.mask == nullptr) throw std::invalid_argument("forward: missing attention mask");
    if (s.ids.empty()) throw std::invalid_argument("forward: empty sequence");
    if (s.ids.size() > cfg.max_seq_len) {
      throw std::length_error("forward: sequence length " + std::to_string(s.ids.size()) + " exceeds max_seq_len " +
                              std::to_string(cfg.max_seq_len));
    }
    if (s.mask->size() != s.ids.size()) {
      throw std::invalid_argument("forward: mask is " + std::to_string(s.mask->size()) + "x" +
                                  std::to_string(s.mask->size()) + " for a sequence of " + std::to_string(s.ids.size()));
    }
    out.offsets.push_back(ids.size());
    ids.insert(ids.end(), s.ids.begin(), s.ids.end());
    for (std::size_t p = 0; p < s.ids.size(); ++p) positions.push_back(p);
  }

  const std::size_t H = cfg.num_heads, dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor x = embedding_lookup(tape, params.embedding, ids);
  if (cfg.learned_positions) {
    std::vector<int> pos_ids(positions.begin(), positions.end());
    x = add(tape, x, embedding_lookup(tape, params.positions, pos_ids));
  }
  for (const auto& L : params.layers) {
    Tensor h = rmsnorm(tape, x, L.attn_norm, cfg.norm_eps);
    Tensor q = rope(tape, matmul(tape, h, L.wq), positions, H, cfg.rope_base);
    Tensor k = rope(tape, matmul(tape, h, L.wk), positions, H, cfg.rope_base);
    Tensor v = matmul(tape, h, L.wv);
    std::vector<Tensor> per_sequence;
    per_sequence.reserve(batch.size());
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const std::size_t r0 = out.offsets[s], n = batch[s].ids.size();
      std::vector<Tensor> heads;
      heads.reserve(H);
      for (std::size_t head = 0; head < H; ++head) {
        Tensor qh = slice(tape, q, r0, n, head * dh, dh);
        Tensor kh = slice(tape, k, r0, n, head * dh, dh);
        Tensor vh = slice(tape, v, r0, n, head * dh, dh);
        Tensor scores = scale(tape, matmul(tape, qh, kh, true), inv_sqrt);
        Tensor weights = softmax_rows(tape, masked_fill(tape, scores, batch[s].mask->allow, kMaskFill));
        heads.push_back(matmul(tape, weights, vh));
      }
      per_sequence.push_back(H == 1 ? heads.front() : concat_cols(tape, heads));
    }
    Tensor attn = per_sequence.size() == 1 ? per_sequence.front() : concat_rows(tape, per_sequence);
    x = add(tape, x, matmul(tape, attn, L.wo));
    Tensor h2 = rmsnorm(tape, x, L.ffn_norm, cfg.norm_eps);
    Tensor gated = mul(tape, silu(tape, matmul(tape, h2, L.w_gate)), matmul(tape, h2, L.w_up));
    x = add(tape, x, matmul(tape, gated, L.w_down));
  }
  out.hidden = rmsnorm(tape, x, params.final_norm, cfg.norm_eps);
  return out;
}

Logits apply_heads(Tape& tape, const ModelParams& params, const Tensor& hidden) {
  return Logits{matmul(tape, hidden, params.speech_head), matmul(tape, hidden, params.duration_head)};
}

Logits forward(const ModelParams& params, std::span<const int> ids, const AttentionMask& mask) {
  Tape tape(false);
  SequenceInput input{ids, &mask};
  auto hidden = forward_hidden(tape, params, std::span<const SequenceInput>(&input, 1));
  return apply_heads(tape, params, hidden.hidden);
}

double count_flops(const ModelConfig& c, std::size_t seq_len) {
  const double N = static_cast<double>(seq_len), d = static_cast<double>(c.model_dim),
               f = static_cast<double>(c.ffn_dim);
  const double projections = 2.0 * N * 4.0 * d * d;
  const double attention = 2.0 * 2.0 * N * N * d;
  const double ffn = 2.0 * N * 3.0 * d * f;
  const double heads = 2.0 * N * d * static_cast<double>(c.speech_vocab + c.num_duration_classes);
  return static_cast<double>(c.num_layers) * (projections + attention + ffn) + heads;
}

}  // namespace syncspeech
