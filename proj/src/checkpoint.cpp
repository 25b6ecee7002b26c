#include "syncspeech/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace syncspeech {

namespace {

constexpr char kMagic[8] = {'T', 'M', 'T', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    U u = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void values(std::span<const double> v) {
    for (double x : v) le(x);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void bytes(void* p, std::size_t n, const char* field) {
    need(n, field);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T le(const char* field) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    need(sizeof(U), field);
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<T>(u);
  }
  void values(std::span<double> v, const char* field) {
    need(v.size() * 8, field);
    for (auto& x : v) x = le<double>(field);
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n, const char* field) {
    if (pos_ + n > in_.size()) throw CheckpointError(std::string("checkpoint truncated while reading ") + field);
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.le(kCheckpointVersion);
  w.le(static_cast<std::int32_t>(ckpt.vocab.text_vocab));
  w.le(static_cast<std::int32_t>(ckpt.vocab.speech_vocab));
  w.le(static_cast<std::int32_t>(ckpt.vocab.max_duration));
  const auto& c = ckpt.params.config;
  for (std::size_t v : {c.num_layers, c.num_heads, c.model_dim, c.ffn_dim, c.total_vocab, c.speech_vocab,
                        c.num_duration_classes, c.max_seq_len}) {
    w.le(static_cast<std::uint64_t>(v));
  }
  w.le(c.rope_base);
  w.le(c.norm_eps);
  w.le(static_cast<std::uint8_t>(c.learned_positions ? 1 : 0));
  w.le(static_cast<std::uint64_t>(ckpt.step));
  const auto named = ckpt.params.named();
  w.le(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.le(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.le(static_cast<std::uint64_t>(d));
    w.values(t.data());
  }
  w.le(static_cast<std::uint8_t>(ckpt.optimizer ? 1 : 0));
  if (ckpt.optimizer) {
    const auto& opt = *ckpt.optimizer;
    if (opt.m.size() != named.size() || opt.v.size() != named.size()) {
      throw CheckpointError("optimizer state does not match the parameter table");
    }
    w.le(static_cast<std::uint64_t>(opt.step));
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (opt.m[i].size() != named[i].second.numel() || opt.v[i].size() != named[i].second.numel()) {
        throw CheckpointError("optimizer moments for " + named[i].first + " have the wrong size");
      }
      w.values(opt.m[i]);
      w.values(opt.v[i]);
    }
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[8];
  r.bytes(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("bad magic: not a checkpoint file");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.vocab.text_vocab = r.le<std::int32_t>("vocab.text_vocab");
  ckpt.vocab.speech_vocab = r.le<std::int32_t>("vocab.speech_vocab");
  ckpt.vocab.max_duration = r.le<std::int32_t>("vocab.max_duration");
  ModelConfig c;
  c.num_layers = r.le<std::uint64_t>("config.num_layers");
  c.num_heads = r.le<std::uint64_t>("config.num_heads");
  c.model_dim = r.le<std::uint64_t>("config.model_dim");
  c.ffn_dim = r.le<std::uint64_t>("config.ffn_dim");
  c.total_vocab = r.le<std::uint64_t>("config.total_vocab");
  c.speech_vocab = r.le<std::uint64_t>("config.speech_vocab");
  c.num_duration_classes = r.le<std::uint64_t>("config.num_duration_classes");
  c.max_seq_len = r.le<std::uint64_t>("config.max_seq_len");
  c.rope_base = r.le<double>("config.rope_base");
  c.norm_eps = r.le<double>("config.norm_eps");
  const auto learned = r.le<std::uint8_t>("config.learned_positions");
  if (learned > 1) throw CheckpointError("config.learned_positions is not 0/1");
  c.learned_positions = learned == 1;
  if (c.num_layers > 1024 || c.model_dim > (1u << 16) || c.ffn_dim > (1u << 18) || c.total_vocab > (1u << 24) ||
      c.speech_vocab > c.total_vocab || c.num_duration_classes > (1u << 16)) {
    throw CheckpointError("config: implausible model dimensions");
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("config: ") + e.what());
  }
  ckpt.step = r.le<std::uint64_t>("step");

  // Shape table expected for this config.
  ModelParams params = init_params(c, 0);
  auto named = params.named();
  const auto count = r.le<std::uint32_t>("tensor count");
  if (count != named.size()) {
    throw CheckpointError("tensor table has " + std::to_string(count) + " entries, config expects " +
                          std::to_string(named.size()));
  }
  for (auto& [expected_name, t] : named) {
    const auto len = r.le<std::uint32_t>("tensor name length");
    if (len > 256) throw CheckpointError("tensor name length " + std::to_string(len) + " is implausible");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "tensor name");
    if (name != expected_name) throw CheckpointError("tensor table: expected " + expected_name + ", found " + name);
    const auto rank = r.le<std::uint32_t>("tensor rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank && i < 3; ++i) shape.push_back(r.le<std::uint64_t>("tensor dims"));
    if (shape != t.shape()) {
      throw CheckpointError("tensor " + name + ": shape " + shape_string(shape) + " does not match " +
                            shape_string(t.shape()));
    }
    r.values(t.mutable_data(), name.c_str());
  }
  const auto has_opt = r.le<std::uint8_t>("optimizer flag");
  if (has_opt > 1) throw CheckpointError("optimizer flag is not 0/1");
  if (has_opt == 1) {
    AdamState opt;
    opt.step = r.le<std::uint64_t>("optimizer step");
    for (auto& [name, t] : named) {
      opt.m.emplace_back(t.numel());
      opt.v.emplace_back(t.numel());
      r.values(opt.m.back(), "optimizer first moment");
      r.values(opt.v.back(), "optimizer second moment");
    }
    ckpt.optimizer = std::move(opt);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  ckpt.params = std::move(params);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace syncspeech
