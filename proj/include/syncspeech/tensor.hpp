#pragma once

// Dense double-precision tensors with a tape-based reverse-mode autodiff.
//
// Tensors are rank 0, 1 or 2. Every op treats its operands as matrices:
// rank 0 is 1x1 and rank 1 of size n is a 1 x n row. Ops are free functions
// taking the Tape that records them; nothing is recorded when the tape is not
// recording or when no input requires a gradient.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace syncspeech {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major boolean matrix. Used for attention keep-masks.
struct BoolMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> values;

  BoolMatrix() = default;
  BoolMatrix(std::size_t r, std::size_t c, bool fill = false)
      : rows(r), cols(c), values(r * c, fill ? 1 : 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return values[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { values[r * cols + c] = v ? 1 : 0; }
  friend bool operator==(const BoolMatrix&, const BoolMatrix&) = default;
};

class Tensor {
 public:
  // Tensor is a shared handle: copies alias the same storage, and const
  // handles may still write values and grads.
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() const { return impl_->data; }
  double at(std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) const { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  /// Grad accumulator, allocated (zeroed) on first access.
  std::span<double> mutable_grad() const;
  void zero_grad() const;
  void drop_grad() const { impl_->grad.clear(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class OpKind {
  matmul,
  add,
  mul,
  scale,
  softmax_rows,
  rmsnorm,
  silu,
  embedding_lookup,
  concat_rows,
  concat_cols,
  slice,
  gather_rows,
  rope,
  cross_entropy_rows,
  masked_fill,
  sum,
};

const char* op_name(OpKind kind);

class Tape {
 public:
  struct Entry {
    OpKind kind;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void set_recording(bool v) { recording_ = v; }

  /// True when an op over `inputs` must be recorded.
  bool wants(std::initializer_list<const Tensor*> inputs) const;
  bool wants(std::span<const Tensor> inputs) const;

  void record(OpKind kind, std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in
  /// reverse order. Intermediate grads are reset first, so calling this twice
  /// doubles the grads of leaf tensors and nothing else.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  bool recording_;
  std::vector<Entry> entries_;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

// ---- ops -------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b = false);
/// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor softmax_rows(Tape& tape, const Tensor& a);
/// x / sqrt(mean(x^2) + eps) * weight, per row.
Tensor rmsnorm(Tape& tape, const Tensor& x, const Tensor& weight, double eps);
Tensor silu(Tape& tape, const Tensor& a);
Tensor embedding_lookup(Tape& tape, const Tensor& table, std::span<const int> ids);
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);
Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
Tensor slice(Tape& tape, const Tensor& a, std::size_t row0, std::size_t nrows, std::size_t col0,
             std::size_t ncols);
Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> rows);
/// Rotary position encoding over `num_heads` column blocks, rotating
/// interleaved pairs (2i, 2i+1) by position * base^(-2i/head_dim).
Tensor rope(Tape& tape, const Tensor& x, std::span<const std::size_t> positions,
            std::size_t num_heads, double base);
/// Mean over rows of -log softmax(logits)[target]. Returns a scalar.
Tensor cross_entropy_rows(Tape& tape, const Tensor& logits, std::span<const int> targets);
/// Entries where keep(i, j) is false are replaced by `fill`.
Tensor masked_fill(Tape& tape, const Tensor& a, const BoolMatrix& keep, double fill);
Tensor sum(Tape& tape, const Tensor& a);

/// Attribute bag for the generic entry point.
struct OpAttrs {
  bool transpose_b = false;
  double factor = 1.0;
  double eps = 1e-6;
  double fill = -1e30;
  double rope_base = 10000.0;
  std::size_t num_heads = 1;
  std::size_t row0 = 0, nrows = 0, col0 = 0, ncols = 0;
  std::vector<int> ids;
  std::vector<std::size_t> indices;
  const BoolMatrix* keep = nullptr;
};

/// Dispatches to the op named by `kind`.
Tensor op_forward(Tape& tape, OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs);

// ---- gradient checking -------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error.
  double abs_floor = 1e-6;
  /// Elements checked per parameter; 0 checks every element.
  std::size_t samples_per_param = 0;
  /// Total elements checked across all parameters; 0 means no cap.
  std::size_t total_samples = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::vector<double> max_rel_error;  // one per parameter
  double worst = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

using ScalarFn = std::function<Tensor(Tape&)>;

/// Compares analytic grads of `f` against central differences.
/// rel = |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
GradCheckReport grad_check(const ScalarFn& f, std::span<const Tensor> params, double tolerance,
                           const GradCheckOptions& options = {});

}  // namespace syncspeech
