#include "syncspeech/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace syncspeech {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
MutMap view_mut(const Tensor& t) {
  return MutMap(t.mutable_data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
ConstMap grad_view(const Tensor& t) {
  return ConstMap(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
MutMap grad_mut(const Tensor& t) {
  return MutMap(t.mutable_grad().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

std::string dims(const Tensor& t) { return shape_string(t.shape()); }

Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor::zeros({rows, cols}); }

// Output of a recorded op carries requires_grad so downstream ops record too.
void mark(const Tensor& out) { out.set_requires_grad(true); }

}  // namespace

// ---- Tensor -----------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.size() > 2) throw ShapeError("tensor rank must be <= 2, got " + shape_string(shape));
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_string(shape));
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, std::vector<double>{value}, requires_grad);
}

std::size_t Tensor::rows() const { return rank() == 2 ? impl_->shape[0] : 1; }

std::size_t Tensor::cols() const {
  switch (rank()) {
    case 0:
      return 1;
    case 1:
      return impl_->shape[0];
    default:
      return impl_->shape[1];
  }
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::rmsnorm: return "rmsnorm";
    case OpKind::silu: return "silu";
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::slice: return "slice";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::rope: return "rope";
    case OpKind::cross_entropy_rows: return "cross_entropy_rows";
    case OpKind::masked_fill: return "masked_fill";
    case OpKind::sum: return "sum";
  }
  return "unknown";
}

// ---- Tape -------------------------------------------------------------------

bool Tape::wants(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

bool Tape::wants(std::span<const Tensor> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

void Tape::record(OpKind kind, std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
  entries_.push_back(Entry{kind, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + dims(loss));
  for (auto& e : entries_) e.output.drop_grad();
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

// ---- ops --------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b) {
  const std::size_t inner_b = transpose_b ? b.cols() : b.rows();
  const std::size_t out_cols = transpose_b ? b.rows() : b.cols();
  if (a.cols() != inner_b) {
    shape_fail(OpKind::matmul, "inner dimensions differ: " + dims(a) + (transpose_b ? " x " : " x ") +
                                   dims(b) + (transpose_b ? "^T" : ""));
  }
  Tensor out = matrix(a.rows(), out_cols);
  if (transpose_b) {
    view_mut(out).noalias() = view(a) * view(b).transpose();
  } else {
    view_mut(out).noalias() = view(a) * view(b);
  }
  if (tape.wants({&a, &b})) {
    mark(out);
    tape.record(OpKind::matmul, {a, b}, out, [a, b, out, transpose_b]() mutable {
      auto g = grad_view(out);
      if (a.requires_grad()) {
        if (transpose_b) grad_mut(a).noalias() += g * view(b);
        else grad_mut(a).noalias() += g * view(b).transpose();
      }
      if (b.requires_grad()) {
        if (transpose_b) grad_mut(b).noalias() += g.transpose() * view(a);
        else grad_mut(b).noalias() += view(a).transpose() * g;
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool row_bias = !same && b.rows() == 1 && b.cols() == a.cols();
  if (!same && !row_bias) shape_fail(OpKind::add, "cannot add " + dims(a) + " and " + dims(b));
  Tensor out(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
  if (same) {
    view_mut(out) += view(b);
  } else {
    view_mut(out).rowwise() += view(b).row(0);
  }
  if (tape.wants({&a, &b})) {
    mark(out);
    tape.record(OpKind::add, {a, b}, out, [a, b, out, same]() mutable {
      auto g = grad_view(out);
      if (a.requires_grad()) grad_mut(a) += g;
      if (b.requires_grad()) {
        if (same) grad_mut(b) += g;
        else grad_mut(b).row(0) += g.colwise().sum();
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_fail(OpKind::mul, "operands differ: " + dims(a) + " vs " + dims(b));
  }
  Tensor out = Tensor::zeros(a.shape());
  view_mut(out) = view(a).cwiseProduct(view(b));
  if (tape.wants({&a, &b})) {
    mark(out);
    tape.record(OpKind::mul, {a, b}, out, [a, b, out]() mutable {
      auto g = grad_view(out);
      if (a.requires_grad()) grad_mut(a) += g.cwiseProduct(view(b));
      if (b.requires_grad()) grad_mut(b) += g.cwiseProduct(view(a));
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  Tensor out = Tensor::zeros(a.shape());
  view_mut(out) = view(a) * factor;
  if (tape.wants({&a})) {
    mark(out);
    tape.record(OpKind::scale, {a}, out, [a, out, factor]() mutable { grad_mut(a) += grad_view(out) * factor; });
  }
  return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.rows(), m = a.cols();
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * m;
    double* yr = y.data() + r * m;
    const double mx = *std::max_element(xr, xr + m);
    double total = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      total += yr[c];
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < m; ++c) yr[c] *= inv;
  }
  if (tape.wants({&a})) {
    mark(out);
    tape.record(OpKind::softmax_rows, {a}, out, [a, out]() mutable {
      auto y = view(out);
      auto g = grad_view(out);
      Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
      grad_mut(a) += y.cwiseProduct(g.colwise() - dot);
    });
  }
  return out;
}

Tensor rmsnorm(Tape& tape, const Tensor& x, const Tensor& weight, double eps) {
  if (weight.numel() != x.cols()) {
    shape_fail(OpKind::rmsnorm, "weight " + dims(weight) + " does not match row width of " + dims(x));
  }
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> inv_rms(n);
  auto xd = x.data();
  auto w = weight.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < m; ++c) ss += xd[r * m + c] * xd[r * m + c];
    inv_rms[r] = 1.0 / std::sqrt(ss / static_cast<double>(m) + eps);
    for (std::size_t c = 0; c < m; ++c) y[r * m + c] = xd[r * m + c] * inv_rms[r] * w[c];
  }
  if (tape.wants({&x, &weight})) {
    mark(out);
    tape.record(OpKind::rmsnorm, {x, weight}, out, [x, weight, out, inv_rms = std::move(inv_rms)]() mutable {
      const std::size_t n = x.rows(), m = x.cols();
      auto xd = x.data();
      auto w = weight.data();
      auto g = out.grad();
      if (weight.requires_grad()) {
        auto gw = weight.mutable_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < m; ++c) gw[c] += g[r * m + c] * xd[r * m + c] * inv_rms[r];
      }
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t r = 0; r < n; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < m; ++c) dot += g[r * m + c] * w[c] * xd[r * m + c];
          const double k = inv_rms[r] * inv_rms[r] * inv_rms[r] * dot / static_cast<double>(m);
          for (std::size_t c = 0; c < m; ++c) {
            gx[r * m + c] += inv_rms[r] * g[r * m + c] * w[c] - k * xd[r * m + c];
          }
        }
      }
    });
  }
  return out;
}

Tensor silu(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / (1.0 + std::exp(-x[i]));
  if (tape.wants({&a})) {
    mark(out);
    tape.record(OpKind::silu, {a}, out, [a, out]() mutable {
      auto x = a.data();
      auto g = out.grad();
      auto gx = a.mutable_grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        gx[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    });
  }
  return out;
}

Tensor embedding_lookup(Tape& tape, const Tensor& table, std::span<const int> ids) {
  const std::size_t vocab = table.rows(), width = table.cols();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      shape_fail(OpKind::embedding_lookup,
                 "id " + std::to_string(id) + " outside table " + dims(table));
    }
  }
  Tensor out = matrix(ids.size(), width);
  auto t = table.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(t.data() + static_cast<std::size_t>(ids[r]) * width, width, y.data() + r * width);
  }
  if (tape.wants({&table})) {
    mark(out);
    std::vector<int> saved(ids.begin(), ids.end());
    tape.record(OpKind::embedding_lookup, {table}, out, [table, out, saved = std::move(saved)]() mutable {
      const std::size_t width = table.cols();
      auto g = out.grad();
      auto gt = table.mutable_grad();
      for (std::size_t r = 0; r < saved.size(); ++r) {
        double* dst = gt.data() + static_cast<std::size_t>(saved[r]) * width;
        for (std::size_t c = 0; c < width; ++c) dst[c] += g[r * width + c];
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) shape_fail(OpKind::concat_rows, "no inputs");
  const std::size_t width = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != width) shape_fail(OpKind::concat_rows, "column count " + dims(p) + " vs " + std::to_string(width));
    total += p.rows();
  }
  Tensor out = matrix(total, width);
  auto y = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
  }
  if (tape.wants(parts)) {
    mark(out);
    std::vector<Tensor> saved(parts.begin(), parts.end());
    tape.record(OpKind::concat_rows, saved, out, [saved, out]() mutable {
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : saved) {
        if (p.requires_grad()) {
          auto gp = p.mutable_grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) shape_fail(OpKind::concat_cols, "no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_fail(OpKind::concat_cols, "row count " + dims(p) + " vs " + std::to_string(rows));
    total += p.cols();
  }
  Tensor out = matrix(rows, total);
  {
    auto y = view_mut(out);
    Eigen::Index c0 = 0;
    for (const auto& p : parts) {
      y.middleCols(c0, static_cast<Eigen::Index>(p.cols())) = view(p);
      c0 += static_cast<Eigen::Index>(p.cols());
    }
  }
  if (tape.wants(parts)) {
    mark(out);
    std::vector<Tensor> saved(parts.begin(), parts.end());
    tape.record(OpKind::concat_cols, saved, out, [saved, out]() mutable {
      auto g = grad_view(out);
      Eigen::Index c0 = 0;
      for (auto& p : saved) {
        const auto w = static_cast<Eigen::Index>(p.cols());
        if (p.requires_grad()) grad_mut(p) += g.middleCols(c0, w);
        c0 += w;
      }
    });
  }
  return out;
}

Tensor slice(Tape& tape, const Tensor& a, std::size_t row0, std::size_t nrows, std::size_t col0,
             std::size_t ncols) {
  if (row0 + nrows > a.rows() || col0 + ncols > a.cols()) {
    shape_fail(OpKind::slice, "block rows " + std::to_string(row0) + "+" + std::to_string(nrows) + " cols " +
                                  std::to_string(col0) + "+" + std::to_string(ncols) + " outside " + dims(a));
  }
  Tensor out = matrix(nrows, ncols);
  const auto r0 = static_cast<Eigen::Index>(row0), c0 = static_cast<Eigen::Index>(col0);
  const auto nr = static_cast<Eigen::Index>(nrows), nc = static_cast<Eigen::Index>(ncols);
  view_mut(out) = view(a).block(r0, c0, nr, nc);
  if (tape.wants({&a})) {
    mark(out);
    tape.record(OpKind::slice, {a}, out, [a, out, r0, c0, nr, nc]() mutable {
      grad_mut(a).block(r0, c0, nr, nc) += grad_view(out);
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> rows) {
  const std::size_t width = a.cols();
  for (auto r : rows) {
    if (r >= a.rows()) shape_fail(OpKind::gather_rows, "row " + std::to_string(r) + " outside " + dims(a));
  }
  Tensor out = matrix(rows.size(), width);
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.data() + rows[i] * width, width, y.data() + i * width);
  if (tape.wants({&a})) {
    mark(out);
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    tape.record(OpKind::gather_rows, {a}, out, [a, out, saved = std::move(saved)]() mutable {
      const std::size_t width = a.cols();
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) ga[saved[i] * width + c] += g[i * width + c];
    });
  }
  return out;
}

Tensor rope(Tape& tape, const Tensor& x, std::span<const std::size_t> positions, std::size_t num_heads,
            double base) {
  const std::size_t n = x.rows(), width = x.cols();
  if (positions.size() != n) {
    shape_fail(OpKind::rope, std::to_string(positions.size()) + " positions for " + dims(x));
  }
  if (num_heads == 0 || width % num_heads != 0 || (width / num_heads) % 2 != 0) {
    shape_fail(OpKind::rope, "width of " + dims(x) + " not split into even heads of " + std::to_string(num_heads));
  }
  const std::size_t head_dim = width / num_heads, half = head_dim / 2;
  std::vector<double> cs(n * half), sn(n * half);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(positions[r]) * freq;
      cs[r * half + i] = std::cos(angle);
      sn[r * half + i] = std::sin(angle);
    }
  }
  Tensor out = matrix(n, width);
  auto xd = x.data();
  auto y = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t h = 0; h < num_heads; ++h) {
      for (std::size_t i = 0; i < half; ++i) {
        const std::size_t k = r * width + h * head_dim + 2 * i;
        const double c = cs[r * half + i], s = sn[r * half + i];
        y[k] = xd[k] * c - xd[k + 1] * s;
        y[k + 1] = xd[k] * s + xd[k + 1] * c;
      }
    }
  }
  if (tape.wants({&x})) {
    mark(out);
    tape.record(OpKind::rope, {x}, out,
                [x, out, cs = std::move(cs), sn = std::move(sn), num_heads, half, head_dim]() mutable {
                  const std::size_t n = x.rows(), width = x.cols();
                  auto g = out.grad();
                  auto gx = x.mutable_grad();
                  for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t h = 0; h < num_heads; ++h)
                      for (std::size_t i = 0; i < half; ++i) {
                        const std::size_t k = r * width + h * head_dim + 2 * i;
                        const double c = cs[r * half + i], s = sn[r * half + i];
                        gx[k] += g[k] * c + g[k + 1] * s;
                        gx[k + 1] += -g[k] * s + g[k + 1] * c;
                      }
                });
  }
  return out;
}

Tensor cross_entropy_rows(Tape& tape, const Tensor& logits, std::span<const int> targets) {
  const std::size_t n = logits.rows(), m = logits.cols();
  if (targets.size() != n || n == 0) {
    shape_fail(OpKind::cross_entropy_rows, std::to_string(targets.size()) + " targets for " + dims(logits));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= m) {
      shape_fail(OpKind::cross_entropy_rows, "target " + std::to_string(t) + " outside " + std::to_string(m) + " classes");
    }
  }
  auto z = logits.data();
  std::vector<double> probs(n * m);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = z.data() + r * m;
    const double mx = *std::max_element(zr, zr + m);
    double se = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      probs[r * m + c] = std::exp(zr[c] - mx);
      se += probs[r * m + c];
    }
    for (std::size_t c = 0; c < m; ++c) probs[r * m + c] /= se;
    total += (mx + std::log(se)) - zr[targets[r]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  if (tape.wants({&logits})) {
    mark(out);
    std::vector<int> saved(targets.begin(), targets.end());
    tape.record(OpKind::cross_entropy_rows, {logits}, out,
                [logits, out, probs = std::move(probs), saved = std::move(saved)]() mutable {
                  const std::size_t n = logits.rows(), m = logits.cols();
                  const double g = out.grad()[0] / static_cast<double>(n);
                  auto gz = logits.mutable_grad();
                  for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t c = 0; c < m; ++c) gz[r * m + c] += g * probs[r * m + c];
                    gz[r * m + static_cast<std::size_t>(saved[r])] -= g;
                  }
                });
  }
  return out;
}

Tensor masked_fill(Tape& tape, const Tensor& a, const BoolMatrix& keep, double fill) {
  if (keep.rows != a.rows() || keep.cols != a.cols()) {
    shape_fail(OpKind::masked_fill, "mask [" + std::to_string(keep.rows) + "x" + std::to_string(keep.cols) +
                                        "] vs " + dims(a));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = keep.values[i] ? x[i] : fill;
  if (tape.wants({&a})) {
    mark(out);
    tape.record(OpKind::masked_fill, {a}, out, [a, out, keep]() mutable {
      auto g = out.grad();
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (keep.values[i]) ga[i] += g[i];
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::scalar(std::accumulate(a.data().begin(), a.data().end(), 0.0));
  if (tape.wants({&a})) {
    mark(out);
    tape.record(OpKind::sum, {a}, out, [a, out]() mutable {
      const double g = out.grad()[0];
      for (auto& v : a.mutable_grad()) v += g;
    });
  }
  return out;
}

Tensor op_forward(Tape& tape, OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      shape_fail(kind, "expects " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(tape, in[0], in[1], attrs.transpose_b);
    case OpKind::add: need(2); return add(tape, in[0], in[1]);
    case OpKind::mul: need(2); return mul(tape, in[0], in[1]);
    case OpKind::scale: need(1); return scale(tape, in[0], attrs.factor);
    case OpKind::softmax_rows: need(1); return softmax_rows(tape, in[0]);
    case OpKind::rmsnorm: need(2); return rmsnorm(tape, in[0], in[1], attrs.eps);
    case OpKind::silu: need(1); return silu(tape, in[0]);
    case OpKind::embedding_lookup: need(1); return embedding_lookup(tape, in[0], attrs.ids);
    case OpKind::concat_rows: return concat_rows(tape, in);
    case OpKind::concat_cols: return concat_cols(tape, in);
    case OpKind::slice: need(1); return slice(tape, in[0], attrs.row0, attrs.nrows, attrs.col0, attrs.ncols);
    case OpKind::gather_rows: need(1); return gather_rows(tape, in[0], attrs.indices);
    case OpKind::rope: need(1); return rope(tape, in[0], attrs.indices, attrs.num_heads, attrs.rope_base);
    case OpKind::cross_entropy_rows: need(1); return cross_entropy_rows(tape, in[0], attrs.ids);
    case OpKind::masked_fill:
      need(1);
      if (attrs.keep == nullptr) shape_fail(kind, "missing keep mask attribute");
      return masked_fill(tape, in[0], *attrs.keep, attrs.fill);
    case OpKind::sum: need(1); return sum(tape, in[0]);
  }
  shape_fail(kind, "unsupported op");
}

// ---- grad_check -------------------------------------------------------------

GradCheckReport grad_check(const ScalarFn& f, std::span<const Tensor> params, double tolerance,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.max_rel_error.assign(params.size(), 0.0);

  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    auto g = p.mutable_grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  // (param, element) pairs to probe.
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    std::vector<std::size_t> idx(params[pi].numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.samples_per_param > 0 && options.samples_per_param < idx.size()) {
      std::vector<std::size_t> chosen;
      std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), options.samples_per_param, rng);
      idx = std::move(chosen);
    }
    for (auto e : idx) probes.emplace_back(pi, e);
  }
  if (options.total_samples > 0 && options.total_samples < probes.size()) {
    std::vector<std::pair<std::size_t, std::size_t>> chosen;
    std::sample(probes.begin(), probes.end(), std::back_inserter(chosen), options.total_samples, rng);
    probes = std::move(chosen);
  }

  auto evaluate = [&]() {
    Tape tape(false);
    return f(tape).item();
  };
  for (auto [pi, e] : probes) {
    auto data = params[pi].mutable_data();
    const double orig = data[e];
    data[e] = orig + options.step;
    const double up = evaluate();
    data[e] = orig - options.step;
    const double down = evaluate();
    data[e] = orig;
    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic[pi][e];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    report.max_rel_error[pi] = std::max(report.max_rel_error[pi], rel);
    report.worst = std::max(report.worst, rel);
  }
  report.checked = probes.size();
  report.passed = report.worst < tolerance;
  return report;
}

}  // namespace syncspeech
