#include "icll/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gemm.hpp"
#include "icll/error.hpp"

namespace icll::ad {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void dim_error(const char* op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) dim_error(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    dim_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

// ---------------------------------------------------------------- Tensor

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto s = std::make_shared<Storage>();
  s->value.assign(shape_numel(shape), T(0));
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->value = std::move(values);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), T(0));
  return impl_->grad;
}

// ---------------------------------------------------------------- Graph

template <typename T>
Tensor<T> Graph<T>::make(Shape shape, bool requires_grad) const {
  return Tensor<T>::zeros(std::move(shape), requires_grad);
}

template <typename T>
bool Graph<T>::track(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!record_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
Tensor<T> Graph<T>::matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    dim_error("matmul", "inner dimensions differ " + shape_str(a.shape()) + " x " +
                            shape_str(b.shape()));
  }
  auto out = make({m, n}, track({&a, &b}));
  detail::gemm_rowstable(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (out.requires_grad()) {
    record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) {
        detail::gemm_acc_nt(out.grad().data(), b.data().data(), a.ensure_grad().data(), m, k, n);
      }
      if (b.requires_grad()) {
        detail::gemm_acc_tn(a.data().data(), out.grad().data(), b.ensure_grad().data(), m, k, n);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::transpose(const Tensor<T>& a) {
  require_rank("transpose", a.shape(), 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto out = make({n, m}, track({&a}));
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  if (out.requires_grad()) {
    record([a, out, m, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  auto out = make(a.shape(), track({&a, &b}));
  auto x = a.data(), y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (out.requires_grad()) {
    record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  auto out = make(a.shape(), track({&a, &b}));
  auto x = a.data(), y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (out.requires_grad()) {
    record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  auto out = make(a.shape(), track({&a, &b}));
  auto x = a.data(), y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (out.requires_grad()) {
    record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::scale(const Tensor<T>& a, T factor) {
  auto out = make(a.shape(), track({&a}));
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (out.requires_grad()) {
    record([a, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank("add_bias", bias.shape(), 1);
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    dim_error("add_bias", "bias " + shape_str(bias.shape()) + " does not match last dim of " +
                              shape_str(x.shape()));
  }
  const std::size_t n = bias.dim(0);
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  auto out = make(x.shape(), track({&x, &bias}));
  auto xs = x.data(), bs = bias.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = xs[r * n + j] + bs[j];
  if (out.requires_grad()) {
    record([x, bias, out, rows, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    dim_error("reshape", shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto out = make(std::move(shape), track({&a}));
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (out.requires_grad()) {
    record([a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::gelu(const Tensor<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  auto out = make(a.shape(), track({&a}));
  auto x = a.data();
  auto o = out.data();
  std::vector<T> th(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T v = x[i];
    th[i] = std::tanh(c * (v + k * v * v * v));
    o[i] = T(0.5) * v * (T(1) + th[i]);
  }
  if (out.requires_grad()) {
    record([a, out, th = std::move(th)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto x = a.data();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = x[i];
        const T t = th[i];
        const T d = T(0.5) * (T(1) + t) +
                    T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
        ga[i] += g[i] * d;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::relu(const Tensor<T>& a) {
  auto out = make(a.shape(), track({&a}));
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
  if (out.requires_grad()) {
    record([a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto x = a.data();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > T(0)) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                               const Tensor<T>& beta) {
  require_rank("layer_norm", gamma.shape(), 1);
  require_same_shape("layer_norm", gamma.shape(), beta.shape());
  if (x.rank() == 0 || x.shape().back() != gamma.dim(0) || gamma.dim(0) == 0) {
    dim_error("layer_norm", "gamma " + shape_str(gamma.shape()) +
                                " does not match last dim of " + shape_str(x.shape()));
  }
  const std::size_t n = gamma.dim(0);
  const std::size_t rows = x.numel() / n;
  auto out = make(x.shape(), track({&x, &gamma, &beta}));
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  auto xs = x.data(), gs = gamma.data(), bs = beta.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs.data() + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + T(kLayerNormEps));
    rstd[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mean) * inv;
      xhat[r * n + j] = h;
      o[r * n + j] = h * gs[j] + bs[j];
    }
  }
  if (out.requires_grad()) {
    record([x, gamma, beta, out, rows, n, xhat = std::move(xhat),
            rstd = std::move(rstd)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gs = gamma.data();
      if (gamma.requires_grad()) {
        auto gg = gamma.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
      }
      if (beta.requires_grad()) {
        auto gb = beta.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
      if (x.requires_grad()) {
        auto gx = x.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d = 0, mean_dh = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const T d = g[r * n + j] * gs[j];
            mean_d += d;
            mean_dh += d * xhat[r * n + j];
          }
          mean_d /= T(n);
          mean_dh /= T(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = g[r * n + j] * gs[j];
            gx[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dh);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::embedding_lookup(const Tensor<T>& table, std::span<const std::size_t> rows) {
  require_rank("embedding_lookup", table.shape(), 2);
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (std::size_t idx : rows) {
    if (idx >= vocab) {
      dim_error("embedding_lookup",
                "index " + std::to_string(idx) + " out of range for " + shape_str(table.shape()));
    }
  }
  auto out = make({rows.size(), d}, track({&table}));
  auto src = table.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(src.begin() + rows[r] * d, d, dst.begin() + r * d);
  if (out.requires_grad()) {
    record([table, out, d, idx = std::vector<std::size_t>(rows.begin(), rows.end())]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gt = table.ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_rank("slice_rows", a.shape(), 2);
  if (begin > end || end > a.dim(0)) {
    dim_error("slice_rows", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                ") outside " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(1);
  auto out = make({end - begin, n}, track({&a}));
  std::copy(a.data().begin() + begin * n, a.data().begin() + end * n, out.data().begin());
  if (out.requires_grad()) {
    record([a, out, begin, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_rank("slice_cols", a.shape(), 2);
  if (begin > end || end > a.dim(1)) {
    dim_error("slice_cols", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                ") outside " + shape_str(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1), w = end - begin;
  auto out = make({m, w}, track({&a}));
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(src.begin() + i * n + begin, w, dst.begin() + i * w);
  if (out.requires_grad()) {
    record([a, out, begin, m, n, w]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) dim_error("concat_rows", "no inputs");
  const std::size_t n = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  bool grad = false;
  for (const auto& p : parts) {
    require_rank("concat_rows", p.shape(), 2);
    if (p.dim(1) != n) dim_error("concat_rows", "column count mismatch");
    rows += p.dim(0);
    grad = grad || track({&p});
  }
  auto out = make({rows, n}, grad);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset);
    offset += p.numel();
  }
  if (out.requires_grad()) {
    record([inputs = std::vector<Tensor<T>>(parts.begin(), parts.end()), out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        if (p.requires_grad()) {
          auto gp = p.ensure_grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) dim_error("concat_cols", "no inputs");
  const std::size_t m = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  bool grad = false;
  for (const auto& p : parts) {
    require_rank("concat_cols", p.shape(), 2);
    if (p.dim(0) != m) dim_error("concat_cols", "row count mismatch");
    cols += p.dim(1);
    grad = grad || track({&p});
  }
  auto out = make({m, cols}, grad);
  auto dst = out.data();
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto src = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(src.begin() + i * w, w, dst.begin() + i * cols + c0);
    c0 += w;
  }
  if (out.requires_grad()) {
    record([inputs = std::vector<Tensor<T>>(parts.begin(), parts.end()), out, m, cols]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t c0 = 0;
      for (auto& p : inputs) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + c0 + j];
        }
        c0 += w;
      }
    });
  }
  return out;
}

namespace {

// Softmax over rows of length n, restricted to the first `limit(r)` entries;
// remaining entries are set to zero.
template <typename T, typename Limit>
void softmax_rows(const T* in, T* out, std::size_t rows, std::size_t n, Limit limit) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in + r * n;
    T* y = out + r * n;
    const std::size_t len = limit(r);
    T mx = x[0];
    for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[j]);
    T total = 0;
    for (std::size_t j = 0; j < len; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < len; ++j) y[j] /= total;
    for (std::size_t j = len; j < n; ++j) y[j] = T(0);
  }
}

template <typename T>
void softmax_rows_backward(const T* y, const T* gy, T* gx, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0;
    for (std::size_t j = 0; j < n; ++j) dot += gy[r * n + j] * y[r * n + j];
    for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (gy[r * n + j] - dot);
  }
}

}  // namespace

template <typename T>
Tensor<T> Graph<T>::softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0 || x.numel() == 0 || x.shape().back() == 0) {
    dim_error("softmax_lastdim", "empty tensor " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  auto out = make(x.shape(), track({&x}));
  softmax_rows(x.data().data(), out.data().data(), rows, n, [n](std::size_t) { return n; });
  if (out.requires_grad()) {
    record([x, out, rows, n]() mutable {
      if (!out.has_grad()) return;
      softmax_rows_backward(out.data().data(), out.grad().data(), x.ensure_grad().data(), rows,
                            n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::causal_softmax(const Tensor<T>& x) {
  if (x.rank() < 2 || x.numel() == 0 || x.shape().back() != x.shape()[x.rank() - 2]) {
    dim_error("causal_softmax", "expected [..., s, s], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  auto out = make(x.shape(), track({&x}));
  softmax_rows(x.data().data(), out.data().data(), rows, n,
               [n](std::size_t r) { return r % n + 1; });
  if (out.requires_grad()) {
    record([x, out, rows, n]() mutable {
      if (!out.has_grad()) return;
      // masked entries have y == 0 and therefore receive zero gradient
      softmax_rows_backward(out.data().data(), out.grad().data(), x.ensure_grad().data(), rows,
                            n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::self_attention(const Tensor<T>& qkv, std::size_t batch, std::size_t seq,
                                   std::size_t heads, bool causal, std::vector<T>* weights_out) {
  require_rank("self_attention", qkv.shape(), 2);
  if (heads == 0 || qkv.dim(0) != batch * seq || qkv.dim(1) % (3 * heads) != 0) {
    dim_error("self_attention", "packed projection " + shape_str(qkv.shape()) +
                                    " incompatible with batch=" + std::to_string(batch) +
                                    " seq=" + std::to_string(seq) +
                                    " heads=" + std::to_string(heads));
  }
  const std::size_t d = qkv.dim(1) / 3;
  const std::size_t dh = d / heads;
  const std::size_t stride = 3 * d;
  const T scale = T(1) / std::sqrt(T(dh));

  auto out = make({batch * seq, d}, track({&qkv}));
  std::vector<T> probs(batch * heads * seq * seq, T(0));
  std::vector<T> key_t(dh * seq);
  std::vector<T> scores(seq);
  const T* src = qkv.data().data();
  T* dst = out.data().data();

  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = src + b * seq * stride;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
      for (std::size_t j = 0; j < seq; ++j)
        for (std::size_t c = 0; c < dh; ++c) key_t[c * seq + j] = base[j * stride + ko + c];
      T* p_bh = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const std::size_t len = causal ? i + 1 : seq;
        const T* q = base + i * stride + qo;
        std::fill_n(scores.begin(), len, T(0));
        for (std::size_t c = 0; c < dh; ++c) {
          const T qc = q[c];
          const T* kc = key_t.data() + c * seq;
          for (std::size_t j = 0; j < len; ++j) scores[j] = std::fma(qc, kc[j], scores[j]);
        }
        T mx = scores[0] * scale;
        for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, scores[j] * scale);
        T total = 0;
        T* p = p_bh + i * seq;
        for (std::size_t j = 0; j < len; ++j) {
          p[j] = std::exp(scores[j] * scale - mx);
          total += p[j];
        }
        for (std::size_t j = 0; j < len; ++j) p[j] /= total;
        T* o = dst + (b * seq + i) * d + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const T pj = p[j];
          const T* v = base + j * stride + vo;
          for (std::size_t c = 0; c < dh; ++c) o[c] = std::fma(pj, v[c], o[c]);
        }
      }
    }
  }
  if (weights_out != nullptr) *weights_out = probs;

  if (out.requires_grad()) {
    record([qkv, out, batch, seq, heads, d, dh, stride, scale, causal,
            probs = std::move(probs)]() mutable {
      if (!out.has_grad()) return;
      const T* src = qkv.data().data();
      const T* g = out.grad().data();
      T* gsrc = qkv.ensure_grad().data();
      for (std::size_t b = 0; b < batch; ++b) {
        const T* base = src + b * seq * stride;
        T* gbase = gsrc + b * seq * stride;
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
          detail::attention_head_backward(base + qo, base + ko, base + vo, stride,
                                          probs.data() + (b * heads + h) * seq * seq,
                                          g + b * seq * d + h * dh, d, gbase + qo, gbase + ko,
                                          gbase + vo, seq, dh, scale);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::sum(const Tensor<T>& a) {
  auto out = make({1}, track({&a}));
  T total = 0;
  for (T v : a.data()) total += v;
  out.data()[0] = total;
  if (out.requires_grad()) {
    record([a, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (T& v : a.ensure_grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape("mse_loss", pred.shape(), target.shape());
  if (pred.numel() == 0) dim_error("mse_loss", "empty input");
  auto out = make({1}, track({&pred, &target}));
  auto p = pred.data(), t = target.data();
  T total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  out.data()[0] = total / T(p.size());
  if (out.requires_grad()) {
    record([pred, target, out]() mutable {
      if (!out.has_grad()) return;
      auto p = pred.data(), t = target.data();
      const T g = out.grad()[0] * T(2) / T(p.size());
      if (pred.requires_grad()) {
        auto gp = pred.ensure_grad();
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g * (p[i] - t[i]);
      }
      if (target.requires_grad()) {
        auto gt = target.ensure_grad();
        for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= g * (p[i] - t[i]);
      }
    });
  }
  return out;
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (!record_) throw UsageError("backward: graph was created without recording");
  if (consumed_) throw UsageError("backward: tape already consumed (double backward unsupported)");
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward: loss does not depend on any tensor requiring grad");
  }
  Tensor<T> root = loss;
  root.ensure_grad()[0] += T(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  tape_.clear();
  consumed_ = true;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace icll::ad
