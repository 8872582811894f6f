#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// A Graph records every op applied while it is alive; backward() replays the
// tape in exact reverse insertion order. Tensors are reference-counted handles,
// so a parameter used twice in one graph accumulates both gradient paths into
// the same buffer. Instantiated for float (training/inference) and double
// (gradient checks).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace icll::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Graph;

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->value.size(); }

  std::span<T> data() { return impl_->value; }
  std::span<const T> data() const { return impl_->value; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  // True when both handles refer to the same storage.
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a backward pass reaches this tensor
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Storage> impl) : impl_(std::move(impl)) {}
  std::span<T> ensure_grad() const;  // handle-level const: storage is shared

  std::shared_ptr<Storage> impl_;

  friend class Graph<T>;
};

template <typename T>
class Graph {
 public:
  // With record == false no tape is kept and outputs never require grad.
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return tape_.size(); }
  bool recording() const { return record_; }

  // [m,k] x [k,n] -> [m,n]
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> transpose(const Tensor<T>& a);

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> scale(const Tensor<T>& a, T factor);
  // x[..., n] + bias[n]; the only broadcasting op.
  Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
  Tensor<T> reshape(const Tensor<T>& a, Shape shape);

  Tensor<T> gelu(const Tensor<T>& a);  // tanh approximation
  Tensor<T> relu(const Tensor<T>& a);

  // Normalizes over the last dimension, denominator sqrt(var + 1e-5).
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);

  // Rows of a [V, d] table (or any 2-D tensor) selected by index -> [len, d].
  Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::size_t> rows);

  Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);
  Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end);
  Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
  Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

  Tensor<T> softmax_lastdim(const Tensor<T>& x);
  // Softmax over the last dim of [..., s, s] with columns j > i excluded.
  Tensor<T> causal_softmax(const Tensor<T>& x);

  // Multi-head scaled dot-product attention on a packed [batch*seq, 3*d]
  // projection laid out as [Q | K | V], each split into `heads` contiguous
  // column groups. Returns [batch*seq, d]. When `weights_out` is non-null it
  // receives the post-softmax matrices as [batch, heads, seq, seq].
  Tensor<T> self_attention(const Tensor<T>& qkv, std::size_t batch, std::size_t seq,
                           std::size_t heads, bool causal = true,
                           std::vector<T>* weights_out = nullptr);

  Tensor<T> sum(const Tensor<T>& a);
  // mean((pred - target)^2) over all elements
  Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

  // Populates gradients of every requires_grad tensor reachable from `loss`.
  // The tape is consumed; a second call is a usage error.
  void backward(const Tensor<T>& loss);

 private:
  Tensor<T> make(Shape shape, bool requires_grad) const;
  bool track(std::initializer_list<const Tensor<T>*> inputs) const;
  void record(std::function<void()> step) { tape_.push_back(std::move(step)); }

  bool record_;
  bool consumed_ = false;
  std::vector<std::function<void()>> tape_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace icll::ad
