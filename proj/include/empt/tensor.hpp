#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace empt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until backward reaches this node
  bool requires_grad = false;
};

// Dense row-major array with optional gradient. Copies share storage; use
// `clone()` for a deep copy. Values are immutable once an op has consumed
// them, except through `mutable_data()` which optimizers use between steps.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  // Trailing-axis length and the number of rows before it.
  std::size_t cols() const;
  std::size_t rows() const;

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::size_t i) const { return impl_->data.at(i); }
  T at(std::size_t r, std::size_t c) const { return impl_->data.at(r * cols() + c); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();  // allocates zeros on first use
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;
  // Same storage, detached from any graph.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& handle() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Per-thread record of differentiable ops in execution order. `backward`
// replays it in reverse and then clears it, so one graph per thread is
// live at a time.
class Tape {
 public:
  static Tape& current();
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  void replay_reverse();

 private:
  std::vector<std::function<void()>> entries_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds d(loss)/d(loss) = 1 and accumulates into every requires_grad
// ancestor. Throws ShapeError unless `loss` holds exactly one element.
template <class T>
void backward(const Tensor<T>& loss);

}  // namespace empt
