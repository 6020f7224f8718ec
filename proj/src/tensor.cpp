#include "empt/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "empt/error.hpp"

namespace empt {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape) : impl_(std::make_shared<TensorImpl<T>>()) {
  impl_->data.assign(shape_numel(shape), T(0));
  impl_->shape = std::move(shape);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor " + shape_str(shape) + " given " + std::to_string(values.size()) +
                     " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <class T>
std::size_t Tensor<T>::cols() const {
  return impl_->shape.empty() ? 1 : impl_->shape.back();
}

template <class T>
std::size_t Tensor<T>::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : numel() / c;
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <class T>
std::span<T> Tensor<T>::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t(impl_->shape, impl_->data);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

namespace {
thread_local Tape tls_tape;
thread_local bool tls_grad_enabled = true;
}  // namespace

Tape& Tape::current() { return tls_tape; }

void Tape::replay_reverse() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

bool grad_enabled() { return tls_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    Tape::current().clear();
    throw ShapeError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  Tensor<T> l = loss;
  auto g = l.mutable_grad();
  g[0] += T(1);
  Tape::current().replay_reverse();
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace empt
