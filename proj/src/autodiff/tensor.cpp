#include "cyclecap/autodiff/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace cyclecap::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(ad::numel(shape)) + " elements but " +
                     std::to_string(values.size()) + " values were given");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item: expected a single element, got shape " + to_string(shape()));
  }
  return node_->value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  if (!node_->is_leaf) throw std::logic_error("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->value, node_->requires_grad && node_->is_leaf);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  auto* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS: parents are emitted before children.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (node->is_leaf) {
      node->ensure_grad();
    } else {
      node->grad.assign(node->value.size(), T(0));
    }
  }
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->is_leaf && node->backward) node->backward(*node);
  }
  for (auto* node : order) {
    if (!node->is_leaf) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

namespace detail {

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> parents, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  if (numel(shape) != value.size()) {
    throw ShapeError(std::string(op) + ": internal shape " + to_string(shape) +
                     " does not match " + std::to_string(value.size()) + " values");
  }
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->is_leaf = false;
  node->op = op;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const auto& p) { return p && p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(const char*, Shape, std::vector<float>,
                                   std::vector<std::shared_ptr<Node<float>>>, BackwardFn<float>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<std::shared_ptr<Node<double>>>,
                                    BackwardFn<double>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace cyclecap::ad
