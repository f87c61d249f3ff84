// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace refseg {
namespace {

thread_local bool t_grad_enabled = true;
thread_local std::vector<AllocationScope*> t_scopes;
thread_local std::vector<std::string> t_tags;

std::atomic<std::uint64_t> g_next_id{1};

void require_finite(const std::string& op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NonFiniteError("non-finite value produced by '" + op + "'");
    }
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {

Buffer new_buffer(std::size_t n, double fill) {
  for (const auto* scope : t_scopes) scope->check_cap(n);
  return Buffer(n, fill);
}

Node::Node(Shape s, Buffer d)
    : id(g_next_id.fetch_add(1, std::memory_order_relaxed)), shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  static const std::string untagged;
  const std::string& tag = t_tags.empty() ? untagged : t_tags.back();
  for (auto* scope : t_scopes) scope->on_alloc(data.size(), tag);
}

Node::~Node() {
  for (auto* scope : t_scopes) scope->on_free(data.size());
}

Buffer& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::make_shared<detail::Node>(std::move(shape), detail::new_buffer(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  require_finite("from", values);
  return Tensor(std::make_shared<detail::Node>(std::move(shape), Buffer(values.begin(), values.end())));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return node_->data[i * node_->shape[1] + j];
}

double Tensor::at(std::size_t c, std::size_t i, std::size_t j) const {
  const auto& s = node_->shape;
  return node_->data[(c * s[1] + i) * s[2] + j];
}

ConstMatrixMap Tensor::matrix() const {
  const auto& s = node_->shape;
  Eigen::Index rows = 1, cols = 1;
  if (s.size() == 1) {
    cols = static_cast<Eigen::Index>(s[0]);
  } else if (!s.empty()) {
    rows = static_cast<Eigen::Index>(s[0]);
    cols = static_cast<Eigen::Index>(numel() / s[0]);
  }
  return ConstMatrixMap(node_->data.data(), rows, cols);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return zeros(shape());
  return from(shape(), {node_->grad.begin(), node_->grad.end()});
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  auto tape = Tape::record(*this);
  tape.backward();
}

std::span<double> Tensor::mutable_data() {
  if (node_->backward) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return node_->data;
}

Tensor Tensor::detach() const {
  return Tensor(std::make_shared<detail::Node>(shape(), node_->data));
}

Tensor Tensor::clone() const {
  auto copy = detach();
  copy.node_->requires_grad = node_->requires_grad;
  return copy;
}

const std::string& Tensor::op_name() const { return node_->op; }

Tensor Tensor::make_result(std::string op, Shape shape, Buffer values,
                           std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward) {
  require_finite(op, values);
  auto node = std::make_shared<detail::Node>(std::move(shape), std::move(values));
  node->op = std::move(op);
  const bool needs_grad =
      t_grad_enabled && backward &&
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (needs_grad) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_);
  }
  return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<const detail::Node*> visited;
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
      continue;
    }
    tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward() {
  if (nodes_.empty()) return;
  auto& root_grad = nodes_.back()->grad_buffer();
  std::fill(root_grad.begin(), root_grad.end(), 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

AllocationScope::AllocationScope(std::optional<std::size_t> cap) : cap_(cap) { t_scopes.push_back(this); }

AllocationScope::~AllocationScope() { std::erase(t_scopes, this); }

std::size_t AllocationScope::tagged_elements(std::string_view tag) const {
  for (const auto& [name, count] : tags_) {
    if (name == tag) return count;
  }
  return 0;
}

void AllocationScope::check_cap(std::size_t n) const {
  if (cap_ && live_ + static_cast<std::int64_t>(n) > static_cast<std::int64_t>(*cap_)) {
    throw AllocationCapExceeded("allocation of " + std::to_string(n) + " elements exceeds cap of " +
                                std::to_string(*cap_) + " live elements");
  }
}

void AllocationScope::on_alloc(std::size_t n, const std::string& tag) {
  total_ += n;
  live_ += static_cast<std::int64_t>(n);
  peak_ = std::max(peak_, live_);
  if (tag.empty()) return;
  for (auto& [name, count] : tags_) {
    if (name == tag) {
      count += n;
      return;
    }
  }
  tags_.emplace_back(tag, n);
}

void AllocationScope::on_free(std::size_t n) { live_ -= static_cast<std::int64_t>(n); }

AllocationTag::AllocationTag(std::string tag) { t_tags.push_back(std::move(tag)); }
AllocationTag::~AllocationTag() { t_tags.pop_back(); }

}  // namespace refseg
