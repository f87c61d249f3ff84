// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensor with define-by-run reverse-mode differentiation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace refseg {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Fixed alignment keeps vectorized reductions in the same order across runs.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class AllocationCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

// Allocates an op output buffer, enforcing any active allocation cap first.
Buffer new_buffer(std::size_t n, double fill = 0.0);

struct Node {
  Node(Shape s, Buffer d);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  std::uint64_t id;
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad, accumulates into parents' grads.
  std::function<void(Node&)> backward;

  Buffer& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t c, std::size_t i, std::size_t j) const;

  ConstMatrixMap matrix() const;  // 2-D view; 3-D tensors as C x (H*W)

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  // Seeds d(self)/d(self) = 1 and propagates to every reachable leaf.
  void backward() const;

  // Only valid for leaves; used by optimizers and finite differences.
  std::span<double> mutable_data();

  Tensor detach() const;
  Tensor clone() const;
  const std::string& op_name() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

  // Builds a tensor produced by an op. `backward` may be empty when no input
  // requires grad or grad recording is disabled.
  static Tensor make_result(std::string op, Shape shape, Buffer values,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the graph reachable from a root, inputs before outputs.
class Tape {
 public:
  static Tape record(const Tensor& root);

  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }
  void backward();

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Counts tensor elements allocated on this thread while the scope is alive.
// Nested scopes all observe the same allocations.
class AllocationScope {
 public:
  explicit AllocationScope(std::optional<std::size_t> cap = std::nullopt);
  ~AllocationScope();
  AllocationScope(const AllocationScope&) = delete;
  AllocationScope& operator=(const AllocationScope&) = delete;

  std::size_t total_elements() const { return total_; }
  std::size_t peak_live_elements() const { return peak_ > 0 ? static_cast<std::size_t>(peak_) : 0; }
  std::size_t tagged_elements(std::string_view tag) const;

  void check_cap(std::size_t n) const;
  void on_alloc(std::size_t n, const std::string& tag);
  void on_free(std::size_t n);

 private:
  std::optional<std::size_t> cap_;
  std::size_t total_ = 0;
  std::int64_t live_ = 0;
  std::int64_t peak_ = 0;
  std::vector<std::pair<std::string, std::size_t>> tags_;
};

// Labels allocations made while alive (innermost label wins).
class AllocationTag {
 public:
  explicit AllocationTag(std::string tag);
  ~AllocationTag();
  AllocationTag(const AllocationTag&) = delete;
  AllocationTag& operator=(const AllocationTag&) = delete;
};

}  // namespace refseg
