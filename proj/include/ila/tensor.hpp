// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors and a reverse-mode tape.
//
// A Tensor is a shape plus a shared, row-major buffer of doubles. Tensors that
// were produced on a Tape carry a reference to their node so that backward()
// can route gradients to them. A tape is meant to live for one forward/backward
// pass; tensors that reference it must not outlive it.

#ifndef ILA_TENSOR_HPP_
#define ILA_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ila {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

class Tape;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return *data_; }
  // Detaches from any other holder of the buffer before handing it out.
  std::span<double> mutable_data();

  double item() const;
  double at(std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }

  bool tracked() const { return tape_ != nullptr; }
  std::optional<NodeId> node() const;
  Tape* tape() const { return tape_; }

  // Value copy with no tape association.
  Tensor detached() const;
  // Deep copy of the buffer.
  Tensor clone() const;

  bool bitwise_equal(const Tensor& other) const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = 0;
};

// Gradient buffers seen by one backward rule.
class BackwardContext {
 public:
  BackwardContext(std::span<const double> grad_out,
                  std::vector<std::span<double>> grad_in)
      : grad_out_(grad_out), grad_in_(std::move(grad_in)) {}

  std::span<const double> grad_out() const { return grad_out_; }
  // Accumulate into; never assign.
  std::span<double> grad_in(std::size_t k) const { return grad_in_[k]; }

 private:
  std::span<const double> grad_out_;
  std::vector<std::span<double>> grad_in_;
};

using BackwardRule = std::function<void(const BackwardContext&)>;

class Gradients {
 public:
  bool empty() const { return grads_.empty(); }
  std::size_t size() const { return grads_.size(); }
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  const Tensor& at(NodeId id) const;
  const Tensor& of(const Tensor& leaf) const;
  const std::unordered_map<NodeId, Tensor>& all() const { return grads_; }

 private:
  friend class Tape;
  std::unordered_map<NodeId, Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a copy of `value` as a tracked leaf.
  Tensor leaf(const Tensor& value);

  // Appends an op node. Every tracked input must belong to this tape.
  Tensor record(Tensor value, const std::vector<const Tensor*>& inputs,
                BackwardRule rule);

  // Reverse sweep from a scalar loss. Returns gradients for every leaf
  // recorded before the loss; leaves the loss does not depend on get zeros.
  // An untracked loss yields an empty map.
  static Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_rule_applications() const { return last_applications_; }

 private:
  struct Node {
    std::vector<NodeId> inputs;
    BackwardRule rule;
    Shape shape;
    bool is_leaf = false;
  };

  Gradients run_backward(NodeId loss);

  std::vector<Node> nodes_;
  std::size_t last_applications_ = 0;
};

}  // namespace ila

#endif  // ILA_TENSOR_HPP_
