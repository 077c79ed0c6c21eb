// Copyright 2026 The ILA Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ila/tensor.hpp"

#include <cstring>
#include <sstream>
#include <utility>

#include "ila/errors.hpp"

namespace ila {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : shape_{0}, data_(std::make_shared<std::vector<double>>()) {}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_size(shape_), fill)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(values))) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_->size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(data_->size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw DimensionError("rows() on non-matrix " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw DimensionError("cols() on non-matrix " + shape_string(shape_));
  return shape_[1];
}

std::span<double> Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return *data_;
}

double Tensor::item() const {
  if (data_->size() != 1) {
    throw DimensionError("item() on non-scalar " + shape_string(shape_));
  }
  return (*data_)[0];
}

std::optional<NodeId> Tensor::node() const {
  if (tape_ == nullptr) return std::nullopt;
  return node_;
}

Tensor Tensor::detached() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = data_;
  return out;
}

Tensor Tensor::clone() const {
  Tensor out;
  out.shape_ = shape_;
  out.data_ = std::make_shared<std::vector<double>>(*data_);
  return out;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(double)) == 0;
}

const Tensor& Gradients::at(NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw LookupError("no gradient for node " + std::to_string(id));
  return it->second;
}

const Tensor& Gradients::of(const Tensor& leaf) const {
  auto node = leaf.node();
  if (!node) throw LookupError("tensor is not tracked");
  return at(*node);
}

Tensor Tape::leaf(const Tensor& value) {
  Tensor out = value.detached();
  out.tape_ = this;
  out.node_ = nodes_.size();
  nodes_.push_back(Node{{}, {}, value.shape(), true});
  return out;
}

Tensor Tape::record(Tensor value, const std::vector<const Tensor*>& inputs,
                    BackwardRule rule) {
  Node node;
  node.shape = value.shape();
  node.rule = std::move(rule);
  for (const Tensor* in : inputs) {
    if (in->tape_ != this) throw ContractError("operand belongs to a different tape");
    node.inputs.push_back(in->node_);
  }
  value.tape_ = this;
  value.node_ = nodes_.size();
  nodes_.push_back(std::move(node));
  return value;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  if (!loss.tracked()) return Gradients{};
  return loss.tape_->run_backward(loss.node_);
}

Gradients Tape::run_backward(NodeId loss) {
  std::vector<std::vector<double>> grads(loss + 1);
  grads[loss].assign(1, 1.0);
  last_applications_ = 0;

  for (NodeId id = loss + 1; id-- > 0;) {
    Node& node = nodes_[id];
    ++last_applications_;
    if (node.is_leaf || grads[id].empty()) continue;
    std::vector<std::span<double>> grad_in;
    grad_in.reserve(node.inputs.size());
    for (NodeId in : node.inputs) {
      if (grads[in].empty()) grads[in].assign(shape_size(nodes_[in].shape), 0.0);
      grad_in.emplace_back(grads[in]);
    }
    node.rule(BackwardContext(grads[id], std::move(grad_in)));
    if (id != loss) std::vector<double>().swap(grads[id]);
  }

  Gradients out;
  for (NodeId id = 0; id <= loss; ++id) {
    if (!nodes_[id].is_leaf) continue;
    const Shape& shape = nodes_[id].shape;
    if (grads[id].empty()) {
      out.grads_.emplace(id, Tensor(shape, 0.0));
    } else {
      out.grads_.emplace(id, Tensor(shape, std::move(grads[id])));
    }
  }
  return out;
}

}  // namespace ila
