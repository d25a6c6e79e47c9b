#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrq/tensor.hpp"

namespace lrq {

enum class OpKind {
  kLeaf,
  kMatmul,
  kTranspose,
  kAffine,
  kElementwise,
  kScalarOp,
  kActivation,
  kLayerNorm,
  kReduce,
  kSoftmax,
  kSlice,
  kConcat,
  kGather,
  kBroadcast,
  kScaleRows,
  kRotate,
  kSparseGradient,
};

/// Receives dL/d(output) and accumulates into dL/d(input_i). Entries of
/// `input_grads` are null for inputs that do not participate in the tape.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<Buffer* const> input_grads)>;

/// Append-only record of a dynamic computation graph. Nodes are created in
/// execution order, so every node's inputs precede it. A tape is rebuilt for
/// every forward pass and must stay on the thread that built it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf and returns the bound tensor.
  Tensor leaf(const Tensor& value) {
    Tensor t = value.detach();
    nodes_.push_back(Node{OpKind::kLeaf, {}, t.shape(), nullptr});
    t.tape_ = this;
    t.node_ = nodes_.size() - 1;
    return t;
  }

  /// Binds an op result to the tape. Inputs that are untracked are kept as
  /// empty slots so the backward closure sees a stable argument order.
  Tensor record(OpKind kind, Tensor value, std::initializer_list<const Tensor*> inputs,
                BackwardFn backward) {
    return record_many(kind, std::move(value), std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                       std::move(backward));
  }

  Tensor record_many(OpKind kind, Tensor value, std::span<const Tensor* const> inputs,
                     BackwardFn backward) {
    std::vector<std::optional<std::size_t>> ids;
    ids.reserve(inputs.size());
    for (const Tensor* in : inputs) {
      if (in->tape_ == this) {
        ids.emplace_back(in->node_);
      } else {
        ids.emplace_back(std::nullopt);
      }
    }
    Tensor t = value.detach();
    nodes_.push_back(Node{kind, std::move(ids), t.shape(), std::move(backward)});
    t.tape_ = this;
    t.node_ = nodes_.size() - 1;
    return t;
  }

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t node) const { return nodes_.at(node).kind; }

  /// Reverse sweep from a scalar root. Gradients accumulate additively when a
  /// node feeds several consumers.
  void backward(const Tensor& root) {
    if (root.tape_ != this) throw Error("backward: root is not recorded on this tape");
    if (root.numel() != 1) {
      throw DimensionError("backward: root must be scalar, got shape " + shape_str(root.shape()));
    }
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[root.node_] = Buffer(1, 1.0);
    std::vector<Buffer*> input_ptrs;
    for (std::size_t id = root.node_ + 1; id-- > 0;) {
      if (!grads_[id]) continue;
      Node& n = nodes_[id];
      if (!n.backward) continue;
      input_ptrs.clear();
      for (const auto& in : n.inputs) {
        if (!in) {
          input_ptrs.push_back(nullptr);
          continue;
        }
        auto& g = grads_[*in];
        if (!g) g = Buffer(shape_numel(nodes_[*in].shape), 0.0);
        input_ptrs.push_back(&*g);
      }
      n.backward(std::span<const double>(grads_[id]->data(), grads_[id]->size()),
                 std::span<Buffer* const>(input_ptrs.data(), input_ptrs.size()));
      // Interior gradients are not needed after their node has propagated.
      if (n.kind != OpKind::kLeaf) grads_[id].reset();
    }
  }

  /// Gradient of the last backward root w.r.t. a leaf. Leaves the root does
  /// not reach get zeros.
  Tensor grad(const Tensor& t) const {
    if (t.tape_ != this) throw Error("grad: tensor is not recorded on this tape");
    if (t.node_ < grads_.size() && grads_[t.node_]) return Tensor(t.shape(), *grads_[t.node_]);
    return Tensor::zeros(t.shape());
  }

  bool has_grad(const Tensor& t) const {
    return t.tape_ == this && t.node_ < grads_.size() && grads_[t.node_].has_value();
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::optional<std::size_t>> inputs;
    Shape shape;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::optional<Buffer>> grads_;
};

}  // namespace lrq
