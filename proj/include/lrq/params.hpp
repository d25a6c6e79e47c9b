#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lrq/tape.hpp"

namespace lrq {

/// Named, mutable handles to a model's parameters in a fixed order. The order
/// is the checkpoint order and the optimizer order.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

/// Binds each parameter to `tape` as a leaf, so a forward pass through the
/// owning module records gradients for them. Returns the original values so
/// the caller can restore untracked copies afterwards.
class TapeBinding {
 public:
  TapeBinding(Tape& tape, const ParamRefs& refs) : refs_(refs) {
    saved_.reserve(refs.size());
    for (auto& [name, t] : refs_) {
      saved_.push_back(*t);
      *t = tape.leaf(*t);
    }
  }
  ~TapeBinding() {
    for (std::size_t i = 0; i < refs_.size(); ++i) *refs_[i].second = saved_[i];
  }
  TapeBinding(const TapeBinding&) = delete;
  TapeBinding& operator=(const TapeBinding&) = delete;

  /// Gradient of the last backward root w.r.t. parameter i.
  Tensor grad(const Tape& tape, std::size_t i) const { return tape.grad(*refs_[i].second); }

 private:
  ParamRefs refs_;
  std::vector<Tensor> saved_;
};

}  // namespace lrq
