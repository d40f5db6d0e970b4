#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lgmoe/autograd.hpp"
#include "lgmoe/tensor.hpp"

namespace lgmoe {

/// One named trainable tensor plus its accumulated gradient and Adam state.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;    // accumulated across a batch, zeroed by the optimizer step
  Tensor adam_m;  // allocated on first optimizer use
  Tensor adam_v;
};

/// Flat registry of model parameters. Registration order is the canonical
/// order for checkpoints and gradient checks.
class ParamSet {
 public:
  int add(const std::string& name, Tensor init);
  int find(const std::string& name) const;  // -1 when absent

  Param& at(int handle) { return params_.at(static_cast<size_t>(handle)); }
  const Param& at(int handle) const { return params_.at(static_cast<size_t>(handle)); }

  size_t size() const { return params_.size(); }
  int64_t total_elems() const;
  void zero_grads();

  std::vector<Param>& items() { return params_; }
  const std::vector<Param>& items() const { return params_; }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, int> index_;
};

/// Per-tape binding of parameters. Binding the same handle twice returns the
/// same node, so shared weights (the language router) accumulate gradients
/// through every use.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, ParamSet& params, bool train)
      : tape_(&tape), params_(&params), train_(train) {}

  Var operator()(int handle);

  /// Adds each bound node's tape gradient into ParamSet grads.
  void harvest_grads();

  bool train() const { return train_; }
  Tape& tape() { return *tape_; }
  ParamSet& params() { return *params_; }

 private:
  Tape* tape_;
  ParamSet* params_;
  bool train_;
  std::unordered_map<int, Var> bound_;
};

}  // namespace lgmoe
