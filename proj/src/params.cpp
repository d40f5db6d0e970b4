#include "lgmoe/params.hpp"

#include "lgmoe/kernels.hpp"

namespace lgmoe {

int ParamSet::add(const std::string& name, Tensor init) {
  LGMOE_CHECK(index_.find(name) == index_.end(), "duplicate parameter name: " << name);
  int handle = static_cast<int>(params_.size());
  Param p;
  p.name = name;
  p.grad = Tensor::zeros(init.shape());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  index_[name] = handle;
  return handle;
}

int ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

int64_t ParamSet::total_elems() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamSet::zero_grads() {
  for (auto& p : params_) p.grad = Tensor::zeros(p.value.shape());
}

Var ParamBinding::operator()(int handle) {
  auto it = bound_.find(handle);
  if (it != bound_.end()) return it->second;
  Var v = tape_->leaf(params_->at(handle).value, train_);
  bound_.emplace(handle, v);
  return v;
}

void ParamBinding::harvest_grads() {
  if (!train_) return;
  for (auto& [handle, var] : bound_) {
    Tensor g = tape_->grad(var);
    Param& p = params_->at(handle);
    kern::active().axpy(1.0, g.data(), p.grad.data(), static_cast<size_t>(g.numel()));
  }
}

}  // namespace lgmoe
