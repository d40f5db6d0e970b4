#include "lgmoe/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "lgmoe/kernels.hpp"

namespace lgmoe {

static int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    LGMOE_CHECK(d >= 0, "tensor dimension must be non-negative, got " << d);
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  Tensor t;
  t.shape_ = std::move(shape);
  LGMOE_CHECK(shape_numel(t.shape_) == static_cast<int64_t>(values.size()),
              "value count " << values.size() << " does not match shape " << t.shape_str());
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double std) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = rng.normal(0.0, std);
  return t;
}

int Tensor::rows() const {
  LGMOE_CHECK(rank() == 2, "rows() needs a 2-D tensor, got " << shape_str());
  return shape_[0];
}

int Tensor::cols() const {
  LGMOE_CHECK(rank() == 2, "cols() needs a 2-D tensor, got " << shape_str());
  return shape_[1];
}

double& Tensor::at(int i, int j) {
  return data_[static_cast<size_t>(i) * shape_[1] + j];
}

double Tensor::at(int i, int j) const {
  return data_[static_cast<size_t>(i) * shape_[1] + j];
}

double Tensor::item() const {
  LGMOE_CHECK(numel() == 1, "item() needs a scalar, got " << shape_str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return kern::active().all_finite(data(), data_.size());
}

std::string Tensor::shape_str() const {
  std::ostringstream oss;
  oss << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) oss << "x";
    oss << shape_[i];
  }
  oss << "]";
  return oss.str();
}

}  // namespace lgmoe
