#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgmoe/common.hpp"
#include "lgmoe/rng.hpp"

namespace lgmoe {

/// Dense row-major tensor of 64-bit floats. Plain value type with deep copy
/// semantics; gradient bookkeeping lives on the Tape, not here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value) { return from({1}, {value}); }
  static Tensor randn(std::vector<int> shape, Rng& rng, double std = 1.0);

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  // 2-D accessors
  int rows() const;
  int cols() const;
  double& at(int i, int j);
  double at(int i, int j) const;
  double& at(int i) { return data_.at(static_cast<size_t>(i)); }
  double at(int i) const { return data_.at(static_cast<size_t>(i)); }
  double item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Row-major boolean matrix used for attention masks.
struct BoolMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> v;

  BoolMatrix() = default;
  BoolMatrix(int r, int c, uint8_t fill = 0)
      : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}
  uint8_t at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
  void set(int i, int j, bool b) { v[static_cast<size_t>(i) * cols + j] = b ? 1 : 0; }
};

}  // namespace lgmoe
