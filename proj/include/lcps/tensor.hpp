#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "lcps/errors.hpp"

namespace lcps {

/// Dense row-major float32 tensor of rank 1..4. This is the in-memory twin
/// of the binary tensor container: ingested feature maps, classifier weights,
/// head outputs and grid dumps all round-trip through it without changing
/// payload bits.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::uint32_t> dims, float fill = 0.0f)
      : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > 4)
      throw dimension_error("tensor: rank must be 1..4");
    std::size_t n = 1;
    for (std::uint32_t d : dims_) {
      if (d == 0) throw dimension_error("tensor: zero-sized dimension");
      n *= d;
    }
    data_.assign(n, fill);
  }

  Tensor(std::initializer_list<std::uint32_t> dims, float fill = 0.0f)
      : Tensor(std::vector<std::uint32_t>(dims), fill) {}

  std::size_t rank() const { return dims_.size(); }
  const std::vector<std::uint32_t>& dims() const { return dims_; }
  std::uint32_t dim(std::size_t i) const { return dims_[i]; }
  std::size_t size() const { return data_.size(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }

  float& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  float& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }
  float at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  void require_rank(std::size_t r, const char* what) const {
    if (rank() != r)
      throw dimension_error(std::string(what) + ": expected rank " +
                            std::to_string(r) + ", got " + std::to_string(rank()));
  }

  void require_finite(const char* what) const {
    for (float v : data_)
      if (!std::isfinite(v))
        throw data_error(std::string(what) + ": non-finite entry");
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::uint32_t> dims_;
  std::vector<float> data_;
};

}  // namespace lcps
