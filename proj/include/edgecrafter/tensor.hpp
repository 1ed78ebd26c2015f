// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ec {

// Error taxonomy shared by every module. All derive from std::runtime_error so
// callers that only care about "something was wrong with the input" can catch
// the base class.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct SizeError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 array with an explicit shape.
///
/// A default-constructed tensor is the empty tensor (rank 0, no values) and is
/// used as "absent" for optional fields. Every other tensor has strictly
/// positive dimensions and finite values; construction from external data
/// rejects NaN/Inf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor filled(Shape shape, float value);

  bool empty() const { return shape_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }

  std::span<const float> values() const { return data_; }
  std::span<float> values() { return data_; }
  const float* data() const { return data_.data(); }
  float* data() { return data_.data(); }

  float& operator[](std::size_t flat) { return data_[flat]; }
  float operator[](std::size_t flat) const { return data_[flat]; }

  float at(std::initializer_list<std::size_t> index) const;
  float& at(std::initializer_list<std::size_t> index);

  /// Same values, new shape with equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  /// Throws InputError when any value is NaN or infinite.
  void check_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<float> data_;
};

void require_rank(const Tensor& t, std::size_t rank, const char* what);

}  // namespace ec
