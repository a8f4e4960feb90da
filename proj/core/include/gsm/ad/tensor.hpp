#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace gsm::ad {

/// Dense row-major array of doubles. Rank 0 is a scalar; most operations work on rank 2.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double value) { return Tensor({}, {value}); }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  /// Rank-2 accessors.
  int rows() const;
  int cols() const;
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  double item() const;
  bool empty() const { return data.empty() && shape.empty(); }
  bool all_finite() const;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

/// Named trainable array (or frozen buffer when `trainable` is false).
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

/// Owns parameters with stable addresses, in insertion order.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor value, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  /// Trainable parameters whose name starts with `prefix`.
  std::vector<Parameter*> trainable(const std::string& prefix = "");
  void zero_grad();
  std::size_t count() const;  // total number of scalars
  /// Order-sensitive hash of the raw bytes of every value whose name starts with `prefix`.
  std::uint64_t checksum(const std::string& prefix = "") const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace gsm::ad
