#include "gsm/ad/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "gsm/error.hpp"

namespace gsm::ad {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) {
    if (s < 0) throw ContractViolation("negative tensor dimension");
    n *= static_cast<std::size_t>(s);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s + "]";
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_size(shape)) {
    throw ContractViolation("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                            shape_string(shape));
  }
}

int Tensor::rows() const {
  if (rank() != 2) throw ContractViolation("expected a rank-2 tensor, got " + shape_string(shape));
  return shape[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw ContractViolation("expected a rank-2 tensor, got " + shape_string(shape));
  return shape[1];
}

double Tensor::item() const {
  if (data.size() != 1) throw ContractViolation("item() on tensor of shape " + shape_string(shape));
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Parameter::zero_grad() {
  if (grad.shape != value.shape) grad = Tensor(value.shape);
  std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

Parameter& ParameterSet::add(const std::string& name, Tensor value, bool trainable) {
  if (contains(name)) throw ContractViolation("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(value.shape);
  p->value = std::move(value);
  p->trainable = trainable;
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw ContractViolation("no parameter named '" + name + "'");
}

const Parameter& ParameterSet::get(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return true;
  }
  return false;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterSet::trainable(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->trainable && p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::uint64_t ParameterSet::checksum(const std::string& prefix) const {
  // FNV-1a over names and value bytes.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : params_) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    mix(p->name.data(), p->name.size());
    mix(p->value.data.data(), p->value.data.size() * sizeof(double));
  }
  return h;
}

}  // namespace gsm::ad
