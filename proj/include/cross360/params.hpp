#pragma once

// Named, ordered parameter storage with seeded initialization and the
// checkpoint format: a JSON manifest (name -> shape) plus a little-endian
// float32 blob holding the tensors in lexicographic name order.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cross360/tensor.hpp"

namespace cross360::nn {

class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  /// Uniform in [-bound, bound] with bound = gain * sqrt(3 / fan_in).
  Tensor add_uniform(const std::string& name, Shape shape, int fan_in, double gain = 1.0);
  Tensor add_constant(const std::string& name, Shape shape, double value);
  Tensor add_identity(const std::string& name, int n);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t scalar_count() const;

  void zero_grad();
  /// value -= step * grad for every parameter.
  void sgd_step(double step);

  std::map<std::string, Shape> manifest() const;
  std::string manifest_json() const;
  std::vector<std::uint8_t> blob() const;

  void save(const std::string& manifest_path, const std::string& blob_path) const;
  /// Throws ValidationError listing every missing, unexpected or reshaped entry.
  void load(const std::string& manifest_path, const std::string& blob_path);
  void load_from(const std::string& manifest_json, const std::vector<std::uint8_t>& blob);

 private:
  Tensor insert(const std::string& name, Shape shape, std::vector<double> values);

  std::mt19937_64 rng_;
  std::vector<std::string> order_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace cross360::nn
