#include "cross360/params.hpp"

#include <bit>
#include <cmath>
#include <nlohmann/json.hpp>

#include "cross360/error.hpp"
#include "cross360/io.hpp"

namespace cross360::nn {

using nlohmann::json;

Tensor ParameterStore::insert(const std::string& name, Shape shape, std::vector<double> values) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  index_[name] = tensors_.size();
  order_.push_back(name);
  tensors_.push_back(t);
  return t;
}

Tensor ParameterStore::add_uniform(const std::string& name, Shape shape, int fan_in, double gain) {
  const double bound = gain * std::sqrt(3.0 / std::max(1, fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng_);
  return insert(name, std::move(shape), std::move(values));
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, double value) {
  std::vector<double> values(shape_numel(shape), value);
  return insert(name, std::move(shape), std::move(values));
}

Tensor ParameterStore::add_identity(const std::string& name, int n) {
  std::vector<double> values(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) values[static_cast<std::size_t>(i) * n + i] = 1.0;
  return insert(name, {n, n}, std::move(values));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return tensors_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

void ParameterStore::sgd_step(double step) {
  for (auto& t : tensors_) {
    auto v = t.mutable_value();
    const auto g = t.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= step * g[i];
  }
}

std::map<std::string, Shape> ParameterStore::manifest() const {
  std::map<std::string, Shape> m;
  for (std::size_t i = 0; i < order_.size(); ++i) m[order_[i]] = tensors_[i].shape();
  return m;
}

std::string ParameterStore::manifest_json() const {
  json tensors = json::object();
  for (const auto& [name, shape] : manifest()) tensors[name] = shape;
  json doc;
  doc["format"] = "cross360-checkpoint";
  doc["dtype"] = "float32-le";
  doc["order"] = "lexicographic";
  doc["tensors"] = tensors;
  return doc.dump(2) + "\n";
}

std::vector<std::uint8_t> ParameterStore::blob() const {
  std::vector<std::uint8_t> out;
  out.reserve(scalar_count() * 4);
  for (const auto& [name, shape] : manifest()) {
    for (double v : get(name).value()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
    }
  }
  return out;
}

void ParameterStore::save(const std::string& manifest_path, const std::string& blob_path) const {
  const auto bytes = blob();
  write_file_atomic(blob_path, bytes.data(), bytes.size());
  write_text_file_atomic(manifest_path, manifest_json());
}

void ParameterStore::load(const std::string& manifest_path, const std::string& blob_path) {
  load_from(read_text_file(manifest_path), read_file(blob_path));
}

void ParameterStore::load_from(const std::string& manifest_text, const std::vector<std::uint8_t>& blob) {
  json doc;
  try {
    doc = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  if (!doc.contains("tensors") || !doc["tensors"].is_object()) {
    throw ValidationError("checkpoint manifest lacks a 'tensors' object");
  }
  std::map<std::string, Shape> theirs;
  for (const auto& [name, shape] : doc["tensors"].items()) theirs[name] = shape.get<Shape>();
  const auto ours = manifest();

  std::string diff;
  for (const auto& [name, shape] : ours) {
    auto it = theirs.find(name);
    if (it == theirs.end()) {
      diff += "\n  missing: " + name + " " + shape_string(shape);
    } else if (it->second != shape) {
      diff += "\n  shape: " + name + " model " + shape_string(shape) + " checkpoint " + shape_string(it->second);
    }
  }
  for (const auto& [name, shape] : theirs) {
    if (!ours.count(name)) diff += "\n  unexpected: " + name + " " + shape_string(shape);
  }
  if (!diff.empty()) throw ValidationError("checkpoint does not match the model config:" + diff);
  if (blob.size() != scalar_count() * 4) {
    throw ValidationError("checkpoint blob holds " + std::to_string(blob.size()) + " bytes, expected " +
                          std::to_string(scalar_count() * 4));
  }
  std::size_t offset = 0;
  for (const auto& [name, shape] : ours) {
    auto v = tensors_[index_.at(name)].mutable_value();
    for (double& x : v) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(blob[offset + i]) << (8 * i);
      x = std::bit_cast<float>(bits);
      offset += 4;
    }
  }
}

}  // namespace cross360::nn
