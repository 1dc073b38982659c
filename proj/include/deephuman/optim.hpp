#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "deephuman/tensor.hpp"

namespace dh {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered, uniquely named collection of trainable tensors.
template <typename T>
class ParameterStore {
 public:
  /// Registers a zero-initialized parameter. Throws on a duplicate name.
  Tensor<T>& add(const std::string& name, Shape shape);
  /// Registers a parameter initialized uniformly in [-bound, bound].
  Tensor<T>& add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter moment buffers, kept in the parameter's own precision.
template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// One bias-corrected update of every parameter in the store.
  /// Throws if any parameter lacks a gradient buffer.
  void step(ParameterStore<T>& store);

  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t s) { step_ = s; }
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

  std::map<std::string, AdamMoments<T>>& moments() { return moments_; }
  const std::map<std::string, AdamMoments<T>>& moments() const { return moments_; }

 private:
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::map<std::string, AdamMoments<T>> moments_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace dh
