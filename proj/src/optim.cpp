#include "deephuman/optim.hpp"

#include <cmath>

namespace dh {

template <typename T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor<T> t(std::move(shape), true);
  t.zero_grad();
  index_.emplace(name, params_.size());
  params_.push_back({name, std::move(t)});
  return params_.back().tensor;
}

template <typename T>
Tensor<T>& ParameterStore<T>::add_uniform(const std::string& name, Shape shape, double bound,
                                          std::mt19937_64& rng) {
  Tensor<T>& t = add(name, std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_values()) v = T(dist(rng));
  return t;
}

template <typename T>
Tensor<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].tensor;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].tensor;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void Adam<T>::step(ParameterStore<T>& store) {
  for (const auto& p : store.params())
    if (!p.tensor.has_grad()) throw std::logic_error("adam: parameter " + p.name + " has no gradient");

  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(step_));
  const double bc2 = 1.0 - std::pow(b2, double(step_));
  const double lr = options_.lr;
  const double eps = options_.eps;

  for (auto& p : store.params()) {
    auto& mom = moments_[p.name];
    const std::size_t n = p.tensor.numel();
    if (mom.m.size() != n) {
      mom.m.assign(n, T(0));
      mom.v.assign(n, T(0));
    }
    auto w = p.tensor.mutable_values();
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = double(g[i]);
      const double m = b1 * double(mom.m[i]) + (1.0 - b1) * gi;
      const double v = b2 * double(mom.v[i]) + (1.0 - b2) * gi * gi;
      mom.m[i] = T(m);
      mom.v[i] = T(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      w[i] = T(double(w[i]) - lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace dh
