#include "mist/optim.hpp"

#include <cmath>

#include "mist/errors.hpp"

namespace mist {

template <typename T>
Tensor<T> he_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) {
    throw ConfigError("he_init: fan_in must be positive");
  }
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) {
    v = static_cast<T>(rng.normal(0.0, stddev));
  }
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>> params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
  states_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    states_[i].m.assign(params_[i].tensor.numel(), T(0));
    states_[i].v.assign(params_[i].tensor.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) {
      throw UsageError("adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  const T b1 = static_cast<T>(hyper_.beta1);
  const T b2 = static_cast<T>(hyper_.beta2);
  const T eps = static_cast<T>(hyper_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& state = states_[k];
    auto param = params_[k].tensor;
    ++state.t;
    const double t = static_cast<double>(state.t);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(hyper_.beta1, t)));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(hyper_.beta2, t)));
    const T lr = static_cast<T>(hyper_.lr);
    auto values = param.data();
    const auto grad = param.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = grad[i];
      state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
      state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
      const T m_hat = state.m[i] * c1;
      const T v_hat = state.v[i] * c2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) {
    p.tensor.zero_grad();
  }
}

template Tensor<float> he_init(const Shape&, std::size_t, Rng&);
template Tensor<double> he_init(const Shape&, std::size_t, Rng&);
template class Adam<float>;
template class Adam<double>;

}  // namespace mist
