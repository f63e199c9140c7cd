#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mist/rng.hpp"
#include "mist/tensor.hpp"

namespace mist {

/// A named trainable tensor. The name is the checkpoint key.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Samples normal(0, sqrt(2 / fan_in)).
template <typename T>
Tensor<T> he_init(const Shape& shape, std::size_t fan_in, Rng& rng);

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t t = 0;
};

/// Adam with bias correction over a fixed list of parameters.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter<T>> params, AdamHyper hyper);

  /// One update of every parameter. Throws UsageError if a parameter has no
  /// grad buffer (never zeroed nor reached by backward).
  void step();
  void zero_grad();

  const AdamHyper& hyper() const { return hyper_; }
  void set_lr(double lr) { hyper_.lr = lr; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<AdamState<T>>& states() { return states_; }
  const std::vector<AdamState<T>>& states() const { return states_; }

 private:
  std::vector<Parameter<T>> params_;
  std::vector<AdamState<T>> states_;
  AdamHyper hyper_;
};

}  // namespace mist
