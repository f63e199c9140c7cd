#include "mist/losses.hpp"

#include <fmt/format.h>

#include "mist/errors.hpp"
#include "mist/ops.hpp"

namespace mist {

namespace {

// Keeps log() finite for saturated sigmoid outputs.
constexpr double kLogFloor = 1e-7;

template <typename T>
void check_probabilities(const Tensor<T>& p, const char* what) {
  for (const T v : p.data()) {
    if (!(v >= T(0) && v <= T(1))) {
      throw UsageError(fmt::format("{}: probability {} outside [0,1]", what, v));
    }
  }
}

// -log(p) or -log(1 - p), averaged.
template <typename T>
Tensor<T> neg_log_mean(const Tensor<T>& p, bool complement) {
  Tensor<T> q = complement ? add_scalar(scale(p, -1.0), 1.0) : p;
  return scale(mean(natural_log(add_scalar(q, kLogFloor))), -1.0);
}

}  // namespace

std::string_view adv_loss_name(AdvLoss kind) { return kind == AdvLoss::linear ? "linear" : "bce"; }

AdvLoss parse_adv_loss(std::string_view text) {
  if (text == "linear") return AdvLoss::linear;
  if (text == "bce") return AdvLoss::bce;
  throw ConfigError(fmt::format("adv_loss must be 'linear' or 'bce', got '{}'", text));
}

template <typename T>
Tensor<T> csl(const Tensor<T>& s_real, const Tensor<T>& s_fake) {
  if (s_real.shape() != s_fake.shape()) {
    throw DimensionError(fmt::format("csl: style dims {} vs {}", shape_str(s_real.shape()), shape_str(s_fake.shape())));
  }
  return l1_mean(s_real, s_fake);
}

template <typename T>
Tensor<T> ccl(std::span<const DomainImage<T>> reconstructed, std::span<const DomainImage<T>> originals) {
  if (reconstructed.size() != originals.size() || reconstructed.empty()) {
    throw DimensionError(fmt::format("ccl: {} reconstructions for {} originals", reconstructed.size(), originals.size()));
  }
  Tensor<T> total;
  for (std::size_t i = 0; i < reconstructed.size(); ++i) {
    if (reconstructed[i].domain != originals[i].domain) {
      throw UsageError(fmt::format("ccl: pair {} mixes domains {} and {}", i, domain_name(reconstructed[i].domain),
                                   domain_name(originals[i].domain)));
    }
    Tensor<T> term = l1_mean(reconstructed[i].image, originals[i].image);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
Tensor<T> g_adv(const Tensor<T>& p_fake, AdvLoss kind) {
  check_probabilities(p_fake, "g_adv");
  if (kind == AdvLoss::bce) {
    return neg_log_mean(p_fake, false);
  }
  return add_scalar(scale(mean(p_fake), -1.0), 1.0);
}

template <typename T>
Tensor<T> dsc_adv(const Tensor<T>& p_real, const Tensor<T>& p_fake, AdvLoss kind) {
  check_probabilities(p_real, "dsc_adv");
  check_probabilities(p_fake, "dsc_adv");
  if (kind == AdvLoss::bce) {
    return add(neg_log_mean(p_real, false), neg_log_mean(p_fake, true));
  }
  // (1 - D(x_t)) + |0 - D(x_hat_t)|
  return add(add_scalar(scale(mean(p_real), -1.0), 1.0), mean(p_fake));
}

template <typename T>
Tensor<T> sdl(const Tensor<T>& x_hat_1, const Tensor<T>& x_hat_2) {
  if (x_hat_1.shape() != x_hat_2.shape()) {
    throw DimensionError(fmt::format("sdl: {} vs {}", shape_str(x_hat_1.shape()), shape_str(x_hat_2.shape())));
  }
  return l1_mean(x_hat_1, x_hat_2);
}

LossBreakdown LossBreakdown::assemble(double csl, double ccl, double g_adv, double sdl, double dsc_adv,
                                      const LossWeights& w) {
  LossBreakdown b;
  b.csl = csl;
  b.ccl = ccl;
  b.cl = csl + ccl;
  b.g_adv = g_adv;
  b.sdl = sdl;
  b.g_total = w.cyc * b.cl + w.adv * g_adv - w.ds * sdl;
  b.dsc_adv = dsc_adv;
  return b;
}

template <typename T>
Tensor<T> generator_total(const Tensor<T>& csl, const Tensor<T>& ccl, const Tensor<T>& g_adv, const Tensor<T>& sdl,
                          const LossWeights& w) {
  return sub(add(scale(add(csl, ccl), w.cyc), scale(g_adv, w.adv)), scale(sdl, w.ds));
}

#define MIST_INSTANTIATE_LOSSES(T)                                                                     \
  template Tensor<T> csl(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> ccl(std::span<const DomainImage<T>>, std::span<const DomainImage<T>>);            \
  template Tensor<T> g_adv(const Tensor<T>&, AdvLoss);                                                 \
  template Tensor<T> dsc_adv(const Tensor<T>&, const Tensor<T>&, AdvLoss);                             \
  template Tensor<T> sdl(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> generator_total(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     const LossWeights&);

MIST_INSTANTIATE_LOSSES(float)
MIST_INSTANTIATE_LOSSES(double)

#undef MIST_INSTANTIATE_LOSSES

}  // namespace mist
