#pragma once

#include <span>
#include <string_view>

#include "mist/domain.hpp"
#include "mist/tensor.hpp"

namespace mist {

/// Adversarial loss form. `linear` uses |target - prediction| on the
/// discriminator probability; `bce` is the binary cross-entropy alternative.
enum class AdvLoss { linear, bce };

std::string_view adv_loss_name(AdvLoss kind);
AdvLoss parse_adv_loss(std::string_view text);

/// An image tensor tagged with its modality.
template <typename T>
struct DomainImage {
  Domain domain;
  Tensor<T> image;
};

/// Cyclic style loss: mean |s_real - s_fake|.
template <typename T>
Tensor<T> csl(const Tensor<T>& s_real, const Tensor<T>& s_fake);

/// Cyclic content loss: sum over domains of the per-image mean absolute error.
/// Pairs must agree in domain and shape.
template <typename T>
Tensor<T> ccl(std::span<const DomainImage<T>> reconstructed, std::span<const DomainImage<T>> originals);

/// Generator adversarial term, averaged over the batch: 1 - p_fake (linear).
template <typename T>
Tensor<T> g_adv(const Tensor<T>& p_fake, AdvLoss kind = AdvLoss::linear);

/// Discriminator term, averaged over the batch: (1 - p_real) + p_fake (linear).
template <typename T>
Tensor<T> dsc_adv(const Tensor<T>& p_real, const Tensor<T>& p_fake, AdvLoss kind = AdvLoss::linear);

/// Style diversification: mean |x_hat_1 - x_hat_2|.
template <typename T>
Tensor<T> sdl(const Tensor<T>& x_hat_1, const Tensor<T>& x_hat_2);

struct LossWeights {
  double cyc = 10.0;
  double adv = 1.0;
  double ds = 1.0;
};

/// Scalar loss values of one step. `cl` and `g_total` are always derived from
/// the other fields by `assemble`, so the identities hold exactly.
struct LossBreakdown {
  double csl = 0;
  double ccl = 0;
  double cl = 0;
  double g_adv = 0;
  double sdl = 0;
  double g_total = 0;
  double dsc_adv = 0;

  static LossBreakdown assemble(double csl, double ccl, double g_adv, double sdl, double dsc_adv, const LossWeights& w);
};

/// lambda_cyc * (csl + ccl) + lambda_adv * g_adv - lambda_ds * sdl
template <typename T>
Tensor<T> generator_total(const Tensor<T>& csl, const Tensor<T>& ccl, const Tensor<T>& g_adv, const Tensor<T>& sdl,
                          const LossWeights& w);

}  // namespace mist
