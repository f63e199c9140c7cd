#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mist/checkpoint.hpp"
#include "mist/errors.hpp"
#include "mist/losses.hpp"
#include "mist/networks.hpp"
#include "mist/optim.hpp"
#include "mist/phantom.hpp"

namespace mist {

struct TrainConfig {
  std::size_t iterations = 200000;
  std::size_t batch_size = 2;
  double lr_main = 1e-4;
  double lr_mapping = 1e-6;
  double lambda_cyc = 10.0;
  double lambda_adv = 1.0;
  double lambda_ds = 1.0;
  std::size_t sdl_decay_iters = 100000;
  double style_source_mix = 0.5;  // probability of the reference-image style branch
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 10000;
  AdvLoss adv_loss = AdvLoss::linear;

  void validate() const;
  /// lambda_ds decayed linearly to 0 at sdl_decay_iters (iteration is 0-based).
  LossWeights weights_at(std::size_t iteration) const;

  nlohmann::json to_json() const;
  /// Missing keys keep defaults, except that a missing sdl_decay_iters follows
  /// iterations / 2. Unknown keys throw ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

/// Target domain t and the remaining input domains in ascending index order.
struct Task {
  Domain target = Domain::T1;
  std::array<Domain, kNumDomains - 1> inputs{};
};

Task task_for_target(Domain target);
/// t uniform over the four domains.
Task sample_task(Rng& rng);

enum class StyleSource { reference, latent };

/// Everything random about one sample's generator pass, resolved up front so
/// the objective itself is a deterministic function.
template <typename T>
struct GeneratorPlan {
  Task task;
  std::array<Tensor<T>, kNumDomains - 1> inputs;  // [1,1,S,S], task.inputs order
  Tensor<T> target;                               // x_t
  StyleSource source = StyleSource::reference;
  Tensor<T> second_reference;                     // reference branch: another x_t2
  Tensor<T> z1;                                   // latent branch
  Tensor<T> z2;
};

template <typename T>
struct GeneratorTerms {
  Tensor<T> csl;
  Tensor<T> ccl;
  Tensor<T> g_adv;
  Tensor<T> sdl;
  Tensor<T> total;
  Tensor<T> fake;
};

/// Forward pass and objective of one sample: x_hat_t from combined content and
/// target style, cyclic reconstruction of the inputs, adversarial and
/// diversification terms. When w.ds == 0 the second decode runs without a graph.
template <typename T>
GeneratorTerms<T> generator_objective(const MistNetworks<T>& nets, const GeneratorPlan<T>& plan, const LossWeights& w,
                                      AdvLoss adv);

/// Builds a plan for one sample; draws t, the style branch, noise and the
/// second reference (from `pool`) from rng in that order.
template <typename T>
GeneratorPlan<T> make_plan(const PhantomSample& sample, std::span<const PhantomSample> pool, const ArchConfig& arch,
                           double style_source_mix, Rng& rng);

/// Owns the optimizers and runs alternating discriminator/generator updates.
class Trainer {
 public:
  Trainer(MistNetworks<float>& nets, const TrainConfig& cfg, std::span<const PhantomSample> train);

  /// One generator update over the batch; returns the batch-mean terms.
  LossBreakdown generator_step(std::span<const PhantomSample* const> batch, const LossWeights& w, Rng& rng);
  /// One discriminator update with the generator frozen; returns mean dsc_adv.
  double discriminator_step(std::span<const PhantomSample* const> batch, Rng& rng);
  /// Iteration `index` (0-based): discriminator step then generator step, with
  /// randomness derived from (seed, index) only.
  LossBreakdown run_iteration(std::size_t index);

  std::size_t completed_iterations() const { return completed_; }

  Checkpoint make_checkpoint(const ArchConfig& arch) const;
  /// Restores parameters, optimizer state and the iteration counter.
  void restore(const Checkpoint& ckpt);

 private:
  std::vector<Adam<float>*> optimizers();
  std::vector<const Adam<float>*> optimizers() const;

  MistNetworks<float>& nets_;
  TrainConfig cfg_;
  std::span<const PhantomSample> train_;
  Adam<float> gen_opt_;
  Adam<float> map_opt_;
  Adam<float> dsc_opt_;
  std::size_t completed_ = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  /// Called after every iteration with the 1-based iteration number.
  std::function<void(std::size_t, const LossBreakdown&)> on_iteration;
};

/// Thrown when a step produces a non-finite value. `iteration` is 1-based.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t iteration, const std::string& what);
  std::size_t iteration;
};

/// Full loop with CSV log (`loss_log.csv`), periodic checkpoints
/// (`ckpt_<iter>.mist`, `latest.mist`) and resume. Returns the log rows of
/// this invocation.
std::vector<LossBreakdown> train(MistNetworks<float>& nets, const std::vector<PhantomSample>& train_set,
                                 const TrainConfig& cfg, const TrainOptions& options);

inline constexpr char kLossLogHeader[] = "iter,csl,ccl,cl,g_adv,sdl,g_total,dsc_adv";

/// Builds the networks described by a checkpoint header and loads its weights.
MistNetworks<float> load_networks(const Checkpoint& ckpt);

/// Where the target style for imputation comes from.
struct StyleChoice {
  enum class Kind { reference, latent, code };
  Kind kind = Kind::reference;
  const ModalityImage* reference = nullptr;  // Kind::reference
  std::uint64_t latent_seed = 0;             // Kind::latent
  std::vector<float> code;                   // Kind::code (e.g. a stored mean style)
};

/// Style code [1,S] for the target domain.
Tensor<float> resolve_style(const MistNetworks<float>& nets, const StyleChoice& choice, Domain target);

/// Validates that `inputs` cover D - {target} exactly, sorts them by domain
/// index and returns the combined content.
Content<float> combined_content(const MistNetworks<float>& nets, std::span<const ModalityImage> inputs, Domain target);

ModalityImage decode_image(const MistNetworks<float>& nets, const Content<float>& content, const Tensor<float>& style,
                           Domain domain);

/// Imputes the missing modality. Deterministic; input order does not matter.
ModalityImage impute(const MistNetworks<float>& nets, std::span<const ModalityImage> inputs, Domain target,
                     const StyleChoice& choice);

}  // namespace mist
