#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mist/checkpoint.hpp"
#include "mist/domain.hpp"
#include "mist/optim.hpp"
#include "mist/phantom.hpp"
#include "mist/tensor.hpp"

namespace mist {

/// Architecture hyperparameters. Channel width at level i is
/// min(base_ch * 2^i, content_ch); the content itself has content_ch channels
/// at size / 2^levels.
struct ArchConfig {
  std::size_t size = 64;
  std::size_t levels = 3;
  std::size_t base_ch = 32;
  std::size_t content_ch = 128;
  std::size_t style_dim = 64;
  std::size_t noise_dim = 16;
  std::size_t map_width = 128;
  std::size_t domain_emb = 16;
  std::size_t dsc_blocks = 4;

  void validate() const;
  std::size_t channels(std::size_t level) const;
  std::size_t content_size() const { return size >> levels; }

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys throw ConfigError.
  static ArchConfig from_json(const nlohmann::json& j);
  bool operator==(const ArchConfig&) const = default;
};

/// Latent content map plus the per-level skip features captured before each
/// down-sampling step (skips[i] is at size / 2^i with channels(i) channels).
/// Combined content uses the same layout, so the decoder accepts either.
template <typename T>
struct Content {
  Tensor<T> latent;
  std::vector<Tensor<T>> skips;
};

/// [N,1,S,S] tensor from images of equal size.
template <typename T>
Tensor<T> image_batch(std::span<const ModalityImage* const> images);

template <typename T>
Tensor<T> image_tensor(const ModalityImage& image) {
  const ModalityImage* one[] = {&image};
  return image_batch<T>(one);
}

/// The seven modules: style encoder (SE), mapping network (M), content encoder
/// (CE), decoder (Dec), combiner (Comb), separator (Sep) and the multi-branch
/// discriminator (Dsc). All forward functions are pure in (inputs, params).
template <typename T>
class MistNetworks {
 public:
  MistNetworks(const ArchConfig& config, std::uint64_t seed);

  const ArchConfig& config() const { return config_; }

  /// x [N,1,S,S] -> style codes [N,style_dim] from head d.
  Tensor<T> style_encode(const Tensor<T>& x, Domain d) const;
  /// z [N,noise_dim] -> style codes [N,style_dim] from head d.
  Tensor<T> map_noise(const Tensor<T>& z, Domain d) const;
  Content<T> content_encode(const Tensor<T>& x) const;
  /// Returns [N,1,S,S] in (0,1).
  Tensor<T> decode(const Content<T>& content, const Tensor<T>& style) const;
  /// Exactly three contents in ascending domain order of the input set.
  Content<T> combine(std::span<const Content<T>> contents) const;
  Content<T> separate(const Content<T>& combined, Domain d) const;
  /// x [N,1,S,S] -> probabilities [N,1] from branch d.
  Tensor<T> discriminate(const Tensor<T>& x, Domain d) const;

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  /// Parameters whose name starts with "<module>." (SE, M, CE, Dec, Comb, Sep, Dsc).
  std::vector<Parameter<T>> module_parameters(std::string_view module) const;
  std::size_t parameter_count() const;

  /// Parameter values as float checkpoint entries, in registration order.
  std::vector<CheckpointEntry> export_parameters() const;
  /// Loads every parameter by name; throws IoError on a missing or mis-shaped entry.
  void import_parameters(const Checkpoint& ckpt);

 private:
  struct Conv {
    Tensor<T> weight;
    Tensor<T> bias;
    int stride = 1;
    int pad = 1;
    Tensor<T> operator()(const Tensor<T>& x) const;
  };
  struct Linear {
    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> operator()(const Tensor<T>& x) const;
  };

  Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, int stride, Rng& rng);
  Linear make_linear(const std::string& name, std::size_t din, std::size_t dout, Rng& rng, double bias_value = 0.0);
  Tensor<T> register_param(const std::string& name, Tensor<T> t);

  ArchConfig config_;
  std::vector<Parameter<T>> params_;

  std::vector<Conv> se_trunk_;
  std::vector<Linear> se_heads_;
  std::vector<Linear> map_trunk_;
  std::vector<Linear> map_heads_;
  Conv ce_stem_;
  std::vector<Conv> ce_down_;
  std::vector<Conv> dec_up_;
  std::vector<Linear> dec_gamma_;
  std::vector<Linear> dec_beta_;
  Conv dec_out_;
  std::vector<Conv> comb_;
  Tensor<T> sep_embedding_;
  std::vector<Conv> sep_;
  std::vector<Conv> dsc_trunk_;
  std::vector<Linear> dsc_heads_;
};

}  // namespace mist
