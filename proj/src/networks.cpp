#include "mist/networks.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>

#include "mist/errors.hpp"
#include "mist/ops.hpp"

namespace mist {

namespace {

void check_domain(Domain d) {
  if (domain_index(d) >= kNumDomains) {
    throw UsageError(fmt::format("unknown domain index {}", domain_index(d)));
  }
}

}  // namespace

void ArchConfig::validate() const {
  if (size < 16 || !std::has_single_bit(size)) {
    throw ConfigError(fmt::format("size must be a power of two >= 16, got {}", size));
  }
  if (levels < 1 || (size >> levels) < 2) {
    throw ConfigError(fmt::format("levels={} leaves less than 2x2 content for size {}", levels, size));
  }
  if (dsc_blocks < 1 || (size >> dsc_blocks) < 1) {
    throw ConfigError(fmt::format("dsc_blocks={} too deep for size {}", dsc_blocks, size));
  }
  for (auto [name, v] : {std::pair{"base_ch", base_ch}, {"content_ch", content_ch}, {"style_dim", style_dim},
                         {"noise_dim", noise_dim}, {"map_width", map_width}, {"domain_emb", domain_emb}}) {
    if (v == 0) {
      throw ConfigError(fmt::format("{} must be positive", name));
    }
  }
}

std::size_t ArchConfig::channels(std::size_t level) const {
  if (level >= levels) {
    return content_ch;
  }
  return std::min(base_ch << level, content_ch);
}

nlohmann::json ArchConfig::to_json() const {
  return {{"size", size},           {"levels", levels},       {"base_ch", base_ch},
          {"content_ch", content_ch}, {"style_dim", style_dim}, {"noise_dim", noise_dim},
          {"map_width", map_width}, {"domain_emb", domain_emb}, {"dsc_blocks", dsc_blocks}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ConfigError("architecture config must be a JSON object");
  }
  ArchConfig c;
  for (const auto& [key, value] : j.items()) {
    std::size_t* field = nullptr;
    if (key == "size") field = &c.size;
    else if (key == "levels") field = &c.levels;
    else if (key == "base_ch") field = &c.base_ch;
    else if (key == "content_ch") field = &c.content_ch;
    else if (key == "style_dim") field = &c.style_dim;
    else if (key == "noise_dim") field = &c.noise_dim;
    else if (key == "map_width") field = &c.map_width;
    else if (key == "domain_emb") field = &c.domain_emb;
    else if (key == "dsc_blocks") field = &c.dsc_blocks;
    if (field == nullptr) {
      throw ConfigError("unknown architecture key '" + key + "'");
    }
    if (!value.is_number_integer() || (!value.is_number_unsigned() && value.get<std::int64_t>() < 0)) {
      throw ConfigError("architecture key '" + key + "' must be a non-negative integer");
    }
    *field = value.get<std::size_t>();
  }
  return c;
}

template <typename T>
Tensor<T> image_batch(std::span<const ModalityImage* const> images) {
  if (images.empty()) {
    throw DimensionError("image_batch: no images");
  }
  const std::size_t s = images[0]->size;
  std::vector<T> values;
  values.reserve(images.size() * s * s);
  for (const ModalityImage* img : images) {
    if (img->size != s || img->pixels.size() != s * s) {
      throw DimensionError("image_batch: images differ in size");
    }
    values.insert(values.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor<T>(Shape{images.size(), 1, s, s}, std::move(values));
}

template <typename T>
Tensor<T> MistNetworks<T>::Conv::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, stride, pad);
}

template <typename T>
Tensor<T> MistNetworks<T>::Linear::operator()(const Tensor<T>& x) const {
  return dense(x, weight, bias);
}

template <typename T>
Tensor<T> MistNetworks<T>::register_param(const std::string& name, Tensor<T> t) {
  for (const auto& p : params_) {
    if (p.name == name) {
      throw UsageError("duplicate parameter name " + name);
    }
  }
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
typename MistNetworks<T>::Conv MistNetworks<T>::make_conv(const std::string& name, std::size_t cin, std::size_t cout,
                                                          int stride, Rng& rng) {
  Conv c;
  c.weight = register_param(name + ".weight", he_init<T>(Shape{cout, cin, 3, 3}, cin * 9, rng));
  c.bias = register_param(name + ".bias", Tensor<T>(Shape{cout}, T(0)));
  c.stride = stride;
  c.pad = 1;
  return c;
}

template <typename T>
typename MistNetworks<T>::Linear MistNetworks<T>::make_linear(const std::string& name, std::size_t din, std::size_t dout,
                                                              Rng& rng, double bias_value) {
  Linear l;
  l.weight = register_param(name + ".weight", he_init<T>(Shape{dout, din}, din, rng));
  l.bias = register_param(name + ".bias", Tensor<T>(Shape{dout}, static_cast<T>(bias_value)));
  return l;
}

template <typename T>
MistNetworks<T>::MistNetworks(const ArchConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  const std::size_t L = c.levels;

  // SE: L strided conv + lrelu blocks, global pooling, one dense head per domain.
  for (std::size_t i = 0; i < L; ++i) {
    se_trunk_.push_back(make_conv(fmt::format("SE.conv{}", i), i == 0 ? 1 : c.channels(i - 1), c.channels(i), 2, rng));
  }
  for (Domain d : kAllDomains) {
    se_heads_.push_back(make_linear(fmt::format("SE.head.{}", domain_name(d)), c.channels(L - 1), c.style_dim, rng));
  }

  // M: four dense + relu layers, one head per domain.
  for (std::size_t i = 0; i < 4; ++i) {
    map_trunk_.push_back(make_linear(fmt::format("M.fc{}", i), i == 0 ? c.noise_dim : c.map_width, c.map_width, rng));
  }
  for (Domain d : kAllDomains) {
    map_heads_.push_back(make_linear(fmt::format("M.head.{}", domain_name(d)), c.map_width, c.style_dim, rng));
  }

  // CE: full-resolution stem, then L stride-2 conv + IN blocks.
  ce_stem_ = make_conv("CE.stem", 1, c.channels(0), 1, rng);
  for (std::size_t i = 0; i < L; ++i) {
    ce_down_.push_back(make_conv(fmt::format("CE.down{}", i), c.channels(i), c.channels(i + 1), 2, rng));
  }

  // Dec: per level upsample, conv, skip high-pass, AdaIN, relu; then 1-channel output.
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t i = L - 1 - j;
    dec_up_.push_back(make_conv(fmt::format("Dec.up{}", j), c.channels(i + 1), c.channels(i), 1, rng));
    dec_gamma_.push_back(make_linear(fmt::format("Dec.adain{}.gamma", j), c.style_dim, c.channels(i), rng, 1.0));
    dec_beta_.push_back(make_linear(fmt::format("Dec.adain{}.beta", j), c.style_dim, c.channels(i), rng));
  }
  dec_out_ = make_conv("Dec.out", c.channels(0), 1, 1, rng);

  comb_.push_back(make_conv("Comb.conv0", 3 * c.content_ch, c.content_ch, 1, rng));
  comb_.push_back(make_conv("Comb.conv1", c.content_ch, c.content_ch, 1, rng));

  sep_embedding_ = register_param("Sep.embedding", he_init<T>(Shape{kNumDomains, c.domain_emb}, 2, rng));
  sep_.push_back(make_conv("Sep.conv0", c.content_ch + c.domain_emb, c.content_ch, 1, rng));
  sep_.push_back(make_conv("Sep.conv1", c.content_ch, c.content_ch, 1, rng));

  for (std::size_t b = 0; b < c.dsc_blocks; ++b) {
    dsc_trunk_.push_back(make_conv(fmt::format("Dsc.conv{}", b), b == 0 ? 1 : c.channels(b - 1), c.channels(b), 2, rng));
  }
  for (Domain d : kAllDomains) {
    dsc_heads_.push_back(make_linear(fmt::format("Dsc.head.{}", domain_name(d)), c.channels(c.dsc_blocks - 1), 1, rng));
  }
}

template <typename T>
Tensor<T> MistNetworks<T>::style_encode(const Tensor<T>& x, Domain d) const {
  check_domain(d);
  Tensor<T> h = x;
  for (const auto& conv : se_trunk_) {
    h = leaky_relu(conv(h));
  }
  return se_heads_[domain_index(d)](global_avg_pool(h));
}

template <typename T>
Tensor<T> MistNetworks<T>::map_noise(const Tensor<T>& z, Domain d) const {
  check_domain(d);
  if (z.rank() != 2 || z.dim(1) != config_.noise_dim) {
    throw DimensionError(fmt::format("map_noise: expected [N,{}], got {}", config_.noise_dim, shape_str(z.shape())));
  }
  Tensor<T> h = z;
  for (const auto& fc : map_trunk_) {
    h = relu(fc(h));
  }
  return map_heads_[domain_index(d)](h);
}

template <typename T>
Content<T> MistNetworks<T>::content_encode(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != config_.size || x.dim(3) != config_.size) {
    throw DimensionError(fmt::format("content_encode: expected [N,1,{0},{0}], got {1}", config_.size, shape_str(x.shape())));
  }
  Content<T> out;
  Tensor<T> h = relu(instance_norm(ce_stem_(x)));
  for (std::size_t i = 0; i < ce_down_.size(); ++i) {
    out.skips.push_back(h);
    h = instance_norm(ce_down_[i](h));
    if (i + 1 < ce_down_.size()) {
      h = relu(h);
    }
  }
  out.latent = h;
  return out;
}

template <typename T>
Tensor<T> MistNetworks<T>::decode(const Content<T>& content, const Tensor<T>& style) const {
  const std::size_t L = config_.levels;
  if (style.rank() != 2 || style.dim(1) != config_.style_dim) {
    throw DimensionError(fmt::format("decode: style must be [N,{}], got {}", config_.style_dim, shape_str(style.shape())));
  }
  const Tensor<T>& latent = content.latent;
  if (latent.rank() != 4 || latent.dim(1) != config_.content_ch || latent.dim(2) != config_.content_size() ||
      content.skips.size() != L) {
    throw DimensionError("decode: content does not match the architecture config");
  }
  if (style.dim(0) != latent.dim(0)) {
    throw DimensionError("decode: style batch does not match content batch");
  }
  Tensor<T> h = latent;
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t i = L - 1 - j;
    h = add(dec_up_[j](upsample2x(h)), highpass3x3(content.skips[i]));
    h = relu(adain(h, dec_gamma_[j](style), dec_beta_[j](style)));
  }
  return sigmoid(dec_out_(h));
}

template <typename T>
Content<T> MistNetworks<T>::combine(std::span<const Content<T>> contents) const {
  if (contents.size() != kNumDomains - 1) {
    throw UsageError(fmt::format("combine: expected {} contents, got {}", kNumDomains - 1, contents.size()));
  }
  for (const auto& c : contents) {
    if (c.latent.shape() != contents[0].latent.shape() || c.skips.size() != contents[0].skips.size()) {
      throw DimensionError("combine: inconsistent content dimensions");
    }
  }
  std::vector<Tensor<T>> latents;
  for (const auto& c : contents) {
    latents.push_back(c.latent);
  }
  Content<T> out;
  Tensor<T> h = relu(instance_norm(comb_[0](concat_channels<T>(latents))));
  out.latent = instance_norm(comb_[1](h));
  for (std::size_t i = 0; i < contents[0].skips.size(); ++i) {
    std::vector<Tensor<T>> level;
    for (const auto& c : contents) {
      level.push_back(c.skips[i]);
    }
    out.skips.push_back(average<T>(level));
  }
  return out;
}

template <typename T>
Content<T> MistNetworks<T>::separate(const Content<T>& combined, Domain d) const {
  check_domain(d);
  const Tensor<T>& cc = combined.latent;
  if (cc.rank() != 4 || cc.dim(1) != config_.content_ch) {
    throw DimensionError("separate: combined content does not match the architecture config");
  }
  const std::vector<std::size_t> rows(cc.dim(0), domain_index(d));
  const Tensor<T> emb = broadcast_spatial(gather_rows(sep_embedding_, rows), cc.dim(2), cc.dim(3));
  const Tensor<T> parts[] = {cc, emb};
  Content<T> out;
  Tensor<T> h = relu(instance_norm(sep_[0](concat_channels<T>(parts))));
  out.latent = instance_norm(sep_[1](h));
  out.skips = combined.skips;
  return out;
}

template <typename T>
Tensor<T> MistNetworks<T>::discriminate(const Tensor<T>& x, Domain d) const {
  check_domain(d);
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != config_.size || x.dim(3) != config_.size) {
    throw DimensionError(fmt::format("discriminate: expected [N,1,{0},{0}], got {1}", config_.size, shape_str(x.shape())));
  }
  Tensor<T> h = x;
  for (const auto& conv : dsc_trunk_) {
    h = leaky_relu(conv(h));
  }
  return sigmoid(dsc_heads_[domain_index(d)](global_avg_pool(h)));
}

template <typename T>
std::vector<Parameter<T>> MistNetworks<T>::module_parameters(std::string_view module) const {
  const std::string prefix = std::string(module) + ".";
  std::vector<Parameter<T>> out;
  for (const auto& p : params_) {
    if (p.name.starts_with(prefix)) {
      out.push_back(p);
    }
  }
  return out;
}

template <typename T>
std::size_t MistNetworks<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    n += p.tensor.numel();
  }
  return n;
}

template <typename T>
std::vector<CheckpointEntry> MistNetworks<T>::export_parameters() const {
  std::vector<CheckpointEntry> out;
  out.reserve(params_.size());
  for (const auto& p : params_) {
    CheckpointEntry e{p.name, p.tensor.shape(), {}};
    e.data.assign(p.tensor.data().begin(), p.tensor.data().end());
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
void MistNetworks<T>::import_parameters(const Checkpoint& ckpt) {
  for (auto& p : params_) {
    const CheckpointEntry* e = ckpt.find(p.name);
    if (e == nullptr) {
      throw IoError("checkpoint is missing parameter " + p.name);
    }
    if (e->shape != p.tensor.shape()) {
      throw IoError(fmt::format("checkpoint parameter {} has shape {}, expected {}", p.name, shape_str(e->shape),
                                shape_str(p.tensor.shape())));
    }
    auto dst = p.tensor.data();
    std::copy(e->data.begin(), e->data.end(), dst.begin());
  }
}

template Tensor<float> image_batch(std::span<const ModalityImage* const>);
template Tensor<double> image_batch(std::span<const ModalityImage* const>);
template class MistNetworks<float>;
template class MistNetworks<double>;

}  // namespace mist
