#include "mist/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "mist/log.hpp"
#include "mist/ops.hpp"

namespace mist {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (iterations == 0 || batch_size == 0 || sdl_decay_iters == 0 || checkpoint_every == 0) {
    throw ConfigError("iterations, batch_size, sdl_decay_iters and checkpoint_every must be positive");
  }
  if (!(lr_main > 0) || !(lr_mapping > 0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(lambda_cyc >= 0) || !(lambda_adv >= 0) || !(lambda_ds >= 0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(style_source_mix >= 0 && style_source_mix <= 1)) {
    throw ConfigError("style_source_mix must be in [0,1]");
  }
}

LossWeights TrainConfig::weights_at(std::size_t iteration) const {
  const double remaining = 1.0 - static_cast<double>(iteration) / static_cast<double>(sdl_decay_iters);
  return {lambda_cyc, lambda_adv, lambda_ds * std::max(0.0, remaining)};
}

nlohmann::json TrainConfig::to_json() const {
  return {{"iterations", iterations},
          {"batch_size", batch_size},
          {"lr_main", lr_main},
          {"lr_mapping", lr_mapping},
          {"lambda_cyc", lambda_cyc},
          {"lambda_adv", lambda_adv},
          {"lambda_ds", lambda_ds},
          {"sdl_decay_iters", sdl_decay_iters},
          {"style_source_mix", style_source_mix},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"adv_loss", adv_loss_name(adv_loss)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ConfigError("train config must be a JSON object");
  }
  TrainConfig c;
  bool decay_given = false;
  auto count = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError("train key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  };
  auto real = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) {
      throw ConfigError("train key '" + key + "' must be a number");
    }
    return v.get<double>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "iterations") c.iterations = count(v, key);
    else if (key == "batch_size") c.batch_size = count(v, key);
    else if (key == "lr_main") c.lr_main = real(v, key);
    else if (key == "lr_mapping") c.lr_mapping = real(v, key);
    else if (key == "lambda_cyc") c.lambda_cyc = real(v, key);
    else if (key == "lambda_adv") c.lambda_adv = real(v, key);
    else if (key == "lambda_ds") c.lambda_ds = real(v, key);
    else if (key == "sdl_decay_iters") {
      c.sdl_decay_iters = count(v, key);
      decay_given = true;
    } else if (key == "style_source_mix") c.style_source_mix = real(v, key);
    else if (key == "seed") c.seed = count(v, key);
    else if (key == "checkpoint_every") c.checkpoint_every = count(v, key);
    else if (key == "adv_loss") {
      if (!v.is_string()) {
        throw ConfigError("train key 'adv_loss' must be a string");
      }
      c.adv_loss = parse_adv_loss(v.get<std::string>());
    } else {
      throw ConfigError("unknown train key '" + key + "'");
    }
  }
  if (!decay_given) {
    c.sdl_decay_iters = std::max<std::size_t>(1, c.iterations / 2);
  }
  return c;
}

Task task_for_target(Domain target) {
  Task task;
  task.target = target;
  std::size_t k = 0;
  for (Domain d : kAllDomains) {
    if (d != target) {
      task.inputs[k++] = d;
    }
  }
  return task;
}

Task sample_task(Rng& rng) { return task_for_target(domain_from_index(rng.uniform_int(kNumDomains))); }

template <typename T>
GeneratorPlan<T> make_plan(const PhantomSample& sample, std::span<const PhantomSample> pool, const ArchConfig& arch,
                           double style_source_mix, Rng& rng) {
  GeneratorPlan<T> plan;
  plan.task = sample_task(rng);
  for (std::size_t i = 0; i < plan.inputs.size(); ++i) {
    plan.inputs[i] = image_tensor<T>(sample.image(plan.task.inputs[i]));
  }
  plan.target = image_tensor<T>(sample.image(plan.task.target));
  plan.source = rng.uniform() < style_source_mix ? StyleSource::reference : StyleSource::latent;
  if (plan.source == StyleSource::reference) {
    const PhantomSample& other = pool[rng.uniform_int(pool.size())];
    plan.second_reference = image_tensor<T>(other.image(plan.task.target));
  } else {
    for (Tensor<T>* z : {&plan.z1, &plan.z2}) {
      std::vector<T> values(arch.noise_dim);
      for (auto& v : values) {
        v = static_cast<T>(rng.normal());
      }
      *z = Tensor<T>(Shape{1, arch.noise_dim}, std::move(values));
    }
  }
  return plan;
}

template <typename T>
GeneratorTerms<T> generator_objective(const MistNetworks<T>& nets, const GeneratorPlan<T>& plan, const LossWeights& w,
                                      AdvLoss adv) {
  const Domain t = plan.task.target;
  auto target_style = [&](const Tensor<T>& reference, const Tensor<T>& z) {
    return plan.source == StyleSource::reference ? nets.style_encode(reference, t) : nets.map_noise(z, t);
  };

  std::vector<Content<T>> contents;
  for (const auto& x : plan.inputs) {
    contents.push_back(nets.content_encode(x));
  }
  const Content<T> combined = nets.combine(contents);
  const Tensor<T> style = target_style(plan.target, plan.z1);

  GeneratorTerms<T> terms;
  terms.fake = nets.decode(combined, style);
  terms.csl = csl(style, nets.style_encode(terms.fake, t));

  // Cyclic pass: re-encode x_hat_t, separate per input domain, decode with the
  // inputs' own styles.
  const Content<T> recontent = nets.content_encode(terms.fake);
  std::vector<DomainImage<T>> reconstructed;
  std::vector<DomainImage<T>> originals;
  for (std::size_t i = 0; i < plan.inputs.size(); ++i) {
    const Domain d = plan.task.inputs[i];
    const Content<T> separated = nets.separate(recontent, d);
    reconstructed.push_back({d, nets.decode(separated, nets.style_encode(plan.inputs[i], d))});
    originals.push_back({d, plan.inputs[i]});
  }
  terms.ccl = ccl<T>(reconstructed, originals);
  terms.g_adv = g_adv(nets.discriminate(terms.fake, t), adv);

  if (w.ds == 0.0) {
    NoGradGuard no_grad;
    terms.sdl = sdl(terms.fake, nets.decode(combined, target_style(plan.second_reference, plan.z2)));
  } else {
    terms.sdl = sdl(terms.fake, nets.decode(combined, target_style(plan.second_reference, plan.z2)));
  }
  terms.total = generator_total(terms.csl, terms.ccl, terms.g_adv, terms.sdl, w);
  return terms;
}

namespace {

// Temporarily stops parameters from accumulating gradients.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<Parameter<float>> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      p.tensor.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (auto& p : params_) {
      p.tensor.set_requires_grad(true);
    }
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Parameter<float>> params_;
};

std::vector<Parameter<float>> concat_params(std::initializer_list<std::vector<Parameter<float>>> groups) {
  std::vector<Parameter<float>> out;
  for (const auto& g : groups) {
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

std::vector<const PhantomSample*> sample_batch(std::span<const PhantomSample> pool, std::size_t n, Rng& rng) {
  std::vector<const PhantomSample*> batch;
  for (std::size_t i = 0; i < n; ++i) {
    batch.push_back(&pool[rng.uniform_int(pool.size())]);
  }
  return batch;
}

std::string format_row(std::size_t iter, const LossBreakdown& b) {
  return fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}", iter, b.csl, b.ccl, b.cl, b.g_adv, b.sdl,
                     b.g_total, b.dsc_adv);
}

}  // namespace

Trainer::Trainer(MistNetworks<float>& nets, const TrainConfig& cfg, std::span<const PhantomSample> train)
    : nets_(nets), cfg_(cfg), train_(train) {
  cfg_.validate();
  if (train_.empty()) {
    throw ConfigError("training set is empty");
  }
  AdamHyper main;
  main.lr = cfg_.lr_main;
  AdamHyper mapping;
  mapping.lr = cfg_.lr_mapping;
  gen_opt_ = Adam<float>(concat_params({nets_.module_parameters("SE"), nets_.module_parameters("CE"),
                                        nets_.module_parameters("Dec"), nets_.module_parameters("Comb"),
                                        nets_.module_parameters("Sep")}),
                         main);
  map_opt_ = Adam<float>(nets_.module_parameters("M"), mapping);
  dsc_opt_ = Adam<float>(nets_.module_parameters("Dsc"), main);
}

LossBreakdown Trainer::generator_step(std::span<const PhantomSample* const> batch, const LossWeights& w, Rng& rng) {
  gen_opt_.zero_grad();
  map_opt_.zero_grad();
  FreezeGuard frozen(nets_.module_parameters("Dsc"));
  const double inv = 1.0 / static_cast<double>(batch.size());
  double csl_sum = 0, ccl_sum = 0, adv_sum = 0, sdl_sum = 0;
  for (const PhantomSample* sample : batch) {
    const auto plan = make_plan<float>(*sample, train_, nets_.config(), cfg_.style_source_mix, rng);
    auto terms = generator_objective(nets_, plan, w, cfg_.adv_loss);
    csl_sum += terms.csl.item();
    ccl_sum += terms.ccl.item();
    adv_sum += terms.g_adv.item();
    sdl_sum += terms.sdl.item();
    scale(terms.total, inv).backward();
  }
  gen_opt_.step();
  map_opt_.step();
  return LossBreakdown::assemble(csl_sum * inv, ccl_sum * inv, adv_sum * inv, sdl_sum * inv, 0.0, w);
}

double Trainer::discriminator_step(std::span<const PhantomSample* const> batch, Rng& rng) {
  dsc_opt_.zero_grad();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0;
  for (const PhantomSample* sample : batch) {
    const auto plan = make_plan<float>(*sample, train_, nets_.config(), cfg_.style_source_mix, rng);
    const Domain t = plan.task.target;
    Tensor<float> fake;
    {
      NoGradGuard no_grad;
      std::vector<Content<float>> contents;
      for (const auto& x : plan.inputs) {
        contents.push_back(nets_.content_encode(x));
      }
      const Tensor<float> style =
          plan.source == StyleSource::reference ? nets_.style_encode(plan.target, t) : nets_.map_noise(plan.z1, t);
      fake = nets_.decode(nets_.combine(contents), style);
    }
    auto loss = dsc_adv(nets_.discriminate(plan.target, t), nets_.discriminate(fake, t), cfg_.adv_loss);
    total += loss.item();
    scale(loss, inv).backward();
  }
  dsc_opt_.step();
  return total * inv;
}

LossBreakdown Trainer::run_iteration(std::size_t index) {
  Rng rng(mix_seed(cfg_.seed, index));
  const auto dsc_batch = sample_batch(train_, cfg_.batch_size, rng);
  const double dsc = discriminator_step(dsc_batch, rng);
  const auto gen_batch = sample_batch(train_, cfg_.batch_size, rng);
  LossBreakdown b = generator_step(gen_batch, cfg_.weights_at(index), rng);
  b.dsc_adv = dsc;
  completed_ = index + 1;
  return b;
}

std::vector<Adam<float>*> Trainer::optimizers() { return {&gen_opt_, &map_opt_, &dsc_opt_}; }
std::vector<const Adam<float>*> Trainer::optimizers() const { return {&gen_opt_, &map_opt_, &dsc_opt_}; }

Checkpoint Trainer::make_checkpoint(const ArchConfig& arch) const {
  Checkpoint ckpt;
  ckpt.header = {{"format", "MIST1"}, {"arch", arch.to_json()}, {"train", cfg_.to_json()}, {"iteration", completed_}};
  ckpt.entries = nets_.export_parameters();
  for (const Adam<float>* opt : optimizers()) {
    for (std::size_t k = 0; k < opt->params().size(); ++k) {
      const auto& p = opt->params()[k];
      const auto& st = opt->states()[k];
      ckpt.entries.push_back({p.name + "/adam_m", p.tensor.shape(), st.m});
      ckpt.entries.push_back({p.name + "/adam_v", p.tensor.shape(), st.v});
      ckpt.entries.push_back({p.name + "/adam_t", Shape{1}, {static_cast<float>(st.t)}});
    }
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  nets_.import_parameters(ckpt);
  for (Adam<float>* opt : optimizers()) {
    for (std::size_t k = 0; k < opt->params().size(); ++k) {
      const auto& name = opt->params()[k].name;
      auto& st = opt->states()[k];
      const auto* m = ckpt.find(name + "/adam_m");
      const auto* v = ckpt.find(name + "/adam_v");
      const auto* t = ckpt.find(name + "/adam_t");
      if (m == nullptr || v == nullptr || t == nullptr || m->data.size() != st.m.size() || v->data.size() != st.v.size()) {
        throw IoError("checkpoint has no usable optimizer state for " + name);
      }
      st.m = m->data;
      st.v = v->data;
      st.t = static_cast<std::uint64_t>(t->data.at(0));
    }
  }
  completed_ = ckpt.header.at("iteration").get<std::size_t>();
}

TrainingAborted::TrainingAborted(std::size_t iter, const std::string& what)
    : NumericError(fmt::format("non-finite value at iteration {}: {}", iter, what)), iteration(iter) {}

std::vector<LossBreakdown> train(MistNetworks<float>& nets, const std::vector<PhantomSample>& train_set,
                                 const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec || !fs::is_directory(options.out_dir)) {
    throw IoError(options.out_dir.string() + ": cannot create output directory");
  }
  Trainer trainer(nets, cfg, train_set);
  const fs::path log_path = options.out_dir / "loss_log.csv";
  const fs::path latest = options.out_dir / "latest.mist";

  std::vector<std::string> kept_rows;
  if (options.resume && fs::exists(latest)) {
    const Checkpoint ckpt = read_checkpoint(latest);
    if (ArchConfig::from_json(ckpt.header.at("arch")) != nets.config()) {
      throw ConfigError("cannot resume: checkpoint architecture differs from the configured one");
    }
    trainer.restore(ckpt);
    std::ifstream in(log_path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto iter = std::stoull(line.substr(0, line.find(',')));
      if (iter <= trainer.completed_iterations()) {
        kept_rows.push_back(line);
      }
    }
    if (kept_rows.size() != trainer.completed_iterations()) {
      throw IoError(fmt::format("cannot resume: {} has {} rows for {} completed iterations", log_path.string(),
                                kept_rows.size(), trainer.completed_iterations()));
    }
  } else if (options.resume) {
    log_warning("no checkpoint at " + latest.string() + "; starting from scratch");
  }

  std::ofstream log(log_path, std::ios::trunc);
  if (!log) {
    throw IoError(log_path.string() + ": cannot open for writing");
  }
  log << kLossLogHeader << "\n";
  for (const auto& row : kept_rows) {
    log << row << "\n";
  }
  log.flush();

  auto save = [&](std::size_t iter) {
    const auto bytes = encode_checkpoint(trainer.make_checkpoint(nets.config()));
    for (const fs::path& path : {options.out_dir / fmt::format("ckpt_{:08d}.mist", iter), latest}) {
      const fs::path tmp = path.string() + ".tmp";
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      out.close();
      if (!out) {
        throw IoError(path.string() + ": checkpoint write failed");
      }
      fs::rename(tmp, path);
    }
  };

  std::vector<LossBreakdown> rows;
  std::optional<LossBreakdown> last;
  for (std::size_t k = trainer.completed_iterations(); k < cfg.iterations; ++k) {
    LossBreakdown b;
    try {
      b = trainer.run_iteration(k);
    } catch (const NumericError& e) {
      nlohmann::json dump = {{"iteration", k + 1}, {"error", e.what()}};
      if (last) {
        dump["previous"] = {{"csl", last->csl}, {"ccl", last->ccl}, {"g_adv", last->g_adv},
                            {"sdl", last->sdl}, {"dsc_adv", last->dsc_adv}};
      }
      std::ofstream(options.out_dir / "nan_dump.json") << dump.dump(2) << "\n";
      throw TrainingAborted(k + 1, e.what());
    }
    log << format_row(k + 1, b) << "\n";
    log.flush();
    rows.push_back(b);
    last = b;
    if ((k + 1) % cfg.checkpoint_every == 0 || k + 1 == cfg.iterations) {
      save(k + 1);
    }
    if (options.on_iteration) {
      options.on_iteration(k + 1, b);
    }
  }
  return rows;
}

MistNetworks<float> load_networks(const Checkpoint& ckpt) {
  if (!ckpt.header.contains("arch")) {
    throw IoError("checkpoint header has no architecture block");
  }
  MistNetworks<float> nets(ArchConfig::from_json(ckpt.header.at("arch")), 0);
  nets.import_parameters(ckpt);
  return nets;
}

Tensor<float> resolve_style(const MistNetworks<float>& nets, const StyleChoice& choice, Domain target) {
  NoGradGuard no_grad;
  const auto& arch = nets.config();
  switch (choice.kind) {
    case StyleChoice::Kind::reference:
      if (choice.reference == nullptr) {
        throw UsageError("reference style requested without a reference image");
      }
      return nets.style_encode(image_tensor<float>(*choice.reference), target);
    case StyleChoice::Kind::latent: {
      Rng rng(choice.latent_seed);
      std::vector<float> z(arch.noise_dim);
      for (auto& v : z) {
        v = static_cast<float>(rng.normal());
      }
      return nets.map_noise(Tensor<float>(Shape{1, arch.noise_dim}, std::move(z)), target);
    }
    case StyleChoice::Kind::code:
      if (choice.code.size() != arch.style_dim) {
        throw DimensionError(fmt::format("style code has {} values, model expects {}", choice.code.size(), arch.style_dim));
      }
      return Tensor<float>(Shape{1, arch.style_dim}, choice.code);
  }
  throw UsageError("unknown style choice");
}

Content<float> combined_content(const MistNetworks<float>& nets, std::span<const ModalityImage> inputs, Domain target) {
  const Task task = task_for_target(target);
  if (inputs.size() != task.inputs.size()) {
    throw UsageError(fmt::format("imputing {} needs exactly 3 inputs, got {}", domain_name(target), inputs.size()));
  }
  NoGradGuard no_grad;
  std::vector<Content<float>> contents;
  for (Domain d : task.inputs) {
    const auto matches = std::count_if(inputs.begin(), inputs.end(), [d](const ModalityImage& m) { return m.domain == d; });
    if (matches != 1) {
      throw UsageError(fmt::format("imputing {} needs inputs {}, {}, {} exactly once each", domain_name(target),
                                   domain_name(task.inputs[0]), domain_name(task.inputs[1]), domain_name(task.inputs[2])));
    }
    const auto it = std::find_if(inputs.begin(), inputs.end(), [d](const ModalityImage& m) { return m.domain == d; });
    contents.push_back(nets.content_encode(image_tensor<float>(*it)));
  }
  return nets.combine(contents);
}

ModalityImage decode_image(const MistNetworks<float>& nets, const Content<float>& content, const Tensor<float>& style,
                           Domain domain) {
  NoGradGuard no_grad;
  const Tensor<float> out = nets.decode(content, style);
  ModalityImage img;
  img.domain = domain;
  img.size = nets.config().size;
  img.pixels = out.values();
  return img;
}

ModalityImage impute(const MistNetworks<float>& nets, std::span<const ModalityImage> inputs, Domain target,
                     const StyleChoice& choice) {
  const Content<float> content = combined_content(nets, inputs, target);
  return decode_image(nets, content, resolve_style(nets, choice, target), target);
}

template GeneratorPlan<float> make_plan(const PhantomSample&, std::span<const PhantomSample>, const ArchConfig&, double,
                                        Rng&);
template GeneratorPlan<double> make_plan(const PhantomSample&, std::span<const PhantomSample>, const ArchConfig&, double,
                                         Rng&);
template GeneratorTerms<float> generator_objective(const MistNetworks<float>&, const GeneratorPlan<float>&,
                                                   const LossWeights&, AdvLoss);
template GeneratorTerms<double> generator_objective(const MistNetworks<double>&, const GeneratorPlan<double>&,
                                                    const LossWeights&, AdvLoss);

}  // namespace mist
