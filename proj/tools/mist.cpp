// mist: dataset generation, training, imputation, interpolation and evaluation.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mist/checkpoint.hpp"
#include "mist/config.hpp"
#include "mist/errors.hpp"
#include "mist/metrics.hpp"
#include "mist/pgm.hpp"
#include "mist/phantom.hpp"
#include "mist/training.hpp"

namespace fs = std::filesystem;
using namespace mist;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct GenDataArgs {
  std::string out;
  std::optional<std::size_t> n, size;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::string data, config, out;
  bool resume = false;
  bool print_config = false;
  std::optional<std::size_t> iterations, batch_size, checkpoint_every, sdl_decay_iters;
  std::optional<double> lr_main, lr_mapping, lambda_cyc, lambda_adv, lambda_ds, style_source_mix;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> adv_loss;
};

struct ImputeArgs {
  std::string ckpt;
  std::vector<std::string> inputs;
  std::vector<std::string> input_domains;
  std::string target;
  std::string style = "mean";
  std::string style_table;
  std::string out;
};

struct InterpolateArgs {
  std::string ckpt;
  std::vector<std::string> inputs;
  std::vector<std::string> input_domains;
  std::string target;
  std::string from = "T1";
  std::string to = "F";
  double step = 0.1;
  std::string style_table;
  std::string out;
};

struct EvalArgs {
  std::string ckpt, data, out;
  std::string cohort = "PHANTOM";
  std::string style_source = "reference";
  std::uint64_t latent_seed = 0;
};

Checkpoint open_checkpoint(const std::string& path) {
  if (!fs::exists(path)) {
    throw ConfigError(path + ": checkpoint not found");
  }
  return read_checkpoint(path);
}

fs::path style_table_path(const std::string& explicit_path, const std::string& ckpt) {
  if (!explicit_path.empty()) {
    return explicit_path;
  }
  return fs::path(ckpt).parent_path() / "style_table.json";
}

StyleTable require_style_table(const fs::path& path) {
  if (!fs::exists(path)) {
    throw ConfigError(path.string() + " not found; run `mist eval` first to produce a style table, or pass --style-table");
  }
  return read_style_table(path);
}

std::vector<float> as_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

ModalityImage load_input(const std::string& path, Domain domain, std::size_t size) {
  const PgmImage pgm = read_pgm(path);
  if (pgm.width != size || pgm.height != size) {
    throw ConfigError(fmt::format("{}: image is {}x{}, the model expects {}x{}", path, pgm.width, pgm.height, size, size));
  }
  ModalityImage img;
  img.domain = domain;
  img.size = size;
  img.pixels.resize(pgm.samples.size());
  for (std::size_t i = 0; i < pgm.samples.size(); ++i) {
    img.pixels[i] = static_cast<float>(static_cast<double>(pgm.samples[i]) / pgm.maxval);
  }
  return img;
}

// Domains come from --input-domains when given, otherwise from the file stems
// (t1.pgm, t1c.pgm, t2.pgm, flair.pgm).
std::vector<ModalityImage> load_inputs(const std::vector<std::string>& paths, const std::vector<std::string>& domains,
                                       Domain target, std::size_t size) {
  const Task task = task_for_target(target);
  const std::string expected = fmt::format("{}, {}, {}", domain_name(task.inputs[0]), domain_name(task.inputs[1]),
                                           domain_name(task.inputs[2]));
  if (paths.size() != 3) {
    throw UsageError(fmt::format("imputing {} needs exactly 3 inputs ({}), got {}", domain_name(target), expected,
                                 paths.size()));
  }
  if (!domains.empty() && domains.size() != paths.size()) {
    throw UsageError("--input-domains must name one domain per input");
  }
  std::vector<ModalityImage> images;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    Domain d;
    try {
      d = parse_domain(domains.empty() ? fs::path(paths[i]).stem().string() : domains[i]);
    } catch (const UsageError&) {
      throw UsageError(fmt::format("cannot tell the domain of {}; name inputs t1/t1c/t2/flair.pgm or pass "
                                   "--input-domains (expected {})",
                                   paths[i], expected));
    }
    images.push_back(load_input(paths[i], d, size));
  }
  std::vector<Domain> got;
  for (const auto& img : images) got.push_back(img.domain);
  std::sort(got.begin(), got.end());
  if (!std::equal(got.begin(), got.end(), task.inputs.begin(), task.inputs.end())) {
    throw UsageError(fmt::format("imputing {} needs inputs {} exactly once each", domain_name(target), expected));
  }
  return images;
}

void write_image(const ModalityImage& img, const fs::path& path) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  write_pgm(path, to_pgm(img.pixels, img.size, img.size, 65535));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) {
    throw IoError(path.string() + ": write failed");
  }
}

int run_gen_data(const GenDataArgs& args) {
  DataConfig data;
  if (auto s = env_seed()) data.seed = *s;
  if (args.n) data.n = *args.n;
  if (args.size) data.size = *args.size;
  if (args.seed) data.seed = *args.seed;
  const DatasetSplits splits = make_dataset(data.n, data.size, data.seed);
  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec || !fs::is_directory(args.out)) {
    throw IoError(args.out + ": cannot create output directory");
  }
  write_dataset(args.out, splits, data.n, data.size, data.seed);
  std::cout << fmt::format("wrote {} samples to {} (train {}, val {}, test {})\n", data.n, args.out,
                           splits.train.size(), splits.val.size(), splits.test.size());
  return kExitOk;
}

RunConfig resolve_train_config(const TrainArgs& args) {
  RunConfig cfg;
  bool decay_in_file = false;
  if (!args.config.empty()) {
    cfg = load_run_config(args.config);
    std::ifstream in(args.config);
    const auto raw = nlohmann::json::parse(in);
    decay_in_file = raw.contains("train") && raw.at("train").contains("sdl_decay_iters");
  }
  if (auto s = env_seed()) cfg.train.seed = *s;
  auto& t = cfg.train;
  if (args.iterations) {
    t.iterations = *args.iterations;
    if (!decay_in_file && !args.sdl_decay_iters) t.sdl_decay_iters = std::max<std::size_t>(1, t.iterations / 2);
  }
  if (args.batch_size) t.batch_size = *args.batch_size;
  if (args.checkpoint_every) t.checkpoint_every = *args.checkpoint_every;
  if (args.sdl_decay_iters) t.sdl_decay_iters = *args.sdl_decay_iters;
  if (args.lr_main) t.lr_main = *args.lr_main;
  if (args.lr_mapping) t.lr_mapping = *args.lr_mapping;
  if (args.lambda_cyc) t.lambda_cyc = *args.lambda_cyc;
  if (args.lambda_adv) t.lambda_adv = *args.lambda_adv;
  if (args.lambda_ds) t.lambda_ds = *args.lambda_ds;
  if (args.style_source_mix) t.style_source_mix = *args.style_source_mix;
  if (args.seed) t.seed = *args.seed;
  if (args.adv_loss) t.adv_loss = parse_adv_loss(*args.adv_loss);
  if (!args.data.empty()) cfg.paths.data = args.data;
  if (!args.out.empty()) cfg.paths.out = args.out;
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& args) {
  const RunConfig cfg = resolve_train_config(args);
  if (args.print_config) {
    std::cout << cfg.to_json().dump(2) << "\n";
    return kExitOk;
  }
  if (cfg.paths.data.empty() || cfg.paths.out.empty()) {
    throw ConfigError("train needs --data and --out (or paths.data / paths.out in the config)");
  }
  if (!fs::is_directory(cfg.paths.data)) {
    throw ConfigError(cfg.paths.data + ": dataset directory not found");
  }
  const DatasetSplits splits = read_dataset(cfg.paths.data, cfg.arch.size);
  MistNetworks<float> nets(cfg.arch, cfg.train.seed);
  std::cout << fmt::format("training {} parameters on {} samples; lr_main={} lr_mapping={} batch={} iterations={}\n",
                           nets.parameter_count(), splits.train.size(), cfg.train.lr_main, cfg.train.lr_mapping,
                           cfg.train.batch_size, cfg.train.iterations);
  fs::create_directories(cfg.paths.out);
  write_text(fs::path(cfg.paths.out) / "config.json", cfg.to_json().dump(2) + "\n");

  TrainOptions options;
  options.out_dir = cfg.paths.out;
  options.resume = args.resume;
  options.on_iteration = [&](std::size_t iter, const LossBreakdown& b) {
    if (iter % 100 == 0 || iter == cfg.train.iterations) {
      std::cout << fmt::format("iter {}/{} cl={:.5f} csl={:.5f} ccl={:.5f} g_adv={:.5f} sdl={:.5f} g_total={:.5f} "
                               "dsc_adv={:.5f}\n",
                               iter, cfg.train.iterations, b.cl, b.csl, b.ccl, b.g_adv, b.sdl, b.g_total, b.dsc_adv)
                << std::flush;
    }
  };
  try {
    train(nets, splits.train, cfg.train, options);
  } catch (const TrainingAborted& e) {
    std::cerr << "error: training aborted at iteration " << e.iteration << ": " << e.what() << "\n";
    return kExitNumeric;
  }
  std::cout << "checkpoint: " << (fs::path(cfg.paths.out) / "latest.mist").string() << "\n";
  return kExitOk;
}

StyleChoice parse_style(const std::string& spec, Domain target, const std::string& ckpt,
                        const std::string& table_path, std::size_t size, std::optional<ModalityImage>& reference) {
  StyleChoice choice;
  if (spec.rfind("ref:", 0) == 0) {
    reference = load_input(spec.substr(4), target, size);
    choice.kind = StyleChoice::Kind::reference;
    choice.reference = &*reference;
  } else if (spec.rfind("latent:", 0) == 0) {
    choice.kind = StyleChoice::Kind::latent;
    try {
      std::size_t used = 0;
      choice.latent_seed = std::stoull(spec.substr(7), &used);
      if (used != spec.size() - 7) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw UsageError("--style latent:<seed> needs a non-negative integer seed");
    }
  } else if (spec == "mean" || spec.rfind("mean:", 0) == 0) {
    const Domain d = spec == "mean" ? target : parse_domain(spec.substr(5));
    const StyleTable table = require_style_table(style_table_path(table_path, ckpt));
    choice.kind = StyleChoice::Kind::code;
    choice.code = as_float(table.at(d).mean);
  } else {
    throw UsageError("--style must be ref:<path>, latent:<seed>, mean or mean:<domain>");
  }
  return choice;
}

int run_impute(const ImputeArgs& args) {
  const Domain target = parse_domain(args.target);
  const MistNetworks<float> nets = load_networks(open_checkpoint(args.ckpt));
  const std::size_t size = nets.config().size;
  const auto inputs = load_inputs(args.inputs, args.input_domains, target, size);
  std::optional<ModalityImage> reference;
  const StyleChoice choice = parse_style(args.style, target, args.ckpt, args.style_table, size, reference);
  write_image(impute(nets, inputs, target, choice), args.out);
  return kExitOk;
}

int run_interpolate(const InterpolateArgs& args) {
  const Domain target = parse_domain(args.target);
  const Domain from = parse_domain(args.from);
  const Domain to = parse_domain(args.to);
  const MistNetworks<float> nets = load_networks(open_checkpoint(args.ckpt));
  const StyleTable table = require_style_table(style_table_path(args.style_table, args.ckpt));
  const auto inputs = load_inputs(args.inputs, args.input_domains, target, nets.config().size);
  const Interpolation path = interpolate_styles(table.at(from).mean, table.at(to).mean, args.step);

  fs::create_directories(args.out);
  const Content<float> content = combined_content(nets, inputs, target);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < path.codes.size(); ++i) {
    const Tensor<float> style(Shape{1, table.dim}, as_float(path.codes[i]));
    const std::string name = fmt::format("interp_{:02d}.pgm", i);
    write_image(decode_image(nets, content, style, target), fs::path(args.out) / name);
    files.push_back(name);
  }
  const nlohmann::json meta = {{"target", domain_name(target)}, {"from", domain_name(from)},
                               {"to", domain_name(to)},         {"step", args.step},
                               {"alphas", path.alphas},         {"files", files}};
  write_text(fs::path(args.out) / "alphas.json", meta.dump(2) + "\n");
  std::cout << fmt::format("wrote {} images to {}\n", path.codes.size(), args.out);
  return kExitOk;
}

int run_eval(const EvalArgs& args) {
  const MistNetworks<float> nets = load_networks(open_checkpoint(args.ckpt));
  if (!fs::is_directory(args.data)) {
    throw ConfigError(args.data + ": dataset directory not found");
  }
  const DatasetSplits splits = read_dataset(args.data, nets.config().size);
  EvalOptions options;
  options.cohort = args.cohort;
  options.latent_seed = args.latent_seed;
  if (args.style_source == "reference") options.style = StyleSource::reference;
  else if (args.style_source == "latent") options.style = StyleSource::latent;
  else throw UsageError("--style-source must be reference or latent");

  fs::create_directories(args.out);
  const auto rows = evaluate(nets, splits.test, options);
  write_text(fs::path(args.out) / "metrics.csv", metrics_csv(rows));

  const std::span<const PhantomSample> table_source = splits.train.empty() ? splits.test : splits.train;
  write_style_table(style_table(nets, table_source), fs::path(args.out) / "style_table.json");

  const auto records = encode_styles(nets, splits.test);
  std::vector<std::vector<double>> codes;
  std::vector<Domain> domains;
  for (const auto& r : records) {
    codes.push_back(r.code);
    domains.push_back(r.domain);
  }
  write_text(fs::path(args.out) / "embedding.csv", embedding_csv(domains, export_embedding(codes)));
  std::cout << metrics_csv(rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIST GAN: missing MRI modality imputation on synthetic phantoms"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a phantom dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of subjects (default 100)");
  gen_cmd->add_option("--size", gen.size, "Image side in pixels (default 64)");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed (default 0, or MIST_SEED)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the networks");
  train_cmd->add_option("--data", tr.data, "Dataset directory");
  train_cmd->add_option("--config", tr.config, "JSON run config");
  train_cmd->add_option("--out", tr.out, "Run directory (checkpoints, loss_log.csv)");
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/latest.mist");
  train_cmd->add_flag("--print-config", tr.print_config, "Print the resolved config and exit");
  train_cmd->add_option("--iterations", tr.iterations);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every);
  train_cmd->add_option("--sdl-decay-iters", tr.sdl_decay_iters);
  train_cmd->add_option("--lr-main", tr.lr_main);
  train_cmd->add_option("--lr-mapping", tr.lr_mapping);
  train_cmd->add_option("--lambda-cyc", tr.lambda_cyc);
  train_cmd->add_option("--lambda-adv", tr.lambda_adv);
  train_cmd->add_option("--lambda-ds", tr.lambda_ds);
  train_cmd->add_option("--style-source-mix", tr.style_source_mix);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--adv-loss", tr.adv_loss, "linear or bce");

  ImputeArgs imp;
  auto* impute_cmd = app.add_subcommand("impute", "Impute a missing modality");
  impute_cmd->add_option("--ckpt", imp.ckpt)->required();
  impute_cmd->add_option("--inputs", imp.inputs, "Three PGM inputs")->required()->expected(3);
  impute_cmd->add_option("--input-domains", imp.input_domains, "Domains of the inputs, if not named by file")
      ->expected(3);
  impute_cmd->add_option("--target", imp.target)->required();
  impute_cmd->add_option("--style", imp.style, "ref:<pgm>, latent:<seed>, mean or mean:<domain>");
  impute_cmd->add_option("--style-table", imp.style_table, "Default: <ckpt dir>/style_table.json");
  impute_cmd->add_option("--out", imp.out, "Output PGM")->required();

  InterpolateArgs ip;
  auto* interp_cmd = app.add_subcommand("interpolate", "Interpolate between two mean styles");
  interp_cmd->add_option("--ckpt", ip.ckpt)->required();
  interp_cmd->add_option("--inputs", ip.inputs)->required()->expected(3);
  interp_cmd->add_option("--input-domains", ip.input_domains)->expected(3);
  interp_cmd->add_option("--target", ip.target)->required();
  interp_cmd->add_option("--from-domain", ip.from);
  interp_cmd->add_option("--to-domain", ip.to);
  interp_cmd->add_option("--step", ip.step);
  interp_cmd->add_option("--style-table", ip.style_table, "Default: <ckpt dir>/style_table.json");
  interp_cmd->add_option("--out", ip.out, "Output directory")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Metrics, style table and embedding");
  eval_cmd->add_option("--ckpt", ev.ckpt)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--out", ev.out)->required();
  eval_cmd->add_option("--cohort", ev.cohort);
  eval_cmd->add_option("--style-source", ev.style_source, "reference or latent");
  eval_cmd->add_option("--latent-seed", ev.latent_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*impute_cmd) return run_impute(imp);
    if (*interp_cmd) return run_interpolate(ip);
    if (*eval_cmd) return run_eval(ev);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
