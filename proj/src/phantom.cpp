#include "mist/phantom.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "mist/errors.hpp"
#include "mist/log.hpp"
#include "mist/pgm.hpp"

namespace mist {

namespace {

struct Ellipse {
  double cx, cy, a, b, theta;
};

struct TissueValue {
  double pd, t1p, t2p;
  bool fluid = false;
  bool lesion = false;
};

constexpr TissueValue kScalp{0.9, 0.1, 0.3};
constexpr TissueValue kCsf{1.0, 0.95, 0.95, true};
constexpr TissueValue kGray{0.8, 0.5, 0.55};
constexpr TissueValue kWhite{0.7, 0.3, 0.35};
constexpr TissueValue kNucleus{0.8, 0.45, 0.5};
constexpr TissueValue kLesion{0.85, 0.7, 0.8, false, true};

// Coverage of pixel (x, y) by the ellipse: 0 outside, 1 inside, smoothstep
// across a band about two pixels wide centred on the boundary.
double coverage(const Ellipse& e, double x, double y, double pixels_per_unit) {
  const double dx = x - e.cx;
  const double dy = y - e.cy;
  const double c = std::cos(e.theta);
  const double s = std::sin(e.theta);
  const double xr = dx * c + dy * s;
  const double yr = -dx * s + dy * c;
  const double r = std::sqrt((xr / e.a) * (xr / e.a) + (yr / e.b) * (yr / e.b));
  const double depth = (1.0 - r) * std::min(e.a, e.b) * pixels_per_unit;
  const double t = std::clamp(depth * 0.5 + 0.5, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

Ellipse scaled(const Ellipse& e, double factor) { return {e.cx, e.cy, e.a * factor, e.b * factor, e.theta}; }

void paint(TissueMap& map, const Ellipse& e, const TissueValue& v) {
  const std::size_t n = map.size;
  const double ppu = static_cast<double>(n) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
      const double a = coverage(e, x, y, ppu);
      if (a == 0.0) {
        continue;
      }
      const std::size_t k = i * n + j;
      auto blend = [a](float& dst, double value) { dst = static_cast<float>(dst * (1.0 - a) + value * a); };
      blend(map.pd[k], v.pd);
      blend(map.t1p[k], v.t1p);
      blend(map.t2p[k], v.t2p);
      blend(map.fluid[k], v.fluid ? 1.0 : 0.0);
      blend(map.lesion[k], v.lesion ? 1.0 : 0.0);
    }
  }
}

nlohmann::json style_to_json(const StyleParams& s) {
  return {{"domain", domain_name(s.domain)}, {"gamma_exp", s.gamma_exp},   {"gain", s.gain},
          {"bias_amp", s.bias_amp},          {"noise_sigma", s.noise_sigma}, {"bias_angle", s.bias_angle},
          {"noise_seed", s.noise_seed}};
}

StyleParams style_from_json(const nlohmann::json& j) {
  StyleParams s;
  s.domain = parse_domain(j.at("domain").get<std::string>());
  s.gamma_exp = j.at("gamma_exp").get<double>();
  s.gain = j.at("gain").get<double>();
  s.bias_amp = j.at("bias_amp").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.bias_angle = j.at("bias_angle").get<double>();
  s.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  return s;
}

std::vector<std::filesystem::path> sorted_subdirs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory()) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Exact read of a generated sample directory (values = sample / maxval).
PhantomSample read_generated_sample(const std::filesystem::path& dir, std::size_t size) {
  PhantomSample sample;
  for (Domain d : kAllDomains) {
    const auto path = dir / (std::string(domain_file_stem(d)) + ".pgm");
    const PgmImage pgm = read_pgm(path);
    if (pgm.width != size || pgm.height != size) {
      throw IoError(fmt::format("{}: expected {}x{}, got {}x{}", path.string(), size, size, pgm.width, pgm.height));
    }
    ModalityImage& img = sample.images[domain_index(d)];
    img.domain = d;
    img.size = size;
    img.pixels.resize(pgm.samples.size());
    for (std::size_t i = 0; i < pgm.samples.size(); ++i) {
      img.pixels[i] = static_cast<float>(static_cast<double>(pgm.samples[i]) / pgm.maxval);
    }
  }
  const auto style_path = dir / "style.json";
  if (std::filesystem::exists(style_path)) {
    std::ifstream in(style_path);
    const auto j = nlohmann::json::parse(in);
    sample.seed = j.at("tissue_seed").get<std::uint64_t>();
    std::array<StyleParams, kNumDomains> styles;
    for (Domain d : kAllDomains) {
      styles[domain_index(d)] = style_from_json(j.at("styles").at(std::string(domain_name(d))));
    }
    sample.styles = styles;
  }
  return sample;
}

}  // namespace

SplitSizes split_sizes(std::size_t n) {
  if (n < 5) {
    throw ConfigError("n must be >= 5 for a 3:1:1 split, got " + std::to_string(n));
  }
  const std::size_t fifth = n / 5;
  return {n - 2 * fifth, fifth, fifth};
}

TissueMap gen_tissue_map(std::uint64_t seed, std::size_t size) {
  if (size < 16) {
    throw ConfigError("phantom size must be >= 16, got " + std::to_string(size));
  }
  TissueMap map;
  map.seed = seed;
  map.size = size;
  const std::size_t n = size * size;
  map.pd.assign(n, 0.0F);
  map.t1p.assign(n, 0.0F);
  map.t2p.assign(n, 0.0F);
  map.lesion.assign(n, 0.0F);
  map.fluid.assign(n, 0.0F);

  Rng rng(mix_seed(seed, 0x7155));
  const Ellipse head{rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(0.78, 0.86),
                     rng.uniform(0.86, 0.94), rng.uniform(-0.15, 0.15)};
  paint(map, head, kScalp);
  paint(map, scaled(head, 0.9), kCsf);
  const Ellipse brain = scaled(head, rng.uniform(0.83, 0.87));
  paint(map, brain, kGray);
  const double wm_scale = rng.uniform(0.55, 0.7);
  const Ellipse white{brain.cx + rng.uniform(-0.03, 0.03), brain.cy + rng.uniform(-0.03, 0.03), brain.a * wm_scale,
                      brain.b * wm_scale, brain.theta + rng.uniform(-0.1, 0.1)};
  paint(map, white, kWhite);

  // Two to four nested tissue ellipses in total: gray and white matter plus
  // up to two of {ventricle, deep nucleus}.
  const std::uint64_t extras = rng.uniform_int(3);
  if (extras >= 1) {
    const Ellipse ventricle{white.cx + rng.uniform(-0.05, 0.05), white.cy + rng.uniform(-0.08, 0.02),
                            rng.uniform(0.08, 0.16), rng.uniform(0.15, 0.25), white.theta};
    paint(map, ventricle, kCsf);
  }
  if (extras >= 2) {
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const Ellipse nucleus{white.cx + side * rng.uniform(0.22, 0.3), white.cy + rng.uniform(-0.05, 0.1),
                          rng.uniform(0.07, 0.11), rng.uniform(0.08, 0.12), rng.uniform(-0.5, 0.5)};
    paint(map, nucleus, kNucleus);
  }

  const std::uint64_t lesions = rng.uniform_int(3);
  for (std::uint64_t k = 0; k < lesions; ++k) {
    const double r = rng.uniform(0.06, 0.13);
    const Ellipse blob{brain.cx + rng.uniform(-0.4, 0.4) * brain.a, brain.cy + rng.uniform(-0.4, 0.4) * brain.b,
                       r * rng.uniform(0.8, 1.2), r, rng.uniform(-1.5, 1.5)};
    paint(map, blob, kLesion);
  }
  return map;
}

std::vector<float> base_contrast(const TissueMap& tissue, Domain domain) {
  std::vector<float> out(tissue.pd.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double pd = tissue.pd[k];
    const double t1 = pd * (1.0 - 0.85 * tissue.t1p[k]);
    const double t2 = pd * (0.15 + 0.85 * tissue.t2p[k]);
    double v = 0;
    switch (domain) {
      case Domain::T1:
        v = t1;
        break;
      case Domain::T1c:
        v = t1 + 0.5 * tissue.lesion[k];
        break;
      case Domain::T2:
        v = t2;
        break;
      case Domain::F:
        v = t2 * (1.0 - 0.9 * tissue.fluid[k]);
        break;
    }
    out[k] = static_cast<float>(v);
  }
  return out;
}

ModalityImage render_modality(const TissueMap& tissue, const StyleParams& style) {
  ModalityImage img;
  img.domain = style.domain;
  img.size = tissue.size;
  img.pixels = base_contrast(tissue, style.domain);
  Rng noise(style.noise_seed);
  const std::size_t n = tissue.size;
  const double ca = std::cos(style.bias_angle);
  const double sa = std::sin(style.bias_angle);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
      const double field = 1.0 + style.bias_amp * (x * ca + y * sa);
      float& p = img.pixels[i * n + j];
      const double v = style.gain * std::pow(static_cast<double>(p), style.gamma_exp) * field + style.noise_sigma * noise.normal();
      p = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

StyleParams sample_style_params(Domain domain, Rng& rng, const StyleRanges& ranges) {
  StyleParams s;
  s.domain = domain;
  s.gamma_exp = rng.uniform(ranges.gamma_exp.lo, ranges.gamma_exp.hi);
  s.gain = rng.uniform(ranges.gain.lo, ranges.gain.hi);
  s.bias_amp = rng.uniform(ranges.bias_amp.lo, ranges.bias_amp.hi);
  s.noise_sigma = rng.uniform(ranges.noise_sigma.lo, ranges.noise_sigma.hi);
  s.bias_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  s.noise_seed = rng.next_u64();
  return s;
}

DatasetSplits make_dataset(std::size_t n, std::size_t size, std::uint64_t seed, const StyleRanges& ranges) {
  const SplitSizes sizes = split_sizes(n);
  if (size < 16) {
    throw ConfigError("phantom size must be >= 16, got " + std::to_string(size));
  }
  DatasetSplits splits;
  for (std::size_t idx = 0; idx < n; ++idx) {
    PhantomSample sample;
    sample.seed = mix_seed(seed, idx);
    sample.tissue = gen_tissue_map(sample.seed, size);
    Rng style_rng(mix_seed(sample.seed, 1));
    std::array<StyleParams, kNumDomains> styles;
    for (Domain d : kAllDomains) {
      styles[domain_index(d)] = sample_style_params(d, style_rng, ranges);
      sample.images[domain_index(d)] = render_modality(*sample.tissue, styles[domain_index(d)]);
    }
    sample.styles = styles;
    if (idx < sizes.train) {
      splits.train.push_back(std::move(sample));
    } else if (idx < sizes.train + sizes.val) {
      splits.val.push_back(std::move(sample));
    } else {
      splits.test.push_back(std::move(sample));
    }
  }
  return splits;
}

std::vector<PhantomSample> load_external(const std::filesystem::path& dir, std::size_t size) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError(dir.string() + ": not a directory");
  }
  std::vector<PhantomSample> out;
  for (const auto& sample_dir : sorted_subdirs(dir)) {
    bool complete = true;
    for (Domain d : kAllDomains) {
      const auto path = sample_dir / (std::string(domain_file_stem(d)) + ".pgm");
      if (!std::filesystem::exists(path)) {
        log_warning(fmt::format("skipping {}: missing {}", sample_dir.string(), path.filename().string()));
        complete = false;
        break;
      }
    }
    if (!complete) {
      continue;
    }
    PhantomSample sample;
    for (Domain d : kAllDomains) {
      const auto path = sample_dir / (std::string(domain_file_stem(d)) + ".pgm");
      const PgmImage pgm = read_pgm(path);
      if (pgm.width > size || pgm.height > size) {
        throw ConfigError(fmt::format("{}: {}x{} image exceeds target size {}", path.string(), pgm.width, pgm.height, size));
      }
      const auto [lo_it, hi_it] = std::minmax_element(pgm.samples.begin(), pgm.samples.end());
      const double lo = *lo_it;
      const double range = static_cast<double>(*hi_it) - lo;
      if (range == 0.0) {
        log_warning(path.string() + ": constant image normalized to zeros");
      }
      ModalityImage& img = sample.images[domain_index(d)];
      img.domain = d;
      img.size = size;
      img.pixels.assign(size * size, 0.0F);
      const std::size_t top = (size - pgm.height) / 2;
      const std::size_t left = (size - pgm.width) / 2;
      for (std::size_t i = 0; i < pgm.height; ++i) {
        for (std::size_t j = 0; j < pgm.width; ++j) {
          const double v = range == 0.0 ? 0.0 : (pgm.samples[i * pgm.width + j] - lo) / range;
          img.pixels[(i + top) * size + j + left] = static_cast<float>(v);
        }
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

void write_dataset(const std::filesystem::path& out, const DatasetSplits& splits, std::size_t n, std::size_t size,
                   std::uint64_t seed) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) {
    throw IoError(out.string() + ": cannot create output directory");
  }
  std::size_t index = 0;
  const std::array<std::pair<const char*, const std::vector<PhantomSample>*>, 3> parts{
      {{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}};
  for (const auto& [split_name, samples] : parts) {
    for (const auto& sample : *samples) {
      const fs::path dir = out / split_name / fmt::format("{:05d}", index++);
      fs::create_directories(dir, ec);
      if (ec) {
        throw IoError(dir.string() + ": cannot create directory");
      }
      for (Domain d : kAllDomains) {
        const auto& img = sample.image(d);
        write_pgm(dir / (std::string(domain_file_stem(d)) + ".pgm"), to_pgm(img.pixels, img.size, img.size, 65535));
      }
      nlohmann::json style = {{"tissue_seed", sample.seed}, {"styles", nlohmann::json::object()}};
      if (sample.styles) {
        for (Domain d : kAllDomains) {
          style["styles"][std::string(domain_name(d))] = style_to_json((*sample.styles)[domain_index(d)]);
        }
      }
      std::ofstream(dir / "style.json") << style.dump(2) << "\n";
    }
  }
  const nlohmann::json manifest = {
      {"generator", "phantom"},
      {"n", n},
      {"size", size},
      {"seed", seed},
      {"splits", {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}}}};
  std::ofstream manifest_out(out / "manifest.json");
  if (!manifest_out) {
    throw IoError((out / "manifest.json").string() + ": cannot write");
  }
  manifest_out << manifest.dump(2) << "\n";
}

DatasetSplits read_dataset(const std::filesystem::path& dir, std::size_t size) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw IoError(dir.string() + ": dataset directory does not exist");
  }
  DatasetSplits splits;
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    const auto manifest = nlohmann::json::parse(in);
    const auto stored_size = manifest.at("size").get<std::size_t>();
    if (stored_size != size) {
      throw ConfigError(fmt::format("dataset {} has image size {}, config expects {}", dir.string(), stored_size, size));
    }
    for (auto [name, target] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}}) {
      if (!fs::is_directory(dir / name)) {
        continue;
      }
      for (const auto& sample_dir : sorted_subdirs(dir / name)) {
        target->push_back(read_generated_sample(sample_dir, size));
      }
    }
    return splits;
  }
  auto samples = load_external(dir, size);
  const SplitSizes sizes = split_sizes(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& target = i < sizes.train ? splits.train : (i < sizes.train + sizes.val ? splits.val : splits.test);
    target.push_back(std::move(samples[i]));
  }
  return splits;
}

}  // namespace mist
