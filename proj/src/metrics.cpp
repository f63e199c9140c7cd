#include "mist/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mist/errors.hpp"
#include "mist/log.hpp"
#include "mist/rng.hpp"

namespace mist {

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(fmt::format("{}: images have {} and {} pixels", what, a.size(), b.size()));
  }
}

double mean_of(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double population_std(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<double> domain_centroid(std::span<const StyleRecord> records, Domain d, std::size_t dim) {
  std::vector<double> c(dim, 0.0);
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.domain != d) continue;
    for (std::size_t k = 0; k < dim; ++k) c[k] += r.code[k];
    ++n;
  }
  if (n > 0) {
    for (auto& v : c) v /= static_cast<double>(n);
  }
  return c;
}

}  // namespace

std::vector<double> to_double(std::span<const float> pixels) { return {pixels.begin(), pixels.end()}; }

double psnr(std::span<const double> a, std::span<const double> b, double data_range) {
  require_same_size(a, b, "psnr");
  if (a.empty()) {
    throw DimensionError("psnr: empty images");
  }
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) {
    return kPsnrCap;
  }
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

double psnr(const ModalityImage& a, const ModalityImage& b) { return psnr(to_double(a.pixels), to_double(b.pixels)); }

double ssim(std::span<const double> a, std::span<const double> b, std::size_t width, std::size_t height) {
  require_same_size(a, b, "ssim");
  if (a.size() != width * height) {
    throw DimensionError(fmt::format("ssim: {} pixels for a {}x{} image", a.size(), width, height));
  }
  if (width < kSsimWindow || height < kSsimWindow) {
    throw DimensionError(fmt::format("ssim: {}x{} image is smaller than the {}x{} window", width, height, kSsimWindow,
                                     kSsimWindow));
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  constexpr double n = kSsimWindow * kSsimWindow;
  double total = 0;
  std::size_t windows = 0;
  for (std::size_t y = 0; y + kSsimWindow <= height; ++y) {
    for (std::size_t x = 0; x + kSsimWindow <= width; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t dy = 0; dy < kSsimWindow; ++dy) {
        const std::size_t row = (y + dy) * width + x;
        for (std::size_t dx = 0; dx < kSsimWindow; ++dx) {
          const double va = a[row + dx];
          const double vb = b[row + dx];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      }
      const double mu_a = sa / n;
      const double mu_b = sb / n;
      const double var_a = (saa - sa * mu_a) / (n - 1);
      const double var_b = (sbb - sb * mu_b) / (n - 1);
      const double cov = (sab - sa * mu_b) / (n - 1);
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

double ssim(const ModalityImage& a, const ModalityImage& b) {
  return ssim(to_double(a.pixels), to_double(b.pixels), a.size, a.size);
}

std::vector<MetricsRow> evaluate(const MistNetworks<float>& nets, std::span<const PhantomSample> test_set,
                                 const EvalOptions& options) {
  if (test_set.empty()) {
    throw ConfigError("evaluate: test split is empty");
  }
  std::vector<MetricsRow> rows;
  for (Domain t : kAllDomains) {
    const Task task = task_for_target(t);
    std::vector<double> ssims, psnrs;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      const PhantomSample& sample = test_set[i];
      std::vector<ModalityImage> inputs;
      for (Domain d : task.inputs) inputs.push_back(sample.image(d));
      StyleChoice choice;
      if (options.style == StyleSource::reference) {
        choice.kind = StyleChoice::Kind::reference;
        choice.reference = &sample.image(t);
      } else {
        choice.kind = StyleChoice::Kind::latent;
        choice.latent_seed = mix_seed(options.latent_seed, i * kNumDomains + domain_index(t));
      }
      const ModalityImage fake = impute(nets, inputs, t, choice);
      ssims.push_back(ssim(fake, sample.image(t)));
      psnrs.push_back(psnr(fake, sample.image(t)));
    }
    rows.push_back({options.cohort, t, mean_of(ssims), population_std(ssims), mean_of(psnrs), population_std(psnrs)});
  }
  return rows;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.5f},{:.5f},{:.5f},{:.5f}\n", r.cohort, domain_name(r.modality), r.ssim_mean,
                       r.ssim_std, r.psnr_mean, r.psnr_std);
  }
  return out;
}

std::vector<StyleRecord> encode_styles(const MistNetworks<float>& nets, std::span<const PhantomSample> samples) {
  NoGradGuard no_grad;
  std::vector<StyleRecord> records;
  for (const auto& sample : samples) {
    for (Domain d : kAllDomains) {
      const Tensor<float> s = nets.style_encode(image_tensor<float>(sample.image(d)), d);
      records.push_back({d, to_double(s.data())});
    }
  }
  return records;
}

StyleTable StyleTable::from_records(std::span<const StyleRecord> records) {
  if (records.empty()) {
    throw ConfigError("style table needs at least one style code");
  }
  StyleTable table;
  table.dim = records.front().code.size();
  for (Domain d : kAllDomains) {
    StyleStats& st = table.domains[domain_index(d)];
    st.mean = domain_centroid(records, d, table.dim);
    st.std.assign(table.dim, 0.0);
    for (const auto& r : records) {
      if (r.domain != d) continue;
      if (r.code.size() != table.dim) {
        throw DimensionError("style codes of different lengths");
      }
      for (std::size_t k = 0; k < table.dim; ++k) st.std[k] += (r.code[k] - st.mean[k]) * (r.code[k] - st.mean[k]);
      ++st.count;
    }
    if (st.count == 0) {
      throw ConfigError(fmt::format("style table has no codes for {}", domain_name(d)));
    }
    for (auto& v : st.std) v = std::sqrt(v / static_cast<double>(st.count));
  }
  return table;
}

nlohmann::json StyleTable::to_json() const {
  nlohmann::json domains_json = nlohmann::json::object();
  for (Domain d : kAllDomains) {
    const auto& st = at(d);
    domains_json[std::string(domain_name(d))] = {{"mean", st.mean}, {"std", st.std}, {"count", st.count}};
  }
  return {{"dim", dim}, {"domains", domains_json}};
}

StyleTable StyleTable::from_json(const nlohmann::json& j) {
  try {
    StyleTable table;
    table.dim = j.at("dim").get<std::size_t>();
    for (Domain d : kAllDomains) {
      const auto& e = j.at("domains").at(std::string(domain_name(d)));
      StyleStats& st = table.domains[domain_index(d)];
      st.mean = e.at("mean").get<std::vector<double>>();
      st.std = e.at("std").get<std::vector<double>>();
      st.count = e.at("count").get<std::size_t>();
      if (st.mean.size() != table.dim || st.std.size() != table.dim || st.count == 0) {
        throw ConfigError(fmt::format("style table entry for {} is inconsistent", domain_name(d)));
      }
    }
    return table;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed style table: ") + e.what());
  }
}

StyleTable style_table(const MistNetworks<float>& nets, std::span<const PhantomSample> samples) {
  return StyleTable::from_records(encode_styles(nets, samples));
}

void write_style_table(const StyleTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << table.to_json().dump(2) << "\n";
  if (!out) {
    throw IoError(path.string() + ": cannot write style table");
  }
}

StyleTable read_style_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError(path.string() + ": cannot open style table");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return StyleTable::from_json(j);
}

Disentanglement disentanglement(std::span<const StyleRecord> records) {
  if (records.empty()) {
    throw ConfigError("disentanglement: no style codes");
  }
  const std::size_t dim = records.front().code.size();
  std::array<std::vector<double>, kNumDomains> centroids;
  for (Domain d : kAllDomains) centroids[domain_index(d)] = domain_centroid(records, d, dim);

  Disentanglement out;
  std::size_t correct = 0;
  double spread = 0;
  for (const auto& r : records) {
    std::size_t best = 0;
    double best_dist = euclidean(r.code, centroids[0]);
    for (std::size_t k = 1; k < kNumDomains; ++k) {
      const double dist = euclidean(r.code, centroids[k]);
      if (dist < best_dist) {
        best = k;
        best_dist = dist;
      }
    }
    correct += best == domain_index(r.domain) ? 1 : 0;
    spread += euclidean(r.code, centroids[domain_index(r.domain)]);
  }
  out.nearest_centroid_accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  out.mean_spread = spread / static_cast<double>(records.size());
  double between = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < kNumDomains; ++i) {
    for (std::size_t k = i + 1; k < kNumDomains; ++k) {
      between += euclidean(centroids[i], centroids[k]);
      ++pairs;
    }
  }
  out.mean_centroid_distance = between / static_cast<double>(pairs);
  return out;
}

Interpolation interpolate_styles(std::span<const double> a, std::span<const double> b, double step) {
  if (!(step > 0.0 && step <= 1.0)) {
    throw ConfigError(fmt::format("interpolation step must be in (0, 1], got {}", step));
  }
  if (a.size() != b.size()) {
    throw DimensionError(fmt::format("cannot interpolate codes of length {} and {}", a.size(), b.size()));
  }
  Interpolation out;
  for (std::size_t i = 0; static_cast<double>(i) * step < 1.0 - 1e-9; ++i) {
    out.alphas.push_back(static_cast<double>(i) * step);
  }
  out.alphas.push_back(1.0);
  for (double alpha : out.alphas) {
    if (alpha == 0.0) {
      out.codes.emplace_back(a.begin(), a.end());
    } else if (alpha == 1.0) {
      out.codes.emplace_back(b.begin(), b.end());
    } else {
      std::vector<double> code(a.size());
      for (std::size_t k = 0; k < a.size(); ++k) code[k] = (1.0 - alpha) * a[k] + alpha * b[k];
      out.codes.push_back(std::move(code));
    }
  }
  return out;
}

double mean_abs_diff(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "mean_abs_diff");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double diversity_score(std::span<const std::vector<double>> images) {
  if (images.size() < 2) {
    throw UsageError("diversity_score needs at least two images");
  }
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t k = i + 1; k < images.size(); ++k) {
      total += mean_abs_diff(images[i], images[k]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double approach_violation(std::span<const std::vector<double>> images) {
  if (images.size() < 2) {
    return 0.0;
  }
  double path = 0;
  for (std::size_t i = 0; i + 1 < images.size(); ++i) path += mean_abs_diff(images[i], images[i + 1]);
  if (path == 0.0) {
    return 0.0;
  }
  double worst = 0;
  double prev = mean_abs_diff(images.front(), images.back());
  for (std::size_t i = 1; i < images.size(); ++i) {
    const double cur = mean_abs_diff(images[i], images.back());
    worst = std::max(worst, cur - prev);
    prev = cur;
  }
  return worst / path;
}

std::vector<Point2> export_embedding(std::span<const std::vector<double>> codes) {
  if (codes.size() < 3) {
    throw UsageError("export_embedding needs at least three codes");
  }
  const std::size_t n = codes.size();
  const std::size_t dim = codes.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& c : codes) {
    if (c.size() != dim) {
      throw DimensionError("export_embedding: codes of different lengths");
    }
    for (std::size_t k = 0; k < dim; ++k) mean[k] += c[k];
  }
  for (auto& v : mean) v /= static_cast<double>(n);

  std::vector<std::vector<double>> centred(n, std::vector<double>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dim; ++k) centred[i][k] = codes[i][k] - mean[k];
  }
  std::vector<double> cov(dim * dim, 0.0);
  for (const auto& c : centred) {
    for (std::size_t r = 0; r < dim; ++r) {
      for (std::size_t k = 0; k < dim; ++k) cov[r * dim + k] += c[r] * c[k];
    }
  }
  for (auto& v : cov) v /= static_cast<double>(n);
  double trace = 0;
  for (std::size_t k = 0; k < dim; ++k) trace += cov[k * dim + k];
  if (trace <= 0.0) {
    log_warning("all style codes are identical; embedding collapses to the origin");
    return std::vector<Point2>(n, Point2{0.0, 0.0});
  }

  auto multiply = [&](const std::vector<double>& v) {
    std::vector<double> out(dim, 0.0);
    for (std::size_t r = 0; r < dim; ++r) {
      for (std::size_t k = 0; k < dim; ++k) out[r] += cov[r * dim + k] * v[k];
    }
    return out;
  };
  auto orthogonalize = [&](std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    for (const auto& u : basis) {
      double dot = 0;
      for (std::size_t k = 0; k < dim; ++k) dot += v[k] * u[k];
      for (std::size_t k = 0; k < dim; ++k) v[k] -= dot * u[k];
    }
  };
  auto norm = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };

  std::vector<std::vector<double>> components;
  for (int c = 0; c < 2; ++c) {
    // Start from the covariance column of the largest remaining diagonal entry.
    std::vector<double> v(dim, 0.0);
    std::size_t pick = 0;
    for (std::size_t k = 1; k < dim; ++k) {
      if (cov[k * dim + k] > cov[pick * dim + pick]) pick = k;
    }
    for (std::size_t r = 0; r < dim; ++r) v[r] = cov[r * dim + pick] + (r == pick ? 1.0 : 0.0) * 1e-3 * trace;
    orthogonalize(v, components);
    double len = norm(v);
    if (len <= 1e-12 * trace) {
      components.emplace_back(dim, 0.0);
      continue;
    }
    for (auto& x : v) x /= len;
    bool degenerate = false;
    for (int it = 0; it < 10000; ++it) {
      std::vector<double> next = multiply(v);
      orthogonalize(next, components);
      len = norm(next);
      if (len <= 1e-12 * trace) {
        degenerate = true;
        break;
      }
      double change = 0;
      for (std::size_t k = 0; k < dim; ++k) {
        next[k] /= len;
        change = std::max(change, std::abs(next[k] - v[k]));
      }
      v = std::move(next);
      if (change < 1e-9) break;
    }
    if (degenerate) {
      components.emplace_back(dim, 0.0);
      continue;
    }
    std::size_t largest = 0;
    for (std::size_t k = 1; k < dim; ++k) {
      if (std::abs(v[k]) > std::abs(v[largest])) largest = k;
    }
    if (v[largest] < 0) {
      for (auto& x : v) x = -x;
    }
    components.push_back(std::move(v));
  }

  std::vector<Point2> points(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double dot = 0;
      for (std::size_t k = 0; k < dim; ++k) dot += centred[i][k] * components[c][k];
      points[i][c] = dot;
    }
  }
  return points;
}

std::string embedding_csv(std::span<const Domain> domains, std::span<const Point2> points) {
  if (domains.size() != points.size()) {
    throw DimensionError("embedding_csv: one domain label per point required");
  }
  std::string out = std::string(kEmbeddingHeader) + "\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out += fmt::format("{},{:.9g},{:.9g}\n", domain_name(domains[i]), points[i][0], points[i][1]);
  }
  return out;
}

}  // namespace mist
