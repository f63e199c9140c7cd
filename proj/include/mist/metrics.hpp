#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mist/domain.hpp"
#include "mist/networks.hpp"
#include "mist/phantom.hpp"
#include "mist/training.hpp"

namespace mist {

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::size_t kSsimWindow = 7;

/// 10 log10(R^2 / MSE); identical images give kPsnrCap.
double psnr(std::span<const double> a, std::span<const double> b, double data_range = 1.0);
double psnr(const ModalityImage& a, const ModalityImage& b);

/// Mean SSIM over all 7x7 windows (stride 1, no padding) of row-major
/// width x height images, R = 1. Window variances use the n - 1 normaliser.
double ssim(std::span<const double> a, std::span<const double> b, std::size_t width, std::size_t height);
double ssim(const ModalityImage& a, const ModalityImage& b);

std::vector<double> to_double(std::span<const float> pixels);

struct MetricsRow {
  std::string cohort;
  Domain modality = Domain::T1;
  double ssim_mean = 0;
  double ssim_std = 0;
  double psnr_mean = 0;
  double psnr_std = 0;
};

struct EvalOptions {
  std::string cohort = "PHANTOM";
  StyleSource style = StyleSource::reference;
  std::uint64_t latent_seed = 0;  // per-sample seeds derive from this for the latent variant
};

/// Imputes every modality of every test sample from the other three and
/// aggregates SSIM/PSNR per modality (population std). Rows come in domain order.
std::vector<MetricsRow> evaluate(const MistNetworks<float>& nets, std::span<const PhantomSample> test_set,
                                 const EvalOptions& options = {});

inline constexpr char kMetricsHeader[] = "cohort,modality,ssim_mean,ssim_std,psnr_mean,psnr_std";
std::string metrics_csv(std::span<const MetricsRow> rows);

/// One SE style code and the domain it was encoded under.
struct StyleRecord {
  Domain domain = Domain::T1;
  std::vector<double> code;
};

/// Encodes every image of every sample under its own domain (sample-major, domain order).
std::vector<StyleRecord> encode_styles(const MistNetworks<float>& nets, std::span<const PhantomSample> samples);

struct StyleStats {
  std::vector<double> mean;
  std::vector<double> std;  // per dimension, population
  std::size_t count = 0;
};

struct StyleTable {
  std::size_t dim = 0;
  std::array<StyleStats, kNumDomains> domains;

  const StyleStats& at(Domain d) const { return domains[domain_index(d)]; }

  static StyleTable from_records(std::span<const StyleRecord> records);
  nlohmann::json to_json() const;
  static StyleTable from_json(const nlohmann::json& j);
};

StyleTable style_table(const MistNetworks<float>& nets, std::span<const PhantomSample> samples);
void write_style_table(const StyleTable& table, const std::filesystem::path& path);
StyleTable read_style_table(const std::filesystem::path& path);

/// Nearest-centroid accuracy and centroid separation of a set of style codes.
struct Disentanglement {
  double nearest_centroid_accuracy = 0;
  double mean_centroid_distance = 0;  // over unordered domain pairs
  double mean_spread = 0;             // mean distance of a code to its own centroid
};
Disentanglement disentanglement(std::span<const StyleRecord> records);

struct Interpolation {
  std::vector<double> alphas;
  std::vector<std::vector<double>> codes;
};

/// (1 - alpha) a + alpha b for alpha = 0, step, ..., 1; endpoints are copies of a and b.
Interpolation interpolate_styles(std::span<const double> a, std::span<const double> b, double step = 0.1);

double mean_abs_diff(std::span<const double> a, std::span<const double> b);

/// Mean pairwise L1 distance over all unordered pairs.
double diversity_score(std::span<const std::vector<double>> images);

/// How far a sequence strays from approaching its last element: the largest
/// increase of L1 distance to the final image between consecutive entries,
/// divided by the total path length. Zero for a monotone approach.
double approach_violation(std::span<const std::vector<double>> images);

using Point2 = std::array<double, 2>;

/// Mean-centred PCA to two components by power iteration. Identical codes map
/// to the origin with a warning.
std::vector<Point2> export_embedding(std::span<const std::vector<double>> codes);

inline constexpr char kEmbeddingHeader[] = "domain,pc1,pc2";
std::string embedding_csv(std::span<const Domain> domains, std::span<const Point2> points);

}  // namespace mist
