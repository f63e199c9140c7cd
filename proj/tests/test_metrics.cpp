#include <gtest/gtest.h>

#include <cmath>

#include "mist/errors.hpp"
#include "mist/metrics.hpp"
#include "suites.hpp"
#include "test_support.hpp"

using namespace mist;

namespace {

std::vector<double> random_image(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double dist(const Point2& a, const Point2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

ArchConfig tiny_arch() {
  ArchConfig a;
  a.size = 16;
  a.levels = 2;
  a.base_ch = 4;
  a.content_ch = 8;
  a.style_dim = 4;
  a.noise_dim = 4;
  a.map_width = 8;
  a.domain_emb = 4;
  a.dsc_blocks = 2;
  return a;
}

}  // namespace

TEST(Metrics, OracleSuite) {
  for (const auto& c : suites::metric_oracles(50)) EXPECT_TRUE(c.pass) << c.name << ": " << c.value;
}

TEST(Metrics, PsnrDecreasesWithNoise) {
  Rng rng(2);
  const auto x = random_image(32 * 32, rng);
  double last = kPsnrCap + 1;
  for (double amp : {0.01, 0.05, 0.1, 0.2}) {
    Rng noise(3);
    auto y = x;
    for (auto& v : y) v += amp * (noise.uniform() - 0.5);
    const double p = psnr(x, y);
    EXPECT_LT(p, last);
    last = p;
  }
}

TEST(Metrics, ErrorsOnBadShapes) {
  const std::vector<double> a(36, 0.5), b(35, 0.5);
  EXPECT_THROW(ssim(a, a, 6, 6), DimensionError);
  EXPECT_THROW(psnr(a, b), DimensionError);
}

TEST(Metrics, CsvFormat) {
  const MetricsRow row{"LGG", Domain::T1, 0.901934, 0.021571, 24.684691, 3.879521};
  const std::vector<MetricsRow> rows = {row};
  EXPECT_EQ(metrics_csv(rows), std::string(kMetricsHeader) + "\nLGG,T1,0.90193,0.02157,24.68469,3.87952\n");
}

TEST(Metrics, EvaluateShapeAndSingleSampleStd) {
  const ArchConfig a = tiny_arch();
  MistNetworks<float> nets(a, 1);
  const DatasetSplits data = make_dataset(5, a.size, 2);
  ASSERT_EQ(data.test.size(), 1u);
  const auto rows = evaluate(nets, data.test);
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].modality, domain_from_index(i));
    EXPECT_EQ(rows[i].cohort, "PHANTOM");
    EXPECT_EQ(rows[i].ssim_std, 0.0);
    EXPECT_EQ(rows[i].psnr_std, 0.0);
    EXPECT_GE(rows[i].ssim_mean, -1.0);
    EXPECT_LE(rows[i].ssim_mean, 1.0);
  }
  EXPECT_EQ(metrics_csv(rows), metrics_csv(evaluate(nets, data.test)));
  EXPECT_THROW(evaluate(nets, {}), ConfigError);
}

TEST(StyleTable, StatsAndJsonRoundTrip) {
  const ArchConfig a = tiny_arch();
  MistNetworks<float> nets(a, 3);
  const DatasetSplits data = make_dataset(5, a.size, 4);
  const StyleTable one = style_table(nets, data.test);
  EXPECT_EQ(one.dim, a.style_dim);
  for (Domain d : kAllDomains) {
    EXPECT_EQ(one.at(d).count, 1u);
    for (double s : one.at(d).std) EXPECT_EQ(s, 0.0);
  }
  const StyleTable t = style_table(nets, data.train);
  mist::testing::TempDir dir("styles");
  write_style_table(t, dir.path() / "style_table.json");
  const StyleTable r = read_style_table(dir.path() / "style_table.json");
  for (Domain d : kAllDomains) {
    EXPECT_EQ(r.at(d).mean, t.at(d).mean);
    EXPECT_EQ(r.at(d).std, t.at(d).std);
    EXPECT_EQ(r.at(d).count, 3u);
  }
  EXPECT_THROW(StyleTable::from_json({{"dim", 4}}), ConfigError);
}

TEST(Disentanglement, SeparatedClusters) {
  std::vector<StyleRecord> records;
  Rng rng(5);
  for (Domain d : kAllDomains) {
    for (int i = 0; i < 10; ++i) {
      std::vector<double> c(3, 0.0);
      c[domain_index(d) % 3] = domain_index(d) < 3 ? 5.0 : -5.0;
      for (auto& v : c) v += 0.1 * rng.normal();
      records.push_back({d, c});
    }
  }
  const Disentanglement r = disentanglement(records);
  EXPECT_EQ(r.nearest_centroid_accuracy, 1.0);
  EXPECT_GT(r.mean_centroid_distance, 2 * r.mean_spread);
}

TEST(Interpolation, CountsEndpointsAndAffinity) {
  const std::vector<double> a = {0.1, -2.0, 3.0}, b = {1.0, 0.5, -1.0};
  const Interpolation it = interpolate_styles(a, b, 0.1);
  ASSERT_EQ(it.codes.size(), 11u);
  EXPECT_EQ(it.codes.front(), a);
  EXPECT_EQ(it.codes.back(), b);
  for (std::size_t k = 0; k < it.codes.size(); ++k) {
    const double alpha = it.alphas[k];
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(it.codes[k][i], (1 - alpha) * a[i] + alpha * b[i], 1e-12);
  }
  const Interpolation half = interpolate_styles(a, b, 0.5);
  ASSERT_EQ(half.codes.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(half.codes[1][i], 0.5 * (a[i] + b[i]), 1e-12);
  EXPECT_THROW(interpolate_styles(a, b, 0.0), ConfigError);
  EXPECT_THROW(interpolate_styles(a, b, 1.5), ConfigError);
}

TEST(Interpolation, ApproachViolation) {
  std::vector<std::vector<double>> path;
  for (int k = 0; k <= 10; ++k) path.push_back({k / 10.0, 1 - k / 10.0});
  EXPECT_NEAR(approach_violation(path), 0.0, 1e-12);
  path[5] = {0.0, 1.0};
  EXPECT_GT(approach_violation(path), 0.05);
}

TEST(Diversity, Examples) {
  std::vector<std::vector<double>> same(3, std::vector<double>(4, 0.3));
  EXPECT_EQ(diversity_score(same), 0.0);
  std::vector<std::vector<double>> two = {std::vector<double>(4, 0.0), std::vector<double>(4, 0.2)};
  EXPECT_NEAR(diversity_score(two), 0.2, 1e-12);
  std::vector<std::vector<double>> three = {std::vector<double>(4, 0.1), std::vector<double>(4, 0.2),
                                            std::vector<double>(4, 0.3)};
  EXPECT_NEAR(diversity_score(three), (0.1 + 0.2 + 0.1) / 3, 1e-12);
  EXPECT_THROW(diversity_score(std::span(same).first(1)), UsageError);
}

TEST(Embedding, CollinearCodesHaveNoSecondComponent) {
  std::vector<std::vector<double>> codes;
  for (int i = 0; i < 20; ++i) codes.push_back({1.0 + i, 2.0 + 2.0 * i, -0.5 * i, 3.0});
  const auto pts = export_embedding(codes);
  ASSERT_EQ(pts.size(), codes.size());
  for (const auto& p : pts) EXPECT_LT(std::abs(p[1]), 1e-6);
}

TEST(Embedding, VarianceOrderingAndPlanarIsometry) {
  Rng rng(6);
  std::vector<std::vector<double>> codes;
  for (int i = 0; i < 30; ++i) {
    const double u = 3.0 * rng.normal(), v = 0.7 * rng.normal();
    codes.push_back({u + 1.0, v - 2.0, 0.0, 5.0});
  }
  const auto pts = export_embedding(codes);
  double v1 = 0, v2 = 0;
  for (const auto& p : pts) {
    v1 += p[0] * p[0];
    v2 += p[1] * p[1];
  }
  EXPECT_GE(v1, v2);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (std::size_t j = i + 1; j < codes.size(); ++j) EXPECT_NEAR(dist(pts[i], pts[j]), dist(codes[i], codes[j]), 1e-6);
  }
}

TEST(Embedding, DegenerateInputs) {
  std::vector<std::vector<double>> same(5, std::vector<double>{1.0, 2.0});
  for (const auto& p : export_embedding(same)) {
    EXPECT_EQ(p[0], 0.0);
    EXPECT_EQ(p[1], 0.0);
  }
  EXPECT_THROW(export_embedding(std::span(same).first(2)), UsageError);
  const std::vector<Domain> domains = {Domain::T2};
  const std::vector<Point2> pts = {Point2{0.5, -1.25}};
  EXPECT_EQ(embedding_csv(domains, pts), std::string(kEmbeddingHeader) + "\nT2,0.5,-1.25\n");
}
