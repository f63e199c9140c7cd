#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "mist/errors.hpp"
#include "mist/pgm.hpp"
#include "mist/phantom.hpp"
#include "test_support.hpp"

using namespace mist;
namespace fs = std::filesystem;

namespace {

double l1(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

void write_gray(const fs::path& path, std::size_t w, std::size_t h, std::uint32_t maxval,
                const std::vector<std::uint16_t>& samples) {
  PgmImage img;
  img.width = w;
  img.height = h;
  img.maxval = maxval;
  img.samples = samples;
  write_pgm(path, img);
}

}  // namespace

TEST(Domain, FixedIndexMapping) {
  EXPECT_EQ(domain_index(Domain::T1), 0u);
  EXPECT_EQ(domain_index(Domain::T1c), 1u);
  EXPECT_EQ(domain_index(Domain::T2), 2u);
  EXPECT_EQ(domain_index(Domain::F), 3u);
  EXPECT_EQ(parse_domain("flair"), Domain::F);
  EXPECT_EQ(parse_domain("t1c"), Domain::T1c);
  EXPECT_THROW(parse_domain("pd"), UsageError);
  EXPECT_THROW(domain_from_index(4), UsageError);
}

TEST(Tissue, DeterministicAndInRange) {
  const TissueMap a = gen_tissue_map(1, 64);
  const TissueMap b = gen_tissue_map(1, 64);
  EXPECT_EQ(a.pd, b.pd);
  EXPECT_EQ(a.t1p, b.t1p);
  EXPECT_EQ(a.t2p, b.t2p);
  for (const auto* ch : {&a.pd, &a.t1p, &a.t2p, &a.lesion, &a.fluid}) {
    for (float v : *ch) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Tissue, Seed1Fixture) {
  const TissueMap t = gen_tissue_map(1, 64);
  EXPECT_GT(*std::max_element(t.pd.begin(), t.pd.end()), 0.5f);
  for (std::size_t idx : {std::size_t{0}, std::size_t{63}, std::size_t{63 * 64}, std::size_t{64 * 64 - 1}}) {
    EXPECT_EQ(t.pd[idx], 0.0f);
  }
}

TEST(Tissue, TooSmallIsConfigError) { EXPECT_THROW(gen_tissue_map(1, 15), ConfigError); }

TEST(Render, IdentityStyleIsBaseContrast) {
  const TissueMap t = gen_tissue_map(4, 32);
  for (Domain d : kAllDomains) {
    StyleParams s;
    s.domain = d;
    const ModalityImage img = render_modality(t, s);
    const auto base = base_contrast(t, d);
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_EQ(img.pixels[i], std::clamp(base[i], 0.0f, 1.0f));
    }
  }
}

TEST(Render, StylesAndContentAreVisible) {
  const TissueMap t = gen_tissue_map(4, 32);
  StyleParams s1, s2;
  s2.gain = 0.85;
  EXPECT_GT(l1(render_modality(t, s1).pixels, render_modality(t, s2).pixels), 0.0);
  const TissueMap u = gen_tissue_map(5, 32);
  EXPECT_GT(l1(render_modality(t, s1).pixels, render_modality(u, s1).pixels), 0.0);
}

TEST(Render, T1cDiffersFromT1OnlyAtLesions) {
  // Find a seed with a lesion so the check is not vacuous.
  for (std::uint64_t seed = 1; seed < 50; ++seed) {
    const TissueMap t = gen_tissue_map(seed, 64);
    if (*std::max_element(t.lesion.begin(), t.lesion.end()) == 0.0f) continue;
    StyleParams s1;
    s1.domain = Domain::T1;
    StyleParams s1c = s1;
    s1c.domain = Domain::T1c;
    const auto a = render_modality(t, s1).pixels;
    const auto b = render_modality(t, s1c).pixels;
    bool any = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] != b[i]) {
        any = true;
        EXPECT_GT(t.lesion[i], 0.0f) << "pixel " << i;
      }
    }
    EXPECT_TRUE(any);
    return;
  }
  FAIL() << "no phantom with a lesion among seeds 1..49";
}

TEST(StyleParams, RangesAndReproducibility) {
  Rng rng(10);
  const StyleRanges r;
  for (int i = 0; i < 1000; ++i) {
    const StyleParams s = sample_style_params(Domain::T2, rng);
    EXPECT_GE(s.gamma_exp, r.gamma_exp.lo);
    EXPECT_LE(s.gamma_exp, r.gamma_exp.hi);
    EXPECT_GE(s.gain, r.gain.lo);
    EXPECT_LE(s.gain, r.gain.hi);
    EXPECT_GE(s.bias_amp, r.bias_amp.lo);
    EXPECT_LE(s.bias_amp, r.bias_amp.hi);
    EXPECT_GE(s.noise_sigma, r.noise_sigma.lo);
    EXPECT_LE(s.noise_sigma, r.noise_sigma.hi);
  }
  Rng a(3), b(3);
  const StyleParams sa = sample_style_params(Domain::T1, a);
  const StyleParams sb = sample_style_params(Domain::F, b);
  EXPECT_EQ(sa.gamma_exp, sb.gamma_exp);
  EXPECT_EQ(sa.gain, sb.gain);
  EXPECT_EQ(sa.noise_seed, sb.noise_seed);
  EXPECT_EQ(sa.domain, Domain::T1);
  EXPECT_EQ(sb.domain, Domain::F);
}

TEST(Dataset, SplitSizes) {
  auto check = [](std::size_t n, std::size_t tr, std::size_t va, std::size_t te) {
    const SplitSizes s = split_sizes(n);
    EXPECT_EQ(s.train, tr) << n;
    EXPECT_EQ(s.val, va) << n;
    EXPECT_EQ(s.test, te) << n;
  };
  check(100, 60, 20, 20);
  check(5, 3, 1, 1);
  check(7, 5, 1, 1);
  EXPECT_THROW(split_sizes(4), ConfigError);
}

TEST(Dataset, DeterministicDisjointAndNormalized) {
  const DatasetSplits a = make_dataset(12, 32, 8);
  const DatasetSplits b = make_dataset(12, 32, 8);
  std::set<std::uint64_t> seeds;
  std::size_t total = 0;
  for (const auto* split : {&a.train, &a.val, &a.test}) {
    for (const auto& s : *split) {
      seeds.insert(s.seed);
      ++total;
      for (const auto& img : s.images) {
        for (float v : img.pixels) {
          EXPECT_GE(v, 0.0f);
          EXPECT_LE(v, 1.0f);
        }
      }
    }
  }
  EXPECT_EQ(seeds.size(), total);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    for (Domain d : kAllDomains) EXPECT_EQ(a.train[i].image(d).pixels, b.train[i].image(d).pixels);
  }
}

TEST(Dataset, WriteReadRoundTrip) {
  mist::testing::TempDir dir("dataset");
  const DatasetSplits a = make_dataset(6, 16, 2);
  write_dataset(dir.path(), a, 6, 16, 2);
  const auto manifest = nlohmann::json::parse(mist::testing::slurp(dir.path() / "manifest.json"));
  EXPECT_EQ(manifest.at("splits").at("train"), 4);
  EXPECT_TRUE(fs::exists(dir.path() / "train" / "00000" / "flair.pgm"));
  EXPECT_TRUE(fs::exists(dir.path() / "test" / "00005" / "style.json"));

  const DatasetSplits b = read_dataset(dir.path(), 16);
  ASSERT_EQ(b.test.size(), 1u);
  for (Domain d : kAllDomains) {
    const auto& x = a.test[0].image(d).pixels;
    const auto& y = b.test[0].image(d).pixels;
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1.0 / 65535);
  }
  EXPECT_THROW(read_dataset(dir.path(), 32), ConfigError);
}

TEST(External, NormalizationPaddingAndSkips) {
  mist::testing::TempDir dir("external");
  // Sample a: 50 rows x 60 cols, 8-bit {0,255}; t2 constant.
  const fs::path a = dir.path() / "a";
  fs::create_directories(a);
  std::vector<std::uint16_t> binary(60 * 50);
  for (std::size_t i = 0; i < binary.size(); ++i) binary[i] = i % 2 ? 255 : 0;
  for (const char* stem : {"t1", "t1c", "flair"}) write_gray(a / (std::string(stem) + ".pgm"), 60, 50, 255, binary);
  write_gray(a / "t2.pgm", 60, 50, 255, std::vector<std::uint16_t>(60 * 50, 77));
  // Sample b lacks flair and is skipped.
  const fs::path b = dir.path() / "b";
  fs::create_directories(b);
  for (const char* stem : {"t1", "t1c", "t2"}) write_gray(b / (std::string(stem) + ".pgm"), 8, 8, 255, binary);

  const auto samples = load_external(dir.path(), 64);
  ASSERT_EQ(samples.size(), 1u);
  const auto& t1 = samples[0].image(Domain::T1).pixels;
  ASSERT_EQ(t1.size(), 64u * 64u);
  // 7 padding rows on top, 2 padding columns on the left.
  EXPECT_EQ(t1[6 * 64 + 10], 0.0f);
  EXPECT_EQ(t1[7 * 64 + 1], 0.0f);
  EXPECT_EQ(t1[7 * 64 + 2], 0.0f);  // source pixel 0 -> 0
  EXPECT_EQ(t1[7 * 64 + 3], 1.0f);  // source pixel 1 -> 255 -> 1
  EXPECT_EQ(t1[56 * 64 + 3], 1.0f);
  EXPECT_EQ(t1[57 * 64 + 3], 0.0f);
  for (float v : samples[0].image(Domain::T2).pixels) EXPECT_EQ(v, 0.0f);
}

TEST(External, UnreadablePgmNamesFile) {
  mist::testing::TempDir dir("badpgm");
  const fs::path s = dir.path() / "s";
  fs::create_directories(s);
  for (const char* stem : {"t1", "t1c", "t2"}) write_gray(s / (std::string(stem) + ".pgm"), 4, 4, 255, std::vector<std::uint16_t>(16, 1));
  std::ofstream(s / "flair.pgm") << "P2 garbage";
  try {
    load_external(dir.path(), 16);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("flair.pgm"), std::string::npos);
  }
}
