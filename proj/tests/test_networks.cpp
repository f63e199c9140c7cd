#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mist/errors.hpp"
#include "mist/networks.hpp"
#include "mist/ops.hpp"
#include "test_support.hpp"

using namespace mist;
using TF = Tensor<float>;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.size = 32;
  a.levels = 2;
  a.base_ch = 4;
  a.content_ch = 8;
  a.style_dim = 6;
  a.noise_dim = 5;
  a.map_width = 12;
  a.domain_emb = 3;
  a.dsc_blocks = 3;
  return a;
}

TF random_image(std::size_t size, std::uint64_t seed, std::size_t n = 1) {
  Rng rng(seed);
  std::vector<float> v(n * size * size);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return TF(Shape{n, 1, size, size}, std::move(v));
}

double l1(const TF& a, const TF& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / static_cast<double>(a.numel());
}

// Independent closed-form parameter count of the architecture.
std::size_t expected_parameters(const ArchConfig& c) {
  auto ch = [&](std::size_t i) { return i >= c.levels ? c.content_ch : std::min(c.base_ch << i, c.content_ch); };
  auto conv = [](std::size_t cin, std::size_t cout) { return cin * cout * 9 + cout; };
  auto lin = [](std::size_t din, std::size_t dout) { return din * dout + dout; };
  const std::size_t L = c.levels, S = c.style_dim, C = c.content_ch, W = c.map_width, E = c.domain_emb;
  std::size_t n = 0;
  for (std::size_t i = 0; i < L; ++i) n += conv(i == 0 ? 1 : ch(i - 1), ch(i));  // SE trunk
  n += 4 * lin(ch(L - 1), S);                                                    // SE heads
  n += lin(c.noise_dim, W) + 3 * lin(W, W) + 4 * lin(W, S);                      // M
  n += conv(1, ch(0));                                                           // CE stem
  for (std::size_t i = 0; i < L; ++i) n += conv(ch(i), ch(i + 1));              // CE down
  for (std::size_t i = 0; i < L; ++i) n += conv(ch(i + 1), ch(i)) + 2 * lin(S, ch(i));  // Dec levels
  n += conv(ch(0), 1);                                                           // Dec out
  n += conv(3 * C, C) + conv(C, C);                                              // Comb
  n += 4 * E + conv(C + E, C) + conv(C, C);                                      // Sep
  for (std::size_t b = 0; b < c.dsc_blocks; ++b) n += conv(b == 0 ? 1 : ch(b - 1), ch(b));  // Dsc trunk
  n += 4 * lin(ch(c.dsc_blocks - 1), 1);                                         // Dsc heads
  return n;
}

}  // namespace

TEST(Networks, ParameterCountMatchesClosedForm) {
  for (const ArchConfig& a : {ArchConfig{}, small_arch()}) {
    MistNetworks<float> nets(a, 1);
    EXPECT_EQ(nets.parameter_count(), expected_parameters(a));
  }
}

TEST(Networks, ParameterNamesUnique) {
  MistNetworks<float> nets(small_arch(), 1);
  std::set<std::string> names;
  for (const auto& p : nets.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  for (const char* m : {"SE", "M", "CE", "Dec", "Comb", "Sep", "Dsc"}) EXPECT_FALSE(nets.module_parameters(m).empty()) << m;
}

TEST(Networks, StyleEncoderShapesAndHeads) {
  const ArchConfig a = small_arch();
  MistNetworks<float> nets(a, 2);
  const TF x = random_image(a.size, 3);
  const TF s1 = nets.style_encode(x, Domain::T1);
  EXPECT_EQ(s1.shape(), (Shape{1, a.style_dim}));
  EXPECT_GT(l1(s1, nets.style_encode(x, Domain::F)), 0.0);
  EXPECT_EQ(s1.values(), nets.style_encode(x, Domain::T1).values());
}

TEST(Networks, MappingNetwork) {
  const ArchConfig a = small_arch();
  MistNetworks<float> nets(a, 2);
  Rng rng(4);
  auto z = [&] {
    std::vector<float> v(a.noise_dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return TF(Shape{1, a.noise_dim}, v);
  };
  const TF z1 = z(), z2 = z();
  const TF s = nets.map_noise(z1, Domain::T2);
  EXPECT_EQ(s.shape(), (Shape{1, a.style_dim}));
  EXPECT_GT(l1(s, nets.map_noise(z2, Domain::T2)), 0.0);
  EXPECT_EQ(s.values(), nets.map_noise(z1, Domain::T2).values());
  EXPECT_THROW(nets.map_noise(TF(Shape{1, a.noise_dim + 1}, 0.0f), Domain::T2), DimensionError);
}

TEST(Networks, ContentEncoderShapeAndPlaneMeans) {
  const ArchConfig a = small_arch();
  MistNetworks<float> nets(a, 2);
  const Content<float> c = nets.content_encode(random_image(a.size, 5));
  EXPECT_EQ(c.latent.shape(), (Shape{1, a.content_ch, a.content_size(), a.content_size()}));
  ASSERT_EQ(c.skips.size(), a.levels);
  EXPECT_EQ(c.skips[0].shape(), (Shape{1, a.channels(0), a.size, a.size}));
  const std::size_t hw = a.content_size() * a.content_size();
  for (std::size_t p = 0; p < a.content_ch; ++p) {
    double m = 0;
    for (std::size_t i = 0; i < hw; ++i) m += c.latent.data()[p * hw + i];
    EXPECT_LT(std::abs(m / hw), 1e-4) << "plane " << p;
  }
}

TEST(Networks, DecodeRoundTripShapeAndRange) {
  for (std::size_t size : {32u, 64u}) {
    ArchConfig a = small_arch();
    a.size = size;
    a.levels = size == 32 ? 2 : 3;
    MistNetworks<float> nets(a, 6);
    std::vector<Content<float>> cs;
    for (int i = 0; i < 3; ++i) cs.push_back(nets.content_encode(random_image(size, 10 + i)));
    const Content<float> cc = nets.combine(cs);
    EXPECT_EQ(cc.latent.shape(), cs[0].latent.shape());
    const TF s = nets.style_encode(random_image(size, 20), Domain::T1c);
    const TF y = nets.decode(cc, s);
    EXPECT_EQ(y.shape(), (Shape{1, 1, size, size}));
    for (float v : y.data()) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LT(v, 1.0f);
    }
    const TF s2 = nets.style_encode(random_image(size, 21), Domain::T1c);
    EXPECT_GT(l1(y, nets.decode(cc, s2)), 0.0);
  }
}

TEST(Networks, DecodeDependsOnStyle) {
  // Finite-difference Jacobian of the decoder output with respect to one style entry.
  ArchConfig a = small_arch();
  MistNetworks<double> nets(a, 7);
  Rng rng(8);
  const auto x = mist::testing::uniform_tensor({1, 1, a.size, a.size}, rng, 0.0, 1.0);
  const Content<double> c = nets.content_encode(x);
  auto s = mist::testing::uniform_tensor({1, a.style_dim}, rng);
  const auto y0 = nets.decode(c, s);
  s.data()[0] += 1e-4;
  const auto y1 = nets.decode(c, s);
  double diff = 0;
  for (std::size_t i = 0; i < y0.numel(); ++i) diff += std::abs(y1.data()[i] - y0.data()[i]);
  EXPECT_GT(diff / 1e-4, 1e-6);
  EXPECT_THROW(nets.decode(c, Tensor<double>(Shape{1, a.style_dim + 1}, 0.0)), DimensionError);
}

TEST(Networks, CombineContract) {
  const ArchConfig a = small_arch();
  MistNetworks<float> nets(a, 9);
  std::vector<Content<float>> cs;
  for (int i = 0; i < 3; ++i) cs.push_back(nets.content_encode(random_image(a.size, 30 + i)));
  const Content<float> cc = nets.combine(cs);
  std::vector<Content<float>> permuted = {cs[1], cs[0], cs[2]};
  EXPECT_GT(l1(cc.latent, nets.combine(permuted).latent), 0.0);
  std::vector<Content<float>> same = {cs[0], cs[0], cs[0]};
  const Content<float> cs_same = nets.combine(same);
  for (float v : cs_same.latent.data()) EXPECT_TRUE(std::isfinite(v));
  std::vector<Content<float>> two = {cs[0], cs[1]};
  EXPECT_THROW(nets.combine(two), UsageError);
}

TEST(Networks, SeparateDependsOnDomain) {
  const ArchConfig a = small_arch();
  MistNetworks<float> nets(a, 10);
  const Content<float> c = nets.content_encode(random_image(a.size, 40));
  const Content<float> p = nets.separate(c, Domain::T1);
  EXPECT_EQ(p.latent.shape(), c.latent.shape());
  EXPECT_GT(l1(p.latent, nets.separate(c, Domain::T2).latent), 0.0);
  EXPECT_EQ(p.latent.values(), nets.separate(c, Domain::T1).latent.values());
}

TEST(Networks, DiscriminatorRangeBatchAndInputGradient) {
  const ArchConfig a = small_arch();
  MistNetworks<float> nets(a, 11);
  const TF p = nets.discriminate(random_image(a.size, 50, 3), Domain::F);
  EXPECT_EQ(p.shape(), (Shape{3, 1}));
  for (float v : p.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  TF x = random_image(a.size, 51);
  x.set_requires_grad(true);
  sum(nets.discriminate(x, Domain::F)).backward();
  double norm = 0;
  for (float g : x.grad()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
}

TEST(Networks, DomainHeadsAreIndependent) {
  const ArchConfig a = small_arch();
  MistNetworks<float> nets(a, 12);
  const TF x = random_image(a.size, 60);
  const TF before_t1 = nets.style_encode(x, Domain::T1);
  const TF before_f = nets.style_encode(x, Domain::F);
  for (auto& p : nets.module_parameters("SE")) {
    if (p.name.rfind("SE.head.F.", 0) == 0) std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0f);
  }
  EXPECT_EQ(before_t1.values(), nets.style_encode(x, Domain::T1).values());
  EXPECT_GT(l1(before_f, nets.style_encode(x, Domain::F)), 0.0);
}

TEST(Networks, ExportImportRoundTrip) {
  const ArchConfig a = small_arch();
  MistNetworks<float> src(a, 13), dst(a, 14);
  Checkpoint ckpt;
  ckpt.entries = src.export_parameters();
  dst.import_parameters(ckpt);
  const TF x = random_image(a.size, 70);
  EXPECT_EQ(src.style_encode(x, Domain::T2).values(), dst.style_encode(x, Domain::T2).values());
  ckpt.entries.pop_back();
  EXPECT_THROW(dst.import_parameters(ckpt), IoError);
}

TEST(ArchConfig, JsonRoundTripAndValidation) {
  const ArchConfig a = small_arch();
  EXPECT_EQ(ArchConfig::from_json(a.to_json()), a);
  EXPECT_THROW(ArchConfig::from_json({{"levels", 3}, {"colour", 1}}), ConfigError);
  ArchConfig bad = a;
  bad.size = 48;
  EXPECT_THROW(bad.validate(), ConfigError);
}
