#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <fstream>

#include "mist/errors.hpp"
#include "mist/losses.hpp"
#include "mist/training.hpp"
#include "suites.hpp"
#include "test_support.hpp"

using namespace mist;
namespace fs = std::filesystem;

namespace {

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

TrainConfig tiny_train(std::size_t iterations) {
  TrainConfig c;
  c.iterations = iterations;
  c.sdl_decay_iters = std::max<std::size_t>(1, iterations / 2);
  c.checkpoint_every = 2;
  c.seed = 3;
  return c;
}

std::vector<std::vector<float>> snapshot(const std::vector<Parameter<float>>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.push_back(p.tensor.values());
  return out;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST(Losses, IdentitiesAndZeroCases) {
  for (const auto& c : suites::loss_identities()) EXPECT_TRUE(c.pass) << c.name << ": " << c.value;
}

TEST(Losses, ErrorsAndSymmetry) {
  using TD = Tensor<double>;
  const TD a(Shape{1, 3}, std::vector<double>{1, 2, 3});
  const TD b(Shape{1, 3}, std::vector<double>{0, 5, 1});
  EXPECT_EQ(csl(a, b).item(), csl(b, a).item());
  EXPECT_EQ(sdl(a, b).item(), sdl(b, a).item());
  EXPECT_THROW(csl(a, TD(Shape{1, 4}, 0.0)), DimensionError);
  EXPECT_THROW(sdl(a, TD(Shape{1, 4}, 0.0)), DimensionError);
  EXPECT_THROW(g_adv(TD(Shape{1, 1}, 1.5)), UsageError);
  EXPECT_THROW(dsc_adv(TD(Shape{1, 1}, -0.1), TD(Shape{1, 1}, 0.5)), UsageError);
  std::vector<DomainImage<double>> x = {{Domain::T1, a}}, y = {{Domain::T2, a}};
  EXPECT_THROW(ccl<double>(x, y), UsageError);
  EXPECT_EQ(parse_adv_loss("bce"), AdvLoss::bce);
  EXPECT_THROW(parse_adv_loss("hinge"), ConfigError);
}

TEST(Tasks, OrderingAndFrequencies) {
  const Task t = task_for_target(Domain::T2);
  EXPECT_EQ(t.inputs, (std::array<Domain, 3>{Domain::T1, Domain::T1c, Domain::F}));
  Rng rng(1);
  std::array<int, 4> counts{};
  for (int i = 0; i < 10000; ++i) ++counts[domain_index(sample_task(rng).target)];
  for (int c : counts) EXPECT_NEAR(c / 10000.0, 0.25, 0.02);
}

TEST(Tasks, PlanUsesOwnTargetImage) {
  const ArchConfig a = tiny_arch();
  const DatasetSplits data = make_dataset(5, a.size, 1);
  Rng rng(2);
  const auto plan = make_plan<float>(data.train[2], data.train, a, 1.0, rng);
  EXPECT_EQ(plan.target.values(), data.train[2].image(plan.task.target).pixels);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(plan.inputs[i].values(), data.train[2].image(plan.task.inputs[i]).pixels);
  }
}

TEST(TrainConfig, DefaultsJsonAndValidation) {
  const TrainConfig d;
  EXPECT_EQ(d.batch_size, 2u);
  EXPECT_EQ(d.lr_main, 1e-4);
  EXPECT_EQ(d.lr_mapping, 1e-6);
  EXPECT_EQ(TrainConfig::from_json(d.to_json()), d);
  EXPECT_EQ(TrainConfig::from_json({{"iterations", 10}}).sdl_decay_iters, 5u);
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", 1}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"iterations", -1}}), ConfigError);
  TrainConfig bad;
  bad.style_source_mix = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  TrainConfig decay;
  decay.lambda_ds = 2.0;
  decay.sdl_decay_iters = 100;
  EXPECT_EQ(decay.weights_at(0).ds, 2.0);
  EXPECT_EQ(decay.weights_at(50).ds, 1.0);
  EXPECT_EQ(decay.weights_at(150).ds, 0.0);
}

TEST(Trainer, GeneratorStepReachesEveryGeneratorModule) {
  const ArchConfig a = tiny_arch();
  const DatasetSplits data = make_dataset(5, a.size, 4);
  MistNetworks<float> nets(a, 5);
  TrainConfig cfg = tiny_train(1);
  Trainer trainer(nets, cfg, data.train);
  // Mix the style branch so both SE and M receive gradients within one batch.
  std::vector<const PhantomSample*> batch = {&data.train[0], &data.train[1], &data.train[2], &data.train[0]};
  const auto dsc_before = snapshot(nets.module_parameters("Dsc"));
  Rng rng(6);
  const LossBreakdown b = trainer.generator_step(batch, cfg.weights_at(0), rng);
  EXPECT_EQ(b.cl, b.csl + b.ccl);
  for (double v : {b.csl, b.ccl, b.g_adv, b.sdl, b.g_total}) EXPECT_TRUE(std::isfinite(v));
  for (const char* m : {"SE", "M", "CE", "Dec", "Comb", "Sep"}) {
    double norm = 0;
    for (const auto& p : nets.module_parameters(m)) {
      ASSERT_TRUE(p.tensor.has_grad()) << p.name;
      for (float g : p.tensor.grad()) norm += std::abs(g);
    }
    EXPECT_GT(norm, 0.0) << m;
  }
  EXPECT_EQ(snapshot(nets.module_parameters("Dsc")), dsc_before);
}

TEST(Trainer, DiscriminatorStepIsolation) {
  const ArchConfig a = tiny_arch();
  const DatasetSplits data = make_dataset(5, a.size, 7);
  MistNetworks<float> nets(a, 8);
  Trainer trainer(nets, tiny_train(1), data.train);
  std::vector<const PhantomSample*> batch = {&data.train[0], &data.train[1]};
  const auto gen_before = snapshot(nets.module_parameters("CE"));
  const auto se_before = snapshot(nets.module_parameters("SE"));
  const auto dsc_before = snapshot(nets.module_parameters("Dsc"));
  Rng rng(9);
  const double loss = trainer.discriminator_step(batch, rng);
  EXPECT_GE(loss, 0.0);
  EXPECT_LE(loss, 2.0);
  EXPECT_EQ(snapshot(nets.module_parameters("CE")), gen_before);
  EXPECT_EQ(snapshot(nets.module_parameters("SE")), se_before);
  EXPECT_NE(snapshot(nets.module_parameters("Dsc")), dsc_before);
}

TEST(Trainer, DiscriminatorLearnsAgainstFrozenGenerator) {
  const ArchConfig a = tiny_arch();
  const DatasetSplits data = make_dataset(25, a.size, 10);
  MistNetworks<float> nets(a, 11);
  TrainConfig cfg = tiny_train(1);
  cfg.lr_main = 1e-3;
  Trainer trainer(nets, cfg, data.train);
  Rng rng(12);
  for (int step = 0; step < 500; ++step) {
    std::vector<const PhantomSample*> batch = {&data.train[rng.uniform_int(data.train.size())],
                                               &data.train[rng.uniform_int(data.train.size())]};
    trainer.discriminator_step(batch, rng);
  }
  NoGradGuard no_grad;
  double real = 0, fake = 0;
  Rng eval_rng(13);
  for (const auto& s : data.val) {
    const auto plan = make_plan<float>(s, data.val, a, 1.0, eval_rng);
    const Domain t = plan.task.target;
    std::vector<Content<float>> cs;
    for (const auto& x : plan.inputs) cs.push_back(nets.content_encode(x));
    const auto x_hat = nets.decode(nets.combine(cs), nets.style_encode(plan.target, t));
    real += nets.discriminate(plan.target, t).item();
    fake += nets.discriminate(x_hat, t).item();
  }
  EXPECT_GT(real, fake);
}

TEST(Train, LogRowsCheckpointsAndDeterminism) {
  const ArchConfig a = tiny_arch();
  const DatasetSplits data = make_dataset(5, a.size, 14);
  mist::testing::TempDir d1("train1"), d2("train2");
  for (const auto* dir : {&d1, &d2}) {
    MistNetworks<float> nets(a, 15);
    TrainOptions opt;
    opt.out_dir = dir->path();
    const auto rows = train(nets, data.train, tiny_train(10), opt);
    EXPECT_EQ(rows.size(), 10u);
  }
  EXPECT_EQ(count_lines(d1.path() / "loss_log.csv"), 11u);
  EXPECT_TRUE(fs::exists(d1.path() / "ckpt_00000010.mist"));
  EXPECT_TRUE(fs::exists(d1.path() / "ckpt_00000002.mist"));
  EXPECT_EQ(mist::testing::slurp(d1.path() / "latest.mist"), mist::testing::slurp(d2.path() / "latest.mist"));
  EXPECT_EQ(mist::testing::slurp(d1.path() / "loss_log.csv"), mist::testing::slurp(d2.path() / "loss_log.csv"));

  const Checkpoint ckpt = read_checkpoint(d1.path() / "latest.mist");
  EXPECT_EQ(ckpt.header.at("iteration"), 10);
  EXPECT_EQ(ArchConfig::from_json(ckpt.header.at("arch")), a);
  EXPECT_NE(ckpt.find("CE.stem.weight/adam_m"), nullptr);
  EXPECT_NE(ckpt.find("Dsc.head.F.bias/adam_t"), nullptr);
}

TEST(Train, ResumeContinuesWithoutGap) {
  const ArchConfig a = tiny_arch();
  const DatasetSplits data = make_dataset(5, a.size, 16);
  mist::testing::TempDir full("full"), cut("cut");
  {
    MistNetworks<float> nets(a, 17);
    TrainOptions opt;
    opt.out_dir = full.path();
    train(nets, data.train, tiny_train(6), opt);
  }
  {
    MistNetworks<float> nets(a, 17);
    TrainOptions opt;
    opt.out_dir = cut.path();
    opt.on_iteration = [](std::size_t iter, const LossBreakdown&) {
      if (iter == 5) throw std::runtime_error("interrupted");
    };
    EXPECT_THROW(train(nets, data.train, tiny_train(6), opt), std::runtime_error);
  }
  {
    MistNetworks<float> nets(a, 99);  // weights come from the checkpoint
    TrainOptions opt;
    opt.out_dir = cut.path();
    opt.resume = true;
    const auto rows = train(nets, data.train, tiny_train(6), opt);
    EXPECT_EQ(rows.size(), 2u);
  }
  EXPECT_EQ(mist::testing::slurp(full.path() / "loss_log.csv"), mist::testing::slurp(cut.path() / "loss_log.csv"));
  EXPECT_EQ(mist::testing::slurp(full.path() / "latest.mist"), mist::testing::slurp(cut.path() / "latest.mist"));
}

TEST(Train, NonFiniteLossAbortsWithDump) {
  const ArchConfig a = tiny_arch();
  const DatasetSplits data = make_dataset(5, a.size, 18);
  mist::testing::TempDir dir("nan");
  MistNetworks<float> nets(a, 19);
  TrainConfig cfg = tiny_train(50);
  cfg.lr_main = 1e30;
  TrainOptions opt;
  opt.out_dir = dir.path();
  try {
    train(nets, data.train, cfg, opt);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_GE(e.iteration, 1u);
    EXPECT_TRUE(fs::exists(dir.path() / "nan_dump.json"));
  }
}

TEST(Impute, CanonicalOrderAndValidation) {
  const ArchConfig a = tiny_arch();
  const DatasetSplits data = make_dataset(5, a.size, 20);
  MistNetworks<float> nets(a, 21);
  const auto& s = data.test[0];
  StyleChoice latent;
  latent.kind = StyleChoice::Kind::latent;
  latent.latent_seed = 7;
  std::vector<ModalityImage> ordered = {s.image(Domain::T1), s.image(Domain::T1c), s.image(Domain::T2)};
  std::vector<ModalityImage> shuffled = {s.image(Domain::T2), s.image(Domain::T1), s.image(Domain::T1c)};
  const ModalityImage x = impute(nets, ordered, Domain::F, latent);
  EXPECT_EQ(x.pixels, impute(nets, shuffled, Domain::F, latent).pixels);
  EXPECT_EQ(x.size, a.size);
  for (float v : x.pixels) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  StyleChoice ref;
  ref.kind = StyleChoice::Kind::reference;
  ref.reference = &s.image(Domain::F);
  double diff = 0;
  const ModalityImage y = impute(nets, ordered, Domain::F, ref);
  for (std::size_t i = 0; i < x.pixels.size(); ++i) diff += std::abs(x.pixels[i] - y.pixels[i]);
  EXPECT_GT(diff, 0.0);

  std::vector<ModalityImage> duplicate = {s.image(Domain::T1), s.image(Domain::T1), s.image(Domain::T2)};
  EXPECT_THROW(impute(nets, duplicate, Domain::F, latent), UsageError);
  std::vector<ModalityImage> with_target = {s.image(Domain::T1), s.image(Domain::T1c), s.image(Domain::F)};
  EXPECT_THROW(impute(nets, with_target, Domain::F, latent), UsageError);
}

TEST(Gradients, EndToEndObjective) {
  for (const auto& c : suites::end_to_end_gradients()) EXPECT_TRUE(c.pass) << c.name << ": " << c.value;
}
