#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "ride/config.hpp"
#include "ride/trainer.hpp"

using namespace ride;

TEST(KeyValueConfig, ParsesCommentsDuplicatesAndLists) {
  const auto cfg = KeyValueConfig::parse(
      "# comment\n"
      "iterations = 10\n"
      "\n"
      "  temperature=0.05  \n"
      "block_widths = 2, 3,4\n"
      "iterations = 12\n");
  EXPECT_EQ(cfg.get_int("iterations", 0), 12);
  EXPECT_DOUBLE_EQ(cfg.get_double("temperature", 0), 0.05);
  EXPECT_EQ(cfg.get_int_list("block_widths", {}), (std::vector<int>{2, 3, 4}));
  EXPECT_EQ(cfg.get_string("model", "desk"), "desk");
  EXPECT_THROW(KeyValueConfig::parse("no equals sign\n"), ContractError);
  EXPECT_THROW(KeyValueConfig::parse("iterations = ten\n").get_int("iterations", 0), ContractError);
}

TEST(TrainConfig, DefaultsAndOverrides) {
  const TrainConfig d = TrainConfig::from_config(KeyValueConfig{});
  EXPECT_EQ(d.iterations, 2000);
  EXPECT_EQ(d.batch_size, 2);
  EXPECT_DOUBLE_EQ(d.lambda_o, 10.0);
  EXPECT_DOUBLE_EQ(d.temperature, 1.0 / 20.0);
  EXPECT_DOUBLE_EQ(d.adam.learning_rate, 1e-4);
  EXPECT_EQ(d.crop, 182);
  EXPECT_EQ(d.model.block_widths, RideConfig::desk().block_widths);

  const auto cfg = KeyValueConfig::parse("model = ride\nbatch_size = 4\nsteering = bilinear\nrotation_range = 45\n");
  const TrainConfig c = TrainConfig::from_config(cfg);
  EXPECT_EQ(c.batch_size, 4);
  EXPECT_EQ(c.model.block_widths, RideConfig::ride().block_widths);
  EXPECT_EQ(c.model.steering, KernelSteering::bilinear);
  EXPECT_DOUBLE_EQ(c.geometry.rotation_degrees, 45.0);
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::parse("learning_rat = 1\n")), ContractError);
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::parse("steering = spline\n")), ContractError);
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::parse("crop = 30\n")), ContractError);
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::parse("beta1 = 1\n")), ContractError);
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::parse("temperature = 0\n")), ContractError);
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::parse("model = tiny\n")), ContractError);
}

TEST(Adam, MatchesHandComputedSteps) {
  AdamOptions o;
  o.learning_rate = 0.1;
  std::vector<double> w{1.0, -2.0}, m(2, 0.0), v(2, 0.0);
  const std::vector<double> g1{0.5, -3.0}, g2{-1.0, 1.0};
  adam_update<double>(w, g1, m, v, 1, o);
  // Bias correction makes the first step lr * sign(g) up to eps.
  EXPECT_NEAR(w[0], 0.9, 1e-7);
  EXPECT_NEAR(w[1], -1.9, 1e-7);
  adam_update<double>(w, g2, m, v, 2, o);
  for (std::size_t i = 0; i < 2; ++i) {
    const double mi = 0.9 * (0.1 * g1[i]) + 0.1 * g2[i];
    const double vi = 0.999 * (0.001 * g1[i] * g1[i]) + 0.001 * g2[i] * g2[i];
    EXPECT_NEAR(m[i], mi, 1e-15);
    EXPECT_NEAR(v[i], vi, 1e-15);
  }
  const double mh = (0.09 * 0.5 - 0.1) / (1 - 0.81), vh = (0.000999 * 0.25 + 0.001) / (1 - 0.998001);
  EXPECT_NEAR(w[0], 0.9 - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-8);
  EXPECT_THROW(adam_update<double>(w, g1, m, v, 0, o), ContractError);
}

TEST(Adam, OptimizerAppliesAccumulatedGradients) {
  Rng rng(1);
  Tensor p = ride::testing::random_param(rng, {3});
  const auto start = p.to_vector();
  Adam opt({p}, AdamOptions{0.01});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    backward(sum(mul(p, p)));
    opt.step();
  }
  EXPECT_EQ(opt.steps(), 200);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(std::abs(p.to_vector()[i]), std::abs(start[i]));
  Tensor frozen = Tensor::zeros({2});
  EXPECT_THROW(Adam({frozen}, {}), ContractError);
}

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = RideConfig::toy();
  c.iterations = 3;
  c.crop = 48;
  c.seed = 5;
  c.validation_every = 0;
  c.max_correspondences = 128;
  return c;
}

std::vector<Image> tiny_corpus() { return synth_corpus(Rng(2), 3, 64); }

}  // namespace

TEST(Train, RunsAndIsDeterministic) {
  const TrainConfig c = tiny_config();
  const auto corpus = tiny_corpus();
  Rng ra(c.seed), rb(c.seed);
  RideModel ma(c.model, ra), mb(c.model, rb);
  const TrainResult a = train(ma, corpus, c), b = train(mb, corpus, c);
  ASSERT_EQ(a.log.size(), 3u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_TRUE(std::isfinite(a.log[i].total));
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_NEAR(a.log[i].total,
                c.lambda_o * a.log[i].l_orientation + a.log[i].l_description + a.log[i].l_keypoint, 1e-5);
  }
  EXPECT_EQ(ma.parameters()[0].to_vector(), mb.parameters()[0].to_vector());
}

TEST(Train, WritesCheckpointsAndLog) {
  TrainConfig c = tiny_config();
  c.iterations = 2;
  c.validation_every = 2;
  c.validation_images = 2;
  c.validation_topk = 32;
  const auto dir = std::filesystem::temp_directory_path() / "ride_train_outputs";
  std::filesystem::remove_all(dir);
  Rng rng(c.seed);
  RideModel model(c.model, rng);
  int records = 0;
  TrainOutputs out{dir, [&](const TrainRecord&) { ++records; }};
  const TrainResult r = train(model, tiny_corpus(), c, out);
  EXPECT_EQ(records, 2);
  ASSERT_TRUE(r.log.back().validation_mma.has_value());
  EXPECT_GE(r.best_validation_mma, 0.0);
  EXPECT_TRUE(std::filesystem::exists(dir / "last.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "train_log.csv"));
  std::int64_t it = 0;
  RideModel::load(dir / "last.ckpt", &it);
  EXPECT_EQ(it, 2);
  std::filesystem::remove_all(dir);
}

TEST(Train, RejectsEmptyOrSmallCorpus) {
  const TrainConfig c = tiny_config();
  Rng rng(1);
  RideModel model(c.model, rng);
  EXPECT_THROW(train(model, {}, c), ContractError);
  EXPECT_THROW(train(model, synth_corpus(Rng(1), 2, 32), c), ContractError);
}
