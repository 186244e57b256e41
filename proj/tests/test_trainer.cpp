#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "chanprune/errors.hpp"
#include "chanprune/trainer.hpp"
#include "chanprune/zoo.hpp"

using namespace chanprune;

namespace {

TrainConfig quick(std::size_t epochs, double lr = 0.05) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 50;
  c.lr = lr;
  c.decay_period = 100;
  c.augment = false;
  c.seed = 3;
  return c;
}

Dataset easy(std::size_t n, std::uint64_t seed) {
  BlobOptions o;
  o.noise = 0.1;
  return synth_blobs(10, n, seed, o);
}

}  // namespace

TEST(Schedule, ReferenceDropsTenfoldEveryHundredEpochs) {
  const TrainConfig c = reference_schedule();
  EXPECT_EQ(c.epochs, 400u);
  EXPECT_DOUBLE_EQ(c.lr_at(1), 0.01);
  EXPECT_DOUBLE_EQ(c.lr_at(100), 0.01);
  EXPECT_DOUBLE_EQ(c.lr_at(101), 0.001);
  EXPECT_NEAR(c.lr_at(301), 1e-5, 1e-18);
  EXPECT_TRUE(c.nesterov);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.batch_size, 128u);
}

TEST(Schedule, InvalidConfigIsConfigError) {
  TrainConfig c = quick(1);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = quick(1, -1.0);
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ZeroEpochsLeaveWeightsUntouched) {
  Graph g = build_architecture("tinyconv_cifar", 10, 1);
  const Graph before = g;
  const auto h = train(g, easy(50, 1), quick(0));
  EXPECT_TRUE(h.epochs.empty());
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t p = 0; p < g.node(i).params.size(); ++p)
      EXPECT_EQ(g.node(i).params[p].tensor.values, before.node(i).params[p].tensor.values);
}

TEST(Train, HugeLearningRateDivergesWithTheEpoch) {
  Graph g = build_architecture("tinyconv_cifar", 10, 2);
  try {
    train(g, easy(100, 2), quick(5, 1e300));
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.epoch(), 1);
    EXPECT_LE(e.epoch(), 5);
  }
}

TEST(Train, FitsHighSignalBlobsWithinFiveEpochs) {
  Graph g = build_architecture("tinyconv_cifar", 10, 3);
  const Dataset d = easy(500, 3);
  train(g, d, quick(5));
  EXPECT_GE(evaluate(g, d).accuracy, 0.99);
}

TEST(Train, HistoryIsDeterministic) {
  Graph a = build_architecture("tinyconv_cifar", 10, 4), b = a;
  const Dataset d = easy(100, 4);
  TrainConfig c = quick(2);
  c.augment = true;
  const auto ha = train(a, d, c), hb = train(b, d, c);
  EXPECT_EQ(ha.to_csv(), hb.to_csv());
  EXPECT_EQ(ha.to_csv().substr(0, 31), "epoch,lr,train_loss,test_acc\n1,");
}

TEST(Train, CallbackSeesEveryEpochWithTestAccuracy) {
  Graph g = build_architecture("tinyconv_cifar", 10, 5);
  const Dataset d = easy(100, 5);
  std::size_t calls = 0;
  train(g, d, quick(2), &d, [&](const EpochRecord& r) {
    ++calls;
    EXPECT_EQ(r.epoch, calls);
    EXPECT_FALSE(std::isnan(r.test_acc));
  });
  EXPECT_EQ(calls, 2u);
}

TEST(Evaluate, UniformLogitsGiveLogTen) {
  Graph g = build_architecture("tinyconv_cifar", 10, 6);
  for (auto& n : g.nodes())
    if (n.kind == LayerKind::linear)
      for (auto& p : n.params) std::fill(p.tensor.values.begin(), p.tensor.values.end(), 0.0);
  const auto r = evaluate(g, easy(30, 6), 7);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-12);
  EXPECT_EQ(r.samples, 30u);  // trailing partial batch counted
}

TEST(Evaluate, RandomLabelsAreAtChance) {
  const Graph g = build_architecture("tinyconv_cifar", 10, 7);
  Dataset d = easy(1000, 7);
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> lab(0, 9);
  for (auto& l : d.labels) l = lab(rng);
  EXPECT_NEAR(evaluate(g, d).accuracy, 0.10, 0.03);
}

TEST(Finetune, SecondFinetuneIsPipelineError) {
  Graph g = build_architecture("tinyconv_cifar", 10, 9);
  const Dataset d = easy(50, 9);
  finetune(g, d, quick(1));
  EXPECT_EQ(g.metadata().at("finetuned"), "1");
  EXPECT_THROW(finetune(g, d, quick(1)), PipelineError);
}
