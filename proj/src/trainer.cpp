#include "chanprune/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "chanprune/errors.hpp"
#include "chanprune/executor.hpp"
#include "chanprune/random.hpp"

namespace chanprune {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be positive");
  if (decay_period == 0) throw ConfigError("decay_period must be positive");
  if (momentum < 0.0 || weight_decay < 0.0) throw ConfigError("momentum and weight_decay must be non-negative");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  const std::size_t drops = epoch == 0 ? 0 : (epoch - 1) / decay_period;
  return lr / std::pow(decay_factor, static_cast<double>(drops));
}

TrainConfig reference_schedule() {
  TrainConfig c;
  c.epochs = 400;
  c.decay_period = 100;
  return c;
}

TrainConfig desk_schedule() { return TrainConfig{}; }

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "epoch,lr,train_loss,test_acc\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.6f\n", e.epoch, e.lr, e.train_loss, e.test_acc);
    out << buf;
  }
  return out.str();
}

EvalResult evaluate(const Graph& graph, const Dataset& ds, std::size_t batch_size) {
  Batches batches(ds, std::min(batch_size, ds.size()), false, 0, false, false);
  double loss = 0.0;
  std::size_t correct = 0, count = 0;
  for (std::size_t i = 0; i < batches.count(); ++i) {
    const Batch b = batches.get(i);
    const BatchStats s = evaluate_batch(graph, b.images, b.labels);
    loss += s.loss * static_cast<double>(s.count);
    correct += s.correct;
    count += s.count;
  }
  return {static_cast<double>(correct) / static_cast<double>(count), loss / static_cast<double>(count), count};
}

TrainHistory train(Graph& graph, const Dataset& data, const TrainConfig& config, const Dataset* test,
                   const EpochCallback& on_epoch) {
  config.validate();
  if (!graph.trainable()) throw ConfigError("graph '" + graph.arch() + "' is counting-only and cannot be trained");
  TrainHistory history;
  auto params = graph.parameters();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const SgdOptions opt{config.lr_at(epoch), config.momentum, config.nesterov, config.weight_decay};
    Batches batches(data, std::min(config.batch_size, data.size()), true, derive_seed(config.seed, epoch),
                    config.augment);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < batches.count(); ++i) {
      const Batch b = batches.get(i);
      zero_grads(graph);
      const BatchStats s = train_step_gradients(graph, b.images, b.labels, ops::Mode::train);
      if (!std::isfinite(s.loss))
        throw DivergenceError("training diverged (non-finite loss) in epoch " + std::to_string(epoch),
                              static_cast<int>(epoch));
      sgd_step(params, opt);
      loss_sum += s.loss * static_cast<double>(s.count);
      seen += s.count;
    }
    for (Parameter* p : params) p->tensor.drop_grad();
    EpochRecord rec{epoch, opt.lr, loss_sum / static_cast<double>(seen),
                    test ? evaluate(graph, *test).accuracy : std::numeric_limits<double>::quiet_NaN()};
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

TrainHistory finetune(Graph& graph, const Dataset& data, const TrainConfig& config, const Dataset* test,
                      const EpochCallback& on_epoch) {
  auto& meta = graph.metadata();
  if (meta.count("finetuned") && meta.at("finetuned") == "1")
    throw PipelineError("model was already fine-tuned once; fine-tuning is a single post-pruning step");
  TrainHistory h = train(graph, data, config, test, on_epoch);
  meta["finetuned"] = "1";
  return h;
}

}  // namespace chanprune
