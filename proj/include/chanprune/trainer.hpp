#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "chanprune/dataset.hpp"
#include "chanprune/graph.hpp"
#include "chanprune/optim.hpp"

namespace chanprune {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  double lr = 0.01;
  double decay_factor = 10.0;
  std::size_t decay_period = 10;  // epochs between lr drops
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Learning rate for a 1-based epoch: lr / factor^floor((epoch-1)/period).
  double lr_at(std::size_t epoch) const;
};

/// Four-hundred-epoch schedule with drops every hundred epochs.
TrainConfig reference_schedule();
/// Desk-scale schedule (tenfold shorter, same shape).
TrainConfig desk_schedule();

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_acc = 0.0;  // NaN when no test set is given
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::string to_csv() const;
};

struct EvalResult {
  double accuracy = 0.0;  // fraction in [0, 1]
  double loss = 0.0;
  std::size_t samples = 0;
};

/// BN in eval mode; every sample counted (trailing partial batch included).
EvalResult evaluate(const Graph& graph, const Dataset& ds, std::size_t batch_size = 256);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch SGD. Throws DivergenceError (with the epoch) when the loss
/// turns non-finite. `test` may be null.
TrainHistory train(Graph& graph, const Dataset& data, const TrainConfig& config, const Dataset* test = nullptr,
                   const EpochCallback& on_epoch = {});

/// Post-surgery training; refuses a graph that was already fine-tuned.
TrainHistory finetune(Graph& graph, const Dataset& data, const TrainConfig& config, const Dataset* test = nullptr,
                      const EpochCallback& on_epoch = {});

}  // namespace chanprune
