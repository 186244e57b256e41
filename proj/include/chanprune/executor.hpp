#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "chanprune/channel_flow.hpp"
#include "chanprune/graph.hpp"
#include "chanprune/ops.hpp"

namespace chanprune {

/// Per-node outputs and the saved state backward needs. This is the tape of
/// the reverse-mode engine: nodes are replayed in reverse id order.
struct Activations {
  ops::Mode mode = ops::Mode::eval;
  std::vector<Tensor> values;
  std::vector<ops::BatchNormCache> bn;
  std::vector<std::vector<std::size_t>> argmax;

  Tensor& logits() { return values.back(); }
  const Tensor& logits() const { return values.back(); }
};

/// Full forward keeping every activation. Train mode updates BN running
/// statistics in `graph`. With `mask`, the dead channels of every node are
/// zeroed, which is exactly the effect of zeroing the pruned filters'
/// weights, bias and BN scale/shift.
Activations forward(Graph& graph, const Tensor& input, ops::Mode mode, const ChannelFlow* mask = nullptr);

/// Eval-mode logits; intermediate tensors are released as soon as possible.
Tensor infer(const Graph& graph, const Tensor& input, const ChannelFlow* mask = nullptr);

/// Back-propagates `acts.logits().grad` into parameter grads of `graph`.
void backward(Graph& graph, Activations& acts);

void zero_grads(Graph& graph);

// Keeps freed activation buffers in the heap instead of returning them to the
// OS after every batch (glibc only; a no-op elsewhere). Call once from main.
void tune_allocator();

struct BatchStats {
  double loss = 0.0;  // mean over the batch
  std::size_t correct = 0;
  std::size_t count = 0;
};

/// Forward + cross-entropy + backward; parameter grads are accumulated, not cleared.
BatchStats train_step_gradients(Graph& graph, const Tensor& images, std::span<const int> labels, ops::Mode mode);

BatchStats evaluate_batch(const Graph& graph, const Tensor& images, std::span<const int> labels,
                          const ChannelFlow* mask = nullptr);

}  // namespace chanprune
