#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "chanprune/counting.hpp"
#include "chanprune/executor.hpp"
#include "chanprune/groups.hpp"
#include "chanprune/ops.hpp"
#include "chanprune/zoo.hpp"

namespace chanprune::testing {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

std::vector<double> numeric_gradient(const std::function<double()>& f, std::vector<double>& x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor normal_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.values) v = d(rng);
  return t;
}

// Values bounded away from zero so relu never sits on its kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> mag(0.05, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.values) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Distinct values with gaps of 0.01, shuffled: max-pooling windows never tie.
Tensor distinct_values(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::iota(t.values.begin(), t.values.end(), 0.0);
  std::shuffle(t.values.begin(), t.values.end(), rng);
  for (auto& v : t.values) v *= 0.01;
  return t;
}

double weighted_sum(const Tensor& out, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * out.values[i];
  return s;
}

// L = sum(r * f(inputs)). Returns the worst relative error over every entry of
// every tensor in `wrt`.
double check_op(const std::vector<Tensor*>& wrt, const std::function<Tensor()>& fwd,
                const std::function<void(Tensor&)>& bwd, Rng& rng) {
  Tensor out = fwd();
  std::vector<double> r(out.size());
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : r) v = d(rng);
  for (Tensor* t : wrt) t->grad.clear();
  out.grad = r;
  bwd(out);
  double worst = 0.0;
  for (Tensor* t : wrt) {
    const std::vector<double> analytic = t->has_grad() ? t->grad : std::vector<double>(t->size(), 0.0);
    const auto numeric = numeric_gradient([&] { return weighted_sum(fwd(), r); }, t->values);
    for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

double check_conv(Rng& rng) {
  const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 4);
  const std::size_t k = pick(rng, 0, 1) ? 3 : 1, stride = pick(rng, 1, 2), pad = k == 3 ? pick(rng, 0, 1) : 0;
  const std::size_t h = pick(rng, k, 6), w = pick(rng, k, 6);
  Tensor x = normal_tensor({n, cin, h, w}, rng), weight = normal_tensor({cout, cin, k, k}, rng, 0.5);
  Tensor bias = normal_tensor({cout}, rng);
  const bool with_bias = pick(rng, 0, 1) == 1;
  std::vector<Tensor*> wrt{&x, &weight};
  if (with_bias) wrt.push_back(&bias);
  Tensor* b = with_bias ? &bias : nullptr;
  return check_op(wrt, [&] { return ops::conv2d(x, weight, b, stride, pad); },
                  [&](Tensor& out) { ops::conv2d_backward(out, x, weight, b, stride, pad); }, rng);
}

double check_bn(Rng& rng, ops::Mode mode) {
  const std::size_t n = pick(rng, 2, 3), c = pick(rng, 1, 3);
  const bool spatial = pick(rng, 0, 3) != 0;
  const Shape shape = spatial ? Shape{n, c, pick(rng, 1, 3), pick(rng, 1, 3)} : Shape{n, c};
  Tensor x = normal_tensor(shape, rng), scale = normal_tensor({c}, rng), shift = normal_tensor({c}, rng);
  ops::BatchNormStats stats;
  std::uniform_real_distribution<double> var(0.5, 2.0);
  for (std::size_t i = 0; i < c; ++i) {
    stats.mean.push_back(std::normal_distribution<double>(0.0, 0.5)(rng));
    stats.var.push_back(var(rng));
  }
  ops::BatchNormCache cache;
  auto fwd = [&] {
    if (mode == ops::Mode::eval) return ops::batchnorm2d_eval(x, scale, shift, stats, 1e-5, &cache);
    ops::BatchNormStats scratch = stats;  // running stats must not drift between probes
    return ops::batchnorm2d(x, scale, shift, scratch, mode, 0.1, 1e-5, &cache);
  };
  return check_op({&x, &scale, &shift}, fwd,
                  [&](Tensor& out) { ops::batchnorm2d_backward(out, x, scale, shift, cache); }, rng);
}

double check_relu(Rng& rng) {
  Tensor x = away_from_zero({pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
  return check_op({&x}, [&] { return ops::relu(x); }, [&](Tensor& out) { ops::relu_backward(out, x); }, rng);
}

double check_maxpool(Rng& rng) {
  const std::size_t k = pick(rng, 2, 3), stride = pick(rng, 1, k), pad = pick(rng, 0, 1);
  Tensor x = distinct_values({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, k, 7), pick(rng, k, 7)}, rng);
  std::vector<std::size_t> argmax;
  return check_op({&x}, [&] { return ops::maxpool2d(x, k, stride, pad, &argmax); },
                  [&](Tensor& out) { ops::maxpool2d_backward(out, x, argmax); }, rng);
}

double check_avgpool(Rng& rng) {
  const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 3);
  Tensor x = normal_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, k, 7), pick(rng, k, 7)}, rng);
  return check_op({&x}, [&] { return ops::avgpool2d(x, k, stride); },
                  [&](Tensor& out) { ops::avgpool2d_backward(out, x, k, stride); }, rng);
}

double check_global_avgpool(Rng& rng) {
  Tensor x = normal_tensor({pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)}, rng);
  return check_op({&x}, [&] { return ops::global_avgpool(x); },
                  [&](Tensor& out) { ops::global_avgpool_backward(out, x); }, rng);
}

double check_linear(Rng& rng) {
  const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 6), out_f = pick(rng, 1, 5);
  Tensor x = normal_tensor({n, in}, rng), w = normal_tensor({out_f, in}, rng), b = normal_tensor({out_f}, rng);
  const bool with_bias = pick(rng, 0, 1) == 1;
  std::vector<Tensor*> wrt{&x, &w};
  if (with_bias) wrt.push_back(&b);
  Tensor* bp = with_bias ? &b : nullptr;
  return check_op(wrt, [&] { return ops::linear(x, w, bp); },
                  [&](Tensor& out) { ops::linear_backward(out, x, w, bp); }, rng);
}

double check_add(Rng& rng) {
  const Shape s{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
  Tensor a = normal_tensor(s, rng), b = normal_tensor(s, rng);
  return check_op({&a, &b}, [&] { return ops::residual_add(a, b); },
                  [&](Tensor& out) { ops::residual_add_backward(out, a, b); }, rng);
}

double check_select(Rng& rng) {
  const std::size_t c = pick(rng, 2, 6);
  Tensor x = normal_tensor({pick(rng, 1, 2), c, pick(rng, 1, 3), pick(rng, 1, 3)}, rng);
  std::vector<long> gather;
  for (std::size_t i = 0; i < c; ++i)
    if (pick(rng, 0, 2) != 0) gather.push_back(static_cast<long>(i));
  gather.insert(gather.begin() + static_cast<long>(pick(rng, 0, gather.size())), -1);  // one zero-filled slot
  return check_op({&x}, [&] { return ops::channel_select(x, gather); },
                  [&](Tensor& out) { ops::channel_select_backward(out, x, gather); }, rng);
}

double check_cross_entropy(Rng& rng) {
  const std::size_t n = pick(rng, 1, 5), k = pick(rng, 2, 10);
  Tensor logits = normal_tensor({n, k}, rng, 2.0);
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(pick(rng, 0, k - 1));
  ops::softmax_cross_entropy_backward(logits, labels);
  const std::vector<double> analytic = logits.grad;
  const auto numeric = numeric_gradient([&] { return ops::softmax_cross_entropy(logits, labels); }, logits.values);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  return worst;
}

// conv -> bn (train) -> relu -> global pool -> linear -> cross-entropy, all
// parameters checked end to end through the executor.
double check_composed(Rng& rng, std::uint64_t seed) {
  const std::size_t c = pick(rng, 1, 3), h = pick(rng, 3, 5), classes = pick(rng, 2, 4), n = pick(rng, 2, 4);
  Graph g("composed", InputSpec{c, h, h}, classes);
  NodeId x = g.conv("conv", 0, pick(rng, 2, 4), 3, 1, 1, pick(rng, 0, 1) == 1);
  x = g.batchnorm("bn", x);
  x = g.relu("relu", x);
  x = g.global_avgpool("pool", x);
  x = g.linear("fc", x, classes);
  g.output(x);
  initialize_weights(g, seed);
  const Tensor input = normal_tensor({n, c, h, h}, rng);
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(pick(rng, 0, classes - 1));
  auto loss = [&] {
    Graph scratch = g;  // keep running statistics fixed
    auto acts = forward(scratch, input, ops::Mode::train);
    return ops::softmax_cross_entropy(acts.logits(), labels);
  };
  Graph work = g;
  zero_grads(work);
  train_step_gradients(work, input, labels, ops::Mode::train);
  double worst = 0.0;
  auto analytic_params = work.parameters();
  auto params = g.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto numeric = numeric_gradient(loss, params[p]->tensor.values);
    const auto& analytic = analytic_params[p]->tensor.grad;
    for (std::size_t i = 0; i < numeric.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

}  // namespace

std::vector<OpGradResult> gradient_suite(std::size_t cases, std::uint64_t seed) {
  struct Entry {
    const char* name;
    double tolerance;
    std::function<double(Rng&, std::size_t)> run;
  };
  const std::vector<Entry> entries{
      {"conv2d", 1e-4, [](Rng& r, std::size_t) { return check_conv(r); }},
      {"batchnorm2d_train", 1e-4, [](Rng& r, std::size_t) { return check_bn(r, ops::Mode::train); }},
      {"batchnorm2d_eval", 1e-4, [](Rng& r, std::size_t) { return check_bn(r, ops::Mode::eval); }},
      {"relu", 1e-4, [](Rng& r, std::size_t) { return check_relu(r); }},
      {"maxpool2d", 1e-4, [](Rng& r, std::size_t) { return check_maxpool(r); }},
      {"avgpool2d", 1e-4, [](Rng& r, std::size_t) { return check_avgpool(r); }},
      {"global_avgpool", 1e-4, [](Rng& r, std::size_t) { return check_global_avgpool(r); }},
      {"linear", 1e-4, [](Rng& r, std::size_t) { return check_linear(r); }},
      {"residual_add", 1e-4, [](Rng& r, std::size_t) { return check_add(r); }},
      {"channel_select", 1e-4, [](Rng& r, std::size_t) { return check_select(r); }},
      {"softmax_cross_entropy", 1e-5, [](Rng& r, std::size_t) { return check_cross_entropy(r); }},
      {"composed_graph", 1e-4, [](Rng& r, std::size_t i) { return check_composed(r, i); }},
  };
  std::vector<OpGradResult> results;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    Rng rng(seed * 1000003u + e);
    OpGradResult r{entries[e].name, 0, 0.0, entries[e].tolerance};
    for (std::size_t i = 0; i < cases; ++i) {
      r.max_rel = std::max(r.max_rel, entries[e].run(rng, seed + i));
      ++r.cases;
    }
    results.push_back(r);
  }
  return results;
}

std::vector<double> brute_force_scores(const std::vector<std::vector<double>>& saliency) {
  const std::size_t c = saliency.empty() ? 0 : saliency[0].size();
  std::vector<double> score(c, 0.0);
  for (const auto& g : saliency)
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t below = 0;
      for (std::size_t j = 0; j < c; ++j)
        if (g[j] < g[k] || (g[j] == g[k] && j < k)) ++below;
      score[k] += static_cast<double>(below + 1);
    }
  for (auto& s : score) s /= static_cast<double>(c);
  return score;
}

namespace {
void walk(std::size_t rank, std::size_t step, std::vector<std::size_t>& out) {
  if (step < 1) return;
  out.push_back(rank);
  const std::size_t next = step / 2;
  walk(rank + next, next, out);
  if (rank >= next) walk(rank - next, next, out);
}
}  // namespace

std::vector<std::size_t> reachable_ranks(std::size_t channels) {
  std::vector<std::size_t> out;
  walk(channels / 2, channels / 2, out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t linear_scan_rank(std::size_t channels, double theta, const std::function<double(std::size_t)>& v) {
  const auto reach = reachable_ranks(channels);
  std::size_t best = 0;
  for (std::size_t r = 1; r < channels; ++r)
    if (std::binary_search(reach.begin(), reach.end(), r) && v(r) <= theta) best = r;
  return best;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

namespace {
std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

PrunePlan random_plan(const Graph& graph, std::mt19937_64& rng, double max_fraction) {
  const auto layout = identify_prune_groups(graph);
  PrunePlan plan;
  plan.arch = graph.arch();
  for (const auto& unit : prune_units(graph, layout)) {
    const std::size_t c = unit.channels;
    const auto cap = static_cast<std::size_t>(max_fraction * static_cast<double>(c));
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, std::min(cap, c - 1))(rng);
    std::vector<std::size_t> all(c);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<std::size_t> pruned(all.begin(), all.begin() + static_cast<long>(k));
    std::sort(pruned.begin(), pruned.end());
    plan.entries.push_back(make_plan_entry(graph, unit.layers, pruned));
  }
  return plan;
}

double batch_loss(const Graph& graph, const Batch& batch) {
  return ops::softmax_cross_entropy(infer(graph, batch.images), batch.labels);
}

double loss_with_filter_zeroed(const Graph& graph, const Batch& batch, NodeId conv, std::size_t filter) {
  Graph g = graph;
  auto& w = g.node(conv).weight().tensor;
  const std::size_t per = w.size() / w.dim(0);
  std::fill_n(w.values.begin() + static_cast<long>(filter * per), per, 0.0);
  return batch_loss(g, batch);
}

std::uint64_t enumerate_params(const Graph& graph) {
  std::uint64_t total = 0;
  for (const Parameter* p : graph.parameters()) total += p->tensor.size();
  return total;
}

}  // namespace chanprune::testing
