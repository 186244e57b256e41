// Command-line front end: train, score, prune, finetune, eval, count,
// correlate, report, plus `synth` for offline stand-in data.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>

#include "chanprune/counting.hpp"
#include "chanprune/dataset.hpp"
#include "chanprune/errors.hpp"
#include "chanprune/executor.hpp"
#include "chanprune/importance.hpp"
#include "chanprune/plan.hpp"
#include "chanprune/random.hpp"
#include "chanprune/search.hpp"
#include "chanprune/serialize.hpp"
#include "chanprune/surgery.hpp"
#include "chanprune/trainer.hpp"
#include "chanprune/zoo.hpp"

namespace cp = chanprune;
namespace fs = std::filesystem;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kIngestion = 4,
  kPlan = 5,
  kTopology = 6,
  kAlignment = 7,
  kState = 8,
  kDivergence = 9,
  kSearch = 10,
  kPipeline = 11,
};

struct Common {
  std::uint64_t seed = 0;
  std::string data_dir;
  std::string model;
  std::string out;
  std::string dataset = "cifar10";
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t batch_size = 128;
  // blobs dataset
  std::size_t blob_classes = 10;
  std::size_t blob_train = 2000;
  std::size_t blob_test = 500;
  double blob_noise = 1.0;
  double blob_jitter = 3.0;
};

struct Data {
  cp::Dataset train;
  cp::Dataset test;
};

Data load_data(const Common& c) {
  if (c.dataset == "blobs") {
    cp::BlobOptions o;
    o.noise = c.blob_noise;
    o.jitter = c.blob_jitter;
    Data d{cp::synth_blobs(c.blob_classes, c.blob_train, c.seed, o), {}};
    o.split = cp::Split::test;
    d.test = cp::synth_blobs(c.blob_classes, c.blob_test, c.seed, o);
    return d;
  }
  if (c.dataset != "cifar10") throw cp::ConfigError("unknown dataset '" + c.dataset + "' (cifar10 | blobs)");
  if (c.data_dir.empty()) throw cp::ConfigError("--data-dir is required for the cifar10 dataset");
  cp::CifarLoadOptions o;
  if (c.train_limit) o.train_limit = c.train_limit;
  if (c.test_limit) o.test_limit = c.test_limit;
  auto s = cp::load_cifar10(c.data_dir, o);
  return {std::move(s.train), std::move(s.test)};
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw cp::ConfigError(std::string("missing required flag ") + flag);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw cp::IngestionError("cannot write '" + path + "'");
  out << text;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct TrainFlags {
  std::string arch = "resnet8_cifar";
  std::size_t epochs = 40;
  double lr = 0.01;
  std::size_t decay_period = 10;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  bool no_augment = false;
  std::string history;

  cp::TrainConfig config(const Common& c, const char* stage) const {
    cp::TrainConfig t;
    t.epochs = epochs;
    t.batch_size = c.batch_size;
    t.lr = lr;
    t.decay_period = decay_period;
    t.weight_decay = weight_decay;
    t.momentum = momentum;
    t.augment = !no_augment;
    t.seed = cp::derive_seed(c.seed, stage);
    return t;
  }
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--lr", f.lr, "Initial learning rate")->capture_default_str();
  sub->add_option("--decay-period", f.decay_period, "Epochs between tenfold lr drops")->capture_default_str();
  sub->add_option("--weight-decay", f.weight_decay)->capture_default_str();
  sub->add_option("--momentum", f.momentum)->capture_default_str();
  sub->add_flag("--no-augment", f.no_augment, "Disable crop/flip augmentation");
  sub->add_option("--history", f.history, "Per-epoch CSV (default: <out>.history.csv)");
}

cp::TrainHistory run_training(cp::Graph& g, const Data& d, const cp::TrainConfig& t, bool once) {
  auto log = [](const cp::EpochRecord& r) {
    std::printf("epoch %zu lr %.6g train_loss %.6f test_acc %.4f\n", r.epoch, r.lr, r.train_loss, r.test_acc);
    std::fflush(stdout);
  };
  return once ? cp::finetune(g, d.train, t, &d.test, log) : cp::train(g, d.train, t, &d.test, log);
}

int cmd_train(const Common& c, const TrainFlags& f) {
  require(c.out, "--out");
  const Data d = load_data(c);
  cp::Graph g = cp::build_architecture(f.arch, d.train.num_classes, cp::derive_seed(c.seed, "init"));
  const auto h = run_training(g, d, f.config(c, "train"), false);
  const auto acc = cp::evaluate(g, d.test);
  g.metadata()["baseline_top1"] = fmt("%.6f", acc.accuracy);
  cp::save_model(g, c.out);
  write_text(f.history.empty() ? c.out + ".history.csv" : f.history, h.to_csv());
  std::printf("top1 %.4f loss %.6f\n", acc.accuracy, acc.loss);
  return kOk;
}

struct ScoreFlags {
  std::size_t batches = 0;  // 0 = every whole batch of the scoring set
  std::size_t scoring_samples = 0;
};

cp::Dataset scoring_set(const Data& d, const ScoreFlags& f) {
  return f.scoring_samples ? d.train.head(f.scoring_samples) : d.train;
}

int cmd_score(const Common& c, const ScoreFlags& f) {
  require(c.model, "--model");
  require(c.out, "--out");
  cp::Graph g = cp::load_model(c.model);
  const Data d = load_data(c);
  const auto table = cp::aggregate_scores(g, scoring_set(d, f), c.batch_size, f.batches);
  cp::save_scores(table, c.out);
  std::printf("scored %zu layers over %zu batches\n", table.layers.size(), table.batches);
  return kOk;
}

struct PruneFlags {
  ScoreFlags score;
  std::optional<double> theta;
  std::optional<double> gamma;
  double epsilon = 0.01;
  double theta_init = 0.05;
  std::size_t max_iters = 30;
  std::size_t eval_batches = 0;
  bool sequential = false;
  std::string scores;
  std::string plan;
};

int cmd_prune(const Common& c, const PruneFlags& f) {
  require(c.model, "--model");
  require(c.out, "--out");
  if (f.theta.has_value() == f.gamma.has_value()) throw cp::ConfigError("give exactly one of --theta or --gamma");
  cp::Graph g = cp::load_model(c.model);
  if (g.metadata().count("pruned")) throw cp::PipelineError("model is already pruned; prune the original model");
  const Data d = load_data(c);
  const cp::Dataset scoring = scoring_set(d, f.score);
  const cp::ScoreTable table = f.scores.empty() ? cp::aggregate_scores(g, scoring, c.batch_size, f.score.batches)
                                                : cp::load_scores(f.scores);
  const cp::LossEvaluator eval(scoring, c.batch_size, f.eval_batches);
  cp::PrunePlan plan;
  if (f.theta) {
    if (*f.theta < 0) throw cp::ConfigError("--theta must be non-negative");
    plan = cp::plan_for_theta(g, table, *f.theta, eval.loss(g), eval, f.sequential);
  } else {
    cp::SearchConfig sc;
    sc.gamma = *f.gamma;
    sc.epsilon = f.epsilon;
    sc.theta_init = f.theta_init;
    sc.max_outer_iters = f.max_iters;
    sc.sequential = f.sequential;
    const auto r = cp::global_threshold_search(g, table, sc, eval);
    for (const auto& t : r.search.trials) std::printf("trial theta %.6g rate %.6f\n", t.theta, t.rate);
    plan = r.plan;
  }
  const auto surgery = cp::physical_prune(g, plan);
  cp::Graph pruned = surgery.graph;
  auto& meta = pruned.metadata();
  meta["pruned"] = "1";
  meta["baseline_params"] = std::to_string(cp::count_params(g));
  meta["baseline_flops"] = std::to_string(cp::count_flops(g));
  meta["plan_theta"] = fmt("%.17g", plan.theta);
  meta["pre_finetune_top1"] = fmt("%.6f", cp::evaluate(pruned, d.test).accuracy);
  cp::save_model(pruned, c.out);
  cp::save_plan(plan, f.plan.empty() ? c.out + ".plan.json" : f.plan);
  write_text(c.out + ".surgery.csv", surgery.log_text());
  std::printf("theta %.6g rate %.6f filters_pruned %zu channel_selects %zu\n", plan.theta, plan.achieved_rate,
              plan.pruned_filters(), surgery.channel_selects);
  return kOk;
}

int cmd_finetune(const Common& c, const TrainFlags& f) {
  require(c.model, "--model");
  require(c.out, "--out");
  cp::Graph g = cp::load_model(c.model);
  const Data d = load_data(c);
  const double before = cp::evaluate(g, d.test).accuracy;
  const auto h = run_training(g, d, f.config(c, "finetune"), true);
  const double after = cp::evaluate(g, d.test).accuracy;
  g.metadata()["pre_finetune_top1"] = fmt("%.6f", before);
  g.metadata()["post_finetune_top1"] = fmt("%.6f", after);
  cp::save_model(g, c.out);
  write_text(f.history.empty() ? c.out + ".history.csv" : f.history, h.to_csv());
  std::printf("top1 before %.4f after %.4f\n", before, after);
  return kOk;
}

int cmd_eval(const Common& c) {
  require(c.model, "--model");
  const cp::Graph g = cp::load_model(c.model);
  const Data d = load_data(c);
  const auto r = cp::evaluate(g, d.test);
  std::printf("top1 %.4f loss %.6f samples %zu\n", r.accuracy, r.loss, r.samples);
  return kOk;
}

int cmd_count(const Common& c, const std::string& arch) {
  if (arch.empty() == c.model.empty()) throw cp::ConfigError("give exactly one of --arch or --model");
  const cp::Graph g = arch.empty() ? cp::load_model(c.model) : cp::build_architecture(arch);
  std::printf("FLOPs %s, Params %s\n", cp::format_count(cp::count_flops(g)).c_str(),
              cp::format_count(cp::count_params(g)).c_str());
  return kOk;
}

struct CorrelateFlags {
  std::size_t masks = 30;
  double max_fraction = 0.3;
  std::string split = "test";
};

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

int cmd_correlate(const Common& c, const CorrelateFlags& f) {
  require(c.model, "--model");
  require(c.out, "--out");
  if (f.masks < 2) throw cp::ConfigError("--masks must be at least 2");
  const cp::Graph g = cp::load_model(c.model);
  const Data d = load_data(c);
  const cp::Dataset& ds = f.split == "train" ? d.train : d.test;
  const cp::LossEvaluator eval(ds, std::min(c.batch_size, ds.size()));
  const auto base = eval.stats(g);
  const double base_acc = static_cast<double>(base.correct) / static_cast<double>(base.count);
  std::mt19937_64 rng(cp::derive_seed(c.seed, "correlate"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> variation, drop;
  std::string csv = "mask,filters,loss_variation,acc_drop\n";
  for (std::size_t r = 0; r < f.masks; ++r) {
    // Zero a random set of filters: each filter independently with a
    // per-mask probability drawn from (0, max_fraction].
    const double p = f.max_fraction * (1.0 - unit(rng));
    cp::Graph masked = g;
    std::size_t filters = 0;
    for (cp::NodeId id : masked.conv_ids()) {
      auto& n = masked.node(id);
      const std::size_t per = n.weight().tensor.size() / n.channels;
      for (std::size_t k = 0; k < n.channels; ++k)
        if (unit(rng) < p) {
          std::fill_n(n.weight().tensor.values.begin() + static_cast<long>(k * per), per, 0.0);
          ++filters;
        }
    }
    const auto s = eval.stats(masked);
    const double acc = static_cast<double>(s.correct) / static_cast<double>(s.count);
    variation.push_back(std::abs(s.loss - base.loss));
    drop.push_back(base_acc - acc);
    csv += std::to_string(r) + "," + std::to_string(filters) + "," + fmt("%.10g", variation.back()) + "," +
           fmt("%.10g", drop.back()) + "\n";
  }
  write_text(c.out, csv);
  std::printf("pearson %.6f masks %zu\n", pearson(variation, drop), f.masks);
  return kOk;
}

int cmd_report(const Common& c, const std::string& baseline, const std::string& plan_path) {
  require(c.model, "--model");
  const cp::Graph g = cp::load_model(c.model);
  std::uint64_t base_params, base_flops;
  if (!baseline.empty()) {
    const cp::Graph b = cp::load_model(baseline);
    base_params = cp::count_params(b);
    base_flops = cp::count_flops(b);
  } else if (g.metadata().count("baseline_params")) {
    base_params = std::stoull(g.metadata().at("baseline_params"));
    base_flops = std::stoull(g.metadata().at("baseline_flops"));
  } else {
    base_params = cp::count_params(g);
    base_flops = cp::count_flops(g);
  }
  const Data d = load_data(c);
  const double top1 = cp::evaluate(g, d.test).accuracy;
  const auto params = cp::count_params(g), flops = cp::count_flops(g);
  const double fpr = 1.0 - static_cast<double>(flops) / static_cast<double>(base_flops);
  const double ppr = 1.0 - static_cast<double>(params) / static_cast<double>(base_params);
  std::string row = g.arch();
  if (!plan_path.empty()) row += " theta=" + fmt("%.6g", cp::load_plan(plan_path).theta);
  std::printf("%s | Top-1 %.2f%% | FLOPs %s (%.2f%%) | Params %s (%.2f%%)\n", row.c_str(), 100.0 * top1,
              cp::format_count(flops).c_str(), 100.0 * fpr, cp::format_count(params).c_str(), 100.0 * ppr);
  if (!c.out.empty())
    write_text(c.out, "model,top1,flops,flops_pr,params,params_pr\n" + g.arch() + "," + fmt("%.6f", top1) + "," +
                          std::to_string(flops) + "," + fmt("%.6f", fpr) + "," + std::to_string(params) + "," +
                          fmt("%.6f", ppr) + "\n");
  return kOk;
}

int cmd_synth(const Common& c) {
  require(c.out, "--out");
  cp::write_cifar10_standin(c.out, c.seed);
  std::printf("wrote stand-in CIFAR-10 binary files to %s\n", c.out.c_str());
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const cp::ConfigError& e) {
    std::fprintf(stderr, "error config: %s\n", e.what());
    return kConfig;
  } catch (const cp::IngestionError& e) {
    std::fprintf(stderr, "error ingestion: %s\n", e.what());
    return kIngestion;
  } catch (const cp::PlanError& e) {
    std::fprintf(stderr, "error plan: %s\n", e.what());
    return kPlan;
  } catch (const cp::TopologyError& e) {
    std::fprintf(stderr, "error topology: %s\n", e.what());
    return kTopology;
  } catch (const cp::ChannelAlignmentError& e) {
    std::fprintf(stderr, "error alignment: %s\n", e.what());
    return kAlignment;
  } catch (const cp::StateError& e) {
    std::fprintf(stderr, "error state: %s\n", e.what());
    return kState;
  } catch (const cp::DivergenceError& e) {
    std::fprintf(stderr, "error divergence: epoch %d: %s\n", e.epoch(), e.what());
    return kDivergence;
  } catch (const cp::SearchError& e) {
    std::fprintf(stderr, "error search: best_theta %.6g best_rate %.6f: %s\n", e.best_theta(), e.best_rate(), e.what());
    return kSearch;
  } catch (const cp::PipelineError& e) {
    std::fprintf(stderr, "error pipeline: %s\n", e.what());
    return kPipeline;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error internal: %s\n", e.what());
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  chanprune::tune_allocator();
  CLI::App app{"Structured channel pruning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Key-value configuration file; command-line flags take precedence");

  Common c;
  app.add_option("--seed", c.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--data-dir", c.data_dir, "Directory with the CIFAR-10 binary batches");
  app.add_option("--model", c.model, "Input model container");
  app.add_option("--out", c.out, "Output path");
  app.add_option("--dataset", c.dataset, "cifar10 | blobs")->capture_default_str();
  app.add_option("--train-limit", c.train_limit, "Use only the first N training images");
  app.add_option("--test-limit", c.test_limit, "Use only the first N test images");
  app.add_option("--batch-size", c.batch_size)->capture_default_str();
  app.add_option("--blob-classes", c.blob_classes)->capture_default_str();
  app.add_option("--blob-train", c.blob_train)->capture_default_str();
  app.add_option("--blob-test", c.blob_test)->capture_default_str();
  app.add_option("--blob-noise", c.blob_noise)->capture_default_str();
  app.add_option("--blob-jitter", c.blob_jitter)->capture_default_str();

  int code = kOk;

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "Train a zoo architecture from scratch");
  train->add_option("--arch", train_flags.arch)->capture_default_str();
  add_train_flags(train, train_flags);
  train->callback([&] { code = guarded([&] { return cmd_train(c, train_flags); }); });

  ScoreFlags score_flags;
  auto* score = app.add_subcommand("score", "Compute per-filter importance scores");
  score->add_option("--batches", score_flags.batches, "Scoring batches (0 = all)");
  score->add_option("--scoring-samples", score_flags.scoring_samples, "Score on the first N training images");
  score->callback([&] { code = guarded([&] { return cmd_score(c, score_flags); }); });

  PruneFlags prune_flags;
  auto* prune = app.add_subcommand("prune", "Search per-layer pruning ranks and apply surgery");
  prune->add_option("--theta", prune_flags.theta, "Fixed loss-variation budget");
  prune->add_option("--gamma", prune_flags.gamma, "Target global parameter pruning rate");
  prune->add_option("--epsilon", prune_flags.epsilon, "Tolerance on the achieved rate")->capture_default_str();
  prune->add_option("--theta-init", prune_flags.theta_init)->capture_default_str();
  prune->add_option("--max-iters", prune_flags.max_iters)->capture_default_str();
  prune->add_option("--eval-batches", prune_flags.eval_batches, "Loss-evaluation batches (0 = all)");
  prune->add_option("--batches", prune_flags.score.batches, "Scoring batches (0 = all)");
  prune->add_option("--scoring-samples", prune_flags.score.scoring_samples);
  prune->add_option("--scores", prune_flags.scores, "Reuse a score CSV instead of rescoring");
  prune->add_option("--plan", prune_flags.plan, "Plan output (default: <out>.plan.json)");
  prune->add_flag("--sequential", prune_flags.sequential, "Keep earlier layers pruned while searching later ones");
  prune->callback([&] { code = guarded([&] { return cmd_prune(c, prune_flags); }); });

  TrainFlags ft_flags;
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a pruned model (once)");
  add_train_flags(finetune, ft_flags);
  finetune->callback([&] { code = guarded([&] { return cmd_finetune(c, ft_flags); }); });

  auto* eval = app.add_subcommand("eval", "Top-1 accuracy and loss on the test split");
  eval->callback([&] { code = guarded([&] { return cmd_eval(c); }); });

  std::string count_arch;
  auto* count = app.add_subcommand("count", "FLOPs (MACs) and parameter count");
  count->add_option("--arch", count_arch);
  count->callback([&] { code = guarded([&] { return cmd_count(c, count_arch); }); });

  CorrelateFlags corr_flags;
  auto* correlate = app.add_subcommand("correlate", "Loss variation vs accuracy drop under random filter masks");
  correlate->add_option("--masks", corr_flags.masks)->capture_default_str();
  correlate->add_option("--max-fraction", corr_flags.max_fraction)->capture_default_str();
  correlate->add_option("--split", corr_flags.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  correlate->callback([&] { code = guarded([&] { return cmd_correlate(c, corr_flags); }); });

  std::string baseline, plan_path;
  auto* report = app.add_subcommand("report", "Accuracy, FLOPs and parameters with pruning rates");
  report->add_option("--baseline", baseline, "Unpruned model (default: counts stored at prune time)");
  report->add_option("--plan", plan_path);
  report->callback([&] { code = guarded([&] { return cmd_report(c, baseline, plan_path); }); });

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset in the CIFAR-10 binary layout");
  synth->callback([&] { code = guarded([&] { return cmd_synth(c); }); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error usage: %s\n", e.what());
    return kUsage;
  }
  return code;
}
