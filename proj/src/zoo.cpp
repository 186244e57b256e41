#include "chanprune/zoo.hpp"

#include <array>
#include <cmath>
#include <random>

#include "chanprune/errors.hpp"

namespace chanprune {
namespace {

constexpr std::array<std::string_view, 8> kNames{
    "vgg16_bn_cifar", "resnet56_cifar",    "resnet110_cifar", "densenet40_cifar",
    "googlenet_cifar", "resnet50_imagenet", "resnet8_cifar",   "tinyconv_cifar",
};

NodeId conv_bn_relu(Graph& g, const std::string& prefix, NodeId from, std::size_t out, std::size_t kernel,
                    std::size_t stride, std::size_t padding, bool bias, bool relu = true) {
  NodeId x = g.conv(prefix + ".conv", from, out, kernel, stride, padding, bias);
  x = g.batchnorm(prefix + ".bn", x);
  return relu ? g.relu(prefix + ".relu", x) : x;
}

Graph vgg16_bn(std::size_t classes) {
  Graph g("vgg16_bn_cifar", {3, 32, 32}, classes);
  constexpr std::array<int, 17> cfg{64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512};
  NodeId x = 0;
  int conv_index = 0, pool_index = 0;
  for (int v : cfg) {
    if (v == 0) {
      x = g.maxpool("pool" + std::to_string(++pool_index), x, 2, 2);
      continue;
    }
    x = conv_bn_relu(g, "features." + std::to_string(++conv_index), x, v, 3, 1, 1, true);
  }
  x = g.global_avgpool("avgpool", x);
  x = g.linear("classifier.1", x, 512);
  x = g.batchnorm("classifier.1.bn", x);
  x = g.relu("classifier.1.relu", x);
  x = g.linear("classifier.2", x, classes);
  g.output(x);
  return g;
}

// CIFAR ResNet with basic blocks; the first block of stages 2-3 downsamples
// through a 1x1 stride-2 convolution shortcut.
Graph cifar_resnet(std::string arch, std::size_t blocks, std::size_t classes) {
  Graph g(std::move(arch), {3, 32, 32}, classes);
  NodeId x = conv_bn_relu(g, "stem", 0, 16, 3, 1, 1, false);
  std::size_t in = 16;
  constexpr std::array<std::size_t, 3> widths{16, 32, 64};
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const std::size_t w = widths[s];
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::string p = "s" + std::to_string(s + 1) + ".b" + std::to_string(b + 1);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      NodeId y = g.conv(p + ".conv1", x, w, 3, stride, 1, false);
      y = g.batchnorm(p + ".bn1", y);
      y = g.relu(p + ".relu1", y);
      y = g.conv(p + ".conv2", y, w, 3, 1, 1, false);
      y = g.batchnorm(p + ".bn2", y);
      NodeId shortcut = x;
      if (stride != 1 || in != w) {
        shortcut = g.conv(p + ".down.conv", x, w, 1, stride, 0, false);
        shortcut = g.batchnorm(p + ".down.bn", shortcut);
      }
      x = g.relu(p + ".relu", g.add(p + ".add", y, shortcut));
      in = w;
    }
  }
  x = g.global_avgpool("avgpool", x);
  g.output(g.linear("fc", x, classes));
  return g;
}

Graph resnet50(std::size_t classes) {
  Graph g("resnet50_imagenet", {3, 224, 224}, classes);
  NodeId x = conv_bn_relu(g, "stem", 0, 64, 7, 2, 3, false);
  x = g.maxpool("stem.pool", x, 3, 2, 1);
  constexpr std::array<std::pair<std::size_t, std::size_t>, 4> stages{{{64, 3}, {128, 4}, {256, 6}, {512, 3}}};
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto [w, blocks] = stages[s];
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      NodeId y = g.relu(p + ".relu1", g.batchnorm(p + ".bn1", g.conv(p + ".conv1", x, w, 1, 1, 0, false)));
      y = g.relu(p + ".relu2", g.batchnorm(p + ".bn2", g.conv(p + ".conv2", y, w, 3, stride, 1, false)));
      y = g.batchnorm(p + ".bn3", g.conv(p + ".conv3", y, 4 * w, 1, 1, 0, false));
      NodeId shortcut = x;
      if (b == 0) shortcut = g.batchnorm(p + ".down.bn", g.conv(p + ".down.conv", x, 4 * w, 1, stride, 0, false));
      x = g.relu(p + ".relu", g.add(p + ".add", y, shortcut));
    }
  }
  x = g.global_avgpool("avgpool", x);
  g.output(g.linear("fc", x, classes));
  return g;
}

// DenseNet-40 (growth 12, no bottleneck, no compression), 24-channel stem.
Graph densenet40(std::size_t classes) {
  Graph g("densenet40_cifar", {3, 32, 32}, classes);
  constexpr std::size_t growth = 12, layers = 12;
  NodeId x = g.conv("stem.conv", 0, 2 * growth, 3, 1, 1, false);
  for (std::size_t blk = 0; blk < 3; ++blk) {
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string p = "dense" + std::to_string(blk + 1) + "." + std::to_string(l + 1);
      NodeId y = g.relu(p + ".relu", g.batchnorm(p + ".bn", x));
      y = g.conv(p + ".conv", y, growth, 3, 1, 1, false);
      x = g.concat(p + ".cat", {x, y});
    }
    if (blk < 2) {
      const std::string p = "trans" + std::to_string(blk + 1);
      const std::size_t c = g.node(x).channels;
      NodeId y = g.relu(p + ".relu", g.batchnorm(p + ".bn", x));
      y = g.conv(p + ".conv", y, c, 1, 1, 0, false);
      x = g.avgpool(p + ".pool", y, 2, 2);
    }
  }
  x = g.relu("final.relu", g.batchnorm("final.bn", x));
  x = g.global_avgpool("avgpool", x);
  g.output(g.linear("fc", x, classes));
  return g;
}

struct InceptionCfg {
  std::size_t n1, n3r, n3, n5r, n5, pool;
};

NodeId inception(Graph& g, const std::string& p, NodeId x, const InceptionCfg& c) {
  NodeId b1 = conv_bn_relu(g, p + ".b1", x, c.n1, 1, 1, 0, true);
  NodeId b2 = conv_bn_relu(g, p + ".b2a", x, c.n3r, 1, 1, 0, true);
  b2 = conv_bn_relu(g, p + ".b2b", b2, c.n3, 3, 1, 1, true);
  NodeId b3 = conv_bn_relu(g, p + ".b3a", x, c.n5r, 1, 1, 0, true);
  b3 = conv_bn_relu(g, p + ".b3b", b3, c.n5, 3, 1, 1, true);
  b3 = conv_bn_relu(g, p + ".b3c", b3, c.n5, 3, 1, 1, true);
  NodeId b4 = g.maxpool(p + ".b4.pool", x, 3, 1, 1);
  b4 = conv_bn_relu(g, p + ".b4", b4, c.pool, 1, 1, 0, true);
  return g.concat(p + ".cat", {b1, b2, b3, b4});
}

Graph googlenet(std::size_t classes) {
  Graph g("googlenet_cifar", {3, 32, 32}, classes);
  NodeId x = conv_bn_relu(g, "pre", 0, 192, 3, 1, 1, true);
  x = inception(g, "a3", x, {64, 96, 128, 16, 32, 32});
  x = inception(g, "b3", x, {128, 128, 192, 32, 96, 64});
  x = g.maxpool("pool3", x, 3, 2, 1);
  x = inception(g, "a4", x, {192, 96, 208, 16, 48, 64});
  x = inception(g, "b4", x, {160, 112, 224, 24, 64, 64});
  x = inception(g, "c4", x, {128, 128, 256, 24, 64, 64});
  x = inception(g, "d4", x, {112, 144, 288, 32, 64, 64});
  x = inception(g, "e4", x, {256, 160, 320, 32, 128, 128});
  x = g.maxpool("pool4", x, 3, 2, 1);
  x = inception(g, "a5", x, {256, 160, 320, 32, 128, 128});
  x = inception(g, "b5", x, {384, 192, 384, 48, 128, 128});
  x = g.global_avgpool("avgpool", x);
  g.output(g.linear("linear", x, classes));
  return g;
}

Graph tinyconv(std::size_t classes) {
  const std::array<ChainLayer, 4> layers{{
      {8, 3, 1, 1, true, true, true, 2},
      {16, 3, 1, 1, true, true, true, 2},
      {32, 3, 1, 1, true, true, true, 2},
      {64, 3, 1, 1, true, true, true, 0},
  }};
  return build_plain_chain("tinyconv_cifar", {3, 32, 32}, layers, classes);
}

}  // namespace

std::span<const std::string_view> architecture_names() { return kNames; }

Graph build_architecture(std::string_view name, std::size_t num_classes, std::uint64_t seed) {
  if (num_classes == 0) num_classes = name == "resnet50_imagenet" ? 1000 : 10;
  Graph g;
  if (name == "vgg16_bn_cifar") g = vgg16_bn(num_classes);
  else if (name == "resnet56_cifar") g = cifar_resnet("resnet56_cifar", 9, num_classes);
  else if (name == "resnet110_cifar") g = cifar_resnet("resnet110_cifar", 18, num_classes);
  else if (name == "resnet8_cifar") g = cifar_resnet("resnet8_cifar", 1, num_classes);
  else if (name == "densenet40_cifar") g = densenet40(num_classes);
  else if (name == "googlenet_cifar") g = googlenet(num_classes);
  else if (name == "resnet50_imagenet") g = resnet50(num_classes);
  else if (name == "tinyconv_cifar") g = tinyconv(num_classes);
  else throw ConfigError("unknown architecture '" + std::string(name) + "'");
  initialize_weights(g, seed);
  g.validate();
  return g;
}

Graph build_plain_chain(std::string name, InputSpec input, std::span<const ChainLayer> layers,
                        std::size_t num_classes, std::uint64_t seed) {
  Graph g(std::move(name), input, num_classes);
  NodeId x = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i + 1);
    x = g.conv(p + ".conv", x, l.out_channels, l.kernel, l.stride, l.padding, l.bias);
    if (l.batchnorm) x = g.batchnorm(p + ".bn", x);
    if (l.relu) x = g.relu(p + ".relu", x);
    if (l.maxpool) x = g.maxpool(p + ".pool", x, l.maxpool, l.maxpool);
  }
  if (num_classes > 0) {
    x = g.global_avgpool("avgpool", x);
    x = g.linear("fc", x, num_classes);
  }
  g.output(x);
  initialize_weights(g, seed);
  g.validate();
  return g;
}

void initialize_weights(Graph& graph, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& n : graph.nodes()) {
    if (n.kind == LayerKind::conv) {
      const auto& a = n.conv();
      const double fan_in = static_cast<double>(a.in_channels * a.kernel * a.kernel);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (double& w : n.weight().tensor.values) w = dist(rng);
      if (auto* b = n.bias()) std::fill(b->tensor.values.begin(), b->tensor.values.end(), 0.0);
    } else if (n.kind == LayerKind::linear) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(n.linear().in_features));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (double& w : n.weight().tensor.values) w = dist(rng);
      if (auto* b = n.bias()) std::fill(b->tensor.values.begin(), b->tensor.values.end(), 0.0);
    } else if (n.kind == LayerKind::bn) {
      auto& a = n.bn();
      std::fill(n.params[0].tensor.values.begin(), n.params[0].tensor.values.end(), 1.0);
      std::fill(n.params[1].tensor.values.begin(), n.params[1].tensor.values.end(), 0.0);
      a.stats.mean.assign(a.channels, 0.0);
      a.stats.var.assign(a.channels, 1.0);
    }
  }
}

}  // namespace chanprune
