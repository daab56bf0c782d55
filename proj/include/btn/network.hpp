#pragma once

// Two convolutional feature streams feeding a bilinear classifier head and
// an L2-normalized embedding head. The streams share weights by default.

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "btn/bilinear.hpp"
#include "btn/checkpoint.hpp"
#include "btn/rng.hpp"
#include "btn/tensor.hpp"

namespace btn {

struct ConvBlockSpec {
  int out_channels = 8;
  int kernel = 3;
  int stride = 1;
  int pool = 2;  // max-pool factor after the block, 1 = none
};

struct BackboneConfig {
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  std::vector<ConvBlockSpec> conv_blocks{{8, 3, 1, 2}, {16, 3, 1, 2}};
  int num_classes = 8;
  int embedding_dim = 128;
  real dropout_rate = real(0.25);
  bool shared_streams = true;
  BilinearPoolMode pool_mode = BilinearPoolMode::kSum;

  // Spatial grid after all conv blocks ("same" padding, (kernel-1)/2).
  std::pair<int, int> feature_grid() const {
    int h = in_height, w = in_width;
    for (const auto& b : conv_blocks) {
      const int p = (b.kernel - 1) / 2;
      if (h + 2 * p < b.kernel || w + 2 * p < b.kernel) return {0, 0};
      h = (h + 2 * p - b.kernel) / b.stride + 1;
      w = (w + 2 * p - b.kernel) / b.stride + 1;
      if (b.pool > 1) {
        if (h < b.pool || w < b.pool) return {0, 0};
        h = (h - b.pool) / b.pool + 1;
        w = (w - b.pool) / b.pool + 1;
      }
    }
    return {h, w};
  }
  int locations() const {
    auto [h, w] = feature_grid();
    return h * w;
  }
  int feature_channels() const {
    return conv_blocks.empty() ? 0 : conv_blocks.back().out_channels;
  }
  int bilinear_dim() const { return feature_channels() * feature_channels(); }

  void validate() const {
    if (in_channels < 1 || in_height < 1 || in_width < 1) throw std::invalid_argument("BackboneConfig: invalid input size");
    if (conv_blocks.empty()) throw std::invalid_argument("BackboneConfig: at least one conv block required");
    for (const auto& b : conv_blocks) {
      if (b.out_channels < 1 || b.kernel < 1 || b.stride < 1 || b.pool < 1) {
        throw std::invalid_argument("BackboneConfig: conv block fields must be positive");
      }
    }
    if (locations() < 1) throw std::invalid_argument("BackboneConfig: feature map has no locations");
    if (num_classes < 2) throw std::invalid_argument("BackboneConfig: need at least 2 classes");
    if (embedding_dim < 1) throw std::invalid_argument("BackboneConfig: embedding_dim must be positive");
    if (dropout_rate < real(0) || dropout_rate >= real(1)) throw std::invalid_argument("BackboneConfig: dropout_rate must be in [0,1)");
  }
};

struct ConvLayer {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 0;
  int pool = 1;
};

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct Network {
  BackboneConfig config;
  std::vector<ConvLayer> stream_a;
  std::vector<ConvLayer> stream_b;  // empty when config.shared_streams
  DenseLayer classifier;            // bilinear_dim -> num_classes
  DenseLayer embedding;             // feature_channels -> embedding_dim

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add_stream = [&out](const char* prefix, std::vector<ConvLayer>& layers) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        out.emplace_back(std::string(prefix) + "." + std::to_string(i) + ".weight", &layers[i].weight);
        out.emplace_back(std::string(prefix) + "." + std::to_string(i) + ".bias", &layers[i].bias);
      }
    };
    add_stream("stream_a", stream_a);
    add_stream("stream_b", stream_b);
    out.emplace_back("classifier.weight", &classifier.weight);
    out.emplace_back("classifier.bias", &classifier.bias);
    out.emplace_back("embedding.weight", &embedding.weight);
    out.emplace_back("embedding.bias", &embedding.bias);
    return out;
  }
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const {
    auto mut = const_cast<Network*>(this)->named_parameters();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, p] : mut) out.emplace_back(n, p);
    return out;
  }
};

namespace detail {

inline Tensor fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
  const real bound = static_cast<real>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  std::vector<real> vals(static_cast<std::size_t>(numel_of(shape)));
  for (auto& v : vals) v = static_cast<real>(rng.uniform(-bound, bound));
  return Tensor(std::move(shape), std::move(vals));
}

inline std::vector<ConvLayer> init_stream(const BackboneConfig& cfg, Rng& rng) {
  std::vector<ConvLayer> layers;
  int cin = cfg.in_channels;
  for (const auto& b : cfg.conv_blocks) {
    ConvLayer l;
    l.weight = fan_in_uniform(rng, {b.out_channels, cin, b.kernel, b.kernel}, cin * b.kernel * b.kernel);
    l.bias = Tensor::zeros({b.out_channels});
    l.stride = b.stride;
    l.padding = (b.kernel - 1) / 2;
    l.pool = b.pool;
    layers.push_back(std::move(l));
    cin = b.out_channels;
  }
  return layers;
}

}  // namespace detail

// Deterministic per seed: conv/dense weights from a fan-in-scaled uniform
// distribution, biases zero.
inline Network init_parameters(const BackboneConfig& config, int seed) {
  config.validate();
  Rng rng(static_cast<std::uint64_t>(seed) * 0x2545f4914f6cdd1dULL + 1);
  Network net;
  net.config = config;
  net.stream_a = detail::init_stream(config, rng);
  if (!config.shared_streams) net.stream_b = detail::init_stream(config, rng);
  const int c = config.feature_channels();
  net.classifier.weight = detail::fan_in_uniform(rng, {config.bilinear_dim(), config.num_classes}, config.bilinear_dim());
  net.classifier.bias = Tensor::zeros({config.num_classes});
  net.embedding.weight = detail::fan_in_uniform(rng, {c, config.embedding_dim}, c);
  net.embedding.bias = Tensor::zeros({config.embedding_dim});
  return net;
}

// Copy of the network whose parameters are registered on the tape, in
// named_parameters() order. Forward passes through the copy record gradients.
inline Network attach_to_tape(const Network& net, GradTape& tape) {
  Network copy = net;
  for (auto& [name, p] : copy.named_parameters()) *p = tape.parameter(*p);
  return copy;
}

namespace detail {

inline Tensor run_stream(const std::vector<ConvLayer>& layers, Tensor x) {
  for (const auto& l : layers) {
    x = conv2d(x, l.weight, l.stride, l.padding);
    x = bias_add_channels(x, l.bias);
    x = relu(x);
    if (l.pool > 1) x = max_pool2d(x, l.pool);
  }
  return x;
}

}  // namespace detail

// Location-major feature maps of one image: ([Y,N], [Y,M]).
struct FeatureMaps {
  Tensor map_a;
  Tensor map_b;
};

inline FeatureMaps forward_features(const Network& net, const Tensor& image) {
  const auto& cfg = net.config;
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels || image.dim(1) != cfg.in_height || image.dim(2) != cfg.in_width) {
    throw std::invalid_argument("forward_features: image does not match configured input size");
  }
  Tensor feat_a = detail::run_stream(net.stream_a, image);
  Tensor feat_b = cfg.shared_streams ? feat_a : detail::run_stream(net.stream_b, image);
  const int c = feat_a.dim(0), y = feat_a.dim(1) * feat_a.dim(2);
  Tensor map_a = transpose(reshape(feat_a, {c, y}));
  Tensor map_b = cfg.shared_streams ? map_a : transpose(reshape(feat_b, {feat_b.dim(0), y}));
  return FeatureMaps{std::move(map_a), std::move(map_b)};
}

// All batch outputs of one joint forward pass over images [B,c,h,w].
struct BatchOutputs {
  Tensor bilinear;    // [B, N*M], unit rows
  Tensor logits;      // [B, k]
  Tensor probs;       // [B, k], row softmax
  Tensor embeddings;  // [B, d], unit rows
};

inline BatchOutputs forward_batch(const Network& net, const Tensor& images,
                                  bool training = false, Rng* dropout_rng = nullptr) {
  const auto& cfg = net.config;
  if (images.rank() != 4 || images.dim(1) != cfg.in_channels || images.dim(2) != cfg.in_height || images.dim(3) != cfg.in_width) {
    throw std::invalid_argument("forward_batch: images must be [B," + std::to_string(cfg.in_channels) + "," +
                                std::to_string(cfg.in_height) + "," + std::to_string(cfg.in_width) + "]");
  }
  const int batch = images.dim(0);
  Tensor feat_a = detail::run_stream(net.stream_a, images);  // [B,C,H,W]
  Tensor feat_b = cfg.shared_streams ? feat_a : detail::run_stream(net.stream_b, images);
  const int c = feat_a.dim(1), y = feat_a.dim(2) * feat_a.dim(3);
  Tensor loc_a = transpose_batch(reshape(feat_a, {batch, c, y}));  // [B,Y,C]
  Tensor loc_b = cfg.shared_streams ? loc_a : transpose_batch(reshape(feat_b, {batch, feat_b.dim(1), y}));

  BatchOutputs out;
  out.bilinear = bilinear_head_batch(loc_a, loc_b, cfg.pool_mode);
  Tensor h = out.bilinear;
  if (training && cfg.dropout_rate > real(0)) {
    if (!dropout_rng) throw std::invalid_argument("forward_batch: training mode needs a dropout rng");
    h = dropout(h, cfg.dropout_rate, true, *dropout_rng);
  }
  out.logits = bias_add_rows(matmul(h, net.classifier.weight), net.classifier.bias);
  out.probs = softmax(out.logits, 1);

  Tensor gap = global_avg_pool(feat_a);  // [B,C]
  out.embeddings = l2_normalize(bias_add_rows(matmul(gap, net.embedding.weight), net.embedding.bias), 1);
  return out;
}

// Unit-norm d-dimensional embedding of one image (inference mode).
inline Tensor forward_embedding(const Network& net, const Tensor& image) {
  Tensor batch = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
  BatchOutputs out = forward_batch(net, batch, false, nullptr);
  return reshape(out.embeddings, {net.config.embedding_dim});
}

// ---------------------------------------------------------------------------
// Checkpoint container (config + named parameter tensors)
// ---------------------------------------------------------------------------

inline std::string conv_blocks_string(const std::vector<ConvBlockSpec>& blocks) {
  std::string s;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) s += ";";
    s += std::to_string(blocks[i].out_channels) + "," + std::to_string(blocks[i].kernel) + "," +
         std::to_string(blocks[i].stride) + "," + std::to_string(blocks[i].pool);
  }
  return s;
}

inline std::vector<ConvBlockSpec> parse_conv_blocks(const std::string& s) {
  std::vector<ConvBlockSpec> blocks;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    ConvBlockSpec b;
    if (std::sscanf(item.c_str(), "%d,%d,%d,%d", &b.out_channels, &b.kernel, &b.stride, &b.pool) != 4) {
      throw std::runtime_error("parse_conv_blocks: malformed block '" + item + "'");
    }
    blocks.push_back(b);
  }
  if (blocks.empty()) throw std::runtime_error("parse_conv_blocks: empty spec");
  return blocks;
}

inline void write_config(Archive& a, const BackboneConfig& cfg) {
  a.put_int("config.in_channels", cfg.in_channels);
  a.put_int("config.in_height", cfg.in_height);
  a.put_int("config.in_width", cfg.in_width);
  a.put("config.conv_blocks", conv_blocks_string(cfg.conv_blocks));
  a.put_int("config.num_classes", cfg.num_classes);
  a.put_int("config.embedding_dim", cfg.embedding_dim);
  a.put_real("config.dropout_rate", cfg.dropout_rate);
  a.put_bool("config.shared_streams", cfg.shared_streams);
  a.put("config.pool_mode", cfg.pool_mode == BilinearPoolMode::kSum ? "sum" : "average");
}

inline BackboneConfig read_config(const Archive& a) {
  BackboneConfig cfg;
  cfg.in_channels = static_cast<int>(a.get_int("config.in_channels"));
  cfg.in_height = static_cast<int>(a.get_int("config.in_height"));
  cfg.in_width = static_cast<int>(a.get_int("config.in_width"));
  cfg.conv_blocks = parse_conv_blocks(a.get("config.conv_blocks"));
  cfg.num_classes = static_cast<int>(a.get_int("config.num_classes"));
  cfg.embedding_dim = static_cast<int>(a.get_int("config.embedding_dim"));
  cfg.dropout_rate = a.get_real("config.dropout_rate");
  cfg.shared_streams = a.get_bool("config.shared_streams");
  cfg.pool_mode = a.get("config.pool_mode") == "average" ? BilinearPoolMode::kAverage : BilinearPoolMode::kSum;
  return cfg;
}

inline void write_network(Archive& a, const Network& net) {
  write_config(a, net.config);
  for (const auto& [name, p] : net.named_parameters()) a.put_tensor(name, *p);
}

inline Network read_network(const Archive& a) {
  Network net = init_parameters(read_config(a), 0);
  for (auto& [name, p] : net.named_parameters()) *p = a.tensor(name);
  return net;
}

inline void save_network(const Network& net, const std::string& path) {
  Archive a;
  write_network(a, net);
  a.save(path);
}

inline Network load_network(const std::string& path) {
  return read_network(Archive::load(path));
}

}  // namespace btn
