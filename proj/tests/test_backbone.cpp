#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <vector>

#include "btn/network.hpp"
#include "support/fd.hpp"
#include "support/probes.hpp"

using btn::BackboneConfig;
using btn::Network;
using btn::Rng;
using btn::Tensor;

namespace {

Tensor random_image(Rng& rng, const BackboneConfig& cfg) {
  return Tensor({cfg.in_channels, cfg.in_height, cfg.in_width},
                fd::random_uniform(rng, static_cast<std::size_t>(cfg.in_channels * cfg.in_height * cfg.in_width)));
}

}  // namespace

TEST_CASE("feature grid follows the conv/pool shape formula") {
  BackboneConfig cfg;
  cfg.in_channels = 3;
  cfg.in_height = 32;
  cfg.in_width = 32;
  cfg.conv_blocks = {{8, 3, 1, 2}, {16, 3, 1, 2}};
  auto [h, w] = cfg.feature_grid();
  CHECK(h == 8);
  CHECK(w == 8);
  CHECK(cfg.locations() == 64);
  CHECK(cfg.feature_channels() == 16);

  Network net = btn::init_parameters(cfg, 1);
  Rng rng(5);
  auto maps = btn::forward_features(net, random_image(rng, cfg));
  CHECK(maps.map_a.shape() == std::vector<int>{64, 16});
  CHECK(maps.map_b.shape() == std::vector<int>{64, 16});
}

TEST_CASE("zero image with zero biases gives zero feature maps") {
  BackboneConfig cfg = probes::tiny_config();
  Network net = btn::init_parameters(cfg, 3);  // biases start at zero
  Tensor zero({cfg.in_channels, cfg.in_height, cfg.in_width}, 0.0);
  auto maps = btn::forward_features(net, zero);
  for (double v : maps.map_a.values()) CHECK(v == 0.0);
}

TEST_CASE("shared streams alias: map_a equals map_b") {
  BackboneConfig cfg = probes::tiny_config();
  cfg.shared_streams = true;
  Network net = btn::init_parameters(cfg, 7);
  Rng rng(9);
  auto maps = btn::forward_features(net, random_image(rng, cfg));
  CHECK(maps.map_a.values() == maps.map_b.values());

  cfg.shared_streams = false;
  Network net2 = btn::init_parameters(cfg, 7);
  Rng rng2(9);
  auto maps2 = btn::forward_features(net2, random_image(rng2, cfg));
  CHECK(maps2.map_a.values() != maps2.map_b.values());
}

TEST_CASE("embeddings are unit norm and deterministic in inference") {
  BackboneConfig cfg = probes::tiny_config();
  Network net = btn::init_parameters(cfg, 11);
  Rng rng(13);
  Tensor img = random_image(rng, cfg);
  Tensor e1 = btn::forward_embedding(net, img);
  Tensor e2 = btn::forward_embedding(net, img);
  CHECK(e1.values() == e2.values());
  double ss = 0;
  for (double v : e1.values()) ss += v * v;
  CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-9);

  // distance of an image to itself is zero
  double d = 0;
  for (std::size_t i = 0; i < e1.values().size(); ++i) {
    const double diff = e1.values()[i] - e2.values()[i];
    d += diff * diff;
  }
  CHECK(d == 0.0);
}

TEST_CASE("init is deterministic per seed and fan-in bounded") {
  BackboneConfig cfg = probes::tiny_config();
  Network a = btn::init_parameters(cfg, 42);
  Network b = btn::init_parameters(cfg, 42);
  Network c = btn::init_parameters(cfg, 43);
  bool identical = true, differs = false;
  auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].second->values() != pb[i].second->values()) identical = false;
    if (pa[i].second->values() != pc[i].second->values()) differs = true;
  }
  CHECK(identical);
  CHECK(differs);

  // dense layer with fan-in 100
  BackboneConfig wide = cfg;
  wide.conv_blocks = {{100, 3, 1, 1}};
  wide.in_height = 4;
  wide.in_width = 4;
  Network net = btn::init_parameters(wide, 1);
  const double bound = std::sqrt(6.0 / 100.0);
  for (double v : net.embedding.weight.values()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("invalid configs are rejected") {
  BackboneConfig cfg = probes::tiny_config();
  cfg.embedding_dim = 0;
  CHECK_THROWS_AS(btn::init_parameters(cfg, 1), std::invalid_argument);

  BackboneConfig shrunk = probes::tiny_config();
  shrunk.in_height = 2;
  shrunk.in_width = 2;
  shrunk.conv_blocks = {{4, 3, 1, 2}, {4, 3, 1, 2}};  // pools below one location
  CHECK_THROWS_AS(btn::init_parameters(shrunk, 1), std::invalid_argument);

  Network net = btn::init_parameters(probes::tiny_config(), 1);
  Tensor wrong({3, 5, 5}, 0.0);
  CHECK_THROWS_AS(btn::forward_features(net, wrong), std::invalid_argument);
}

TEST_CASE("batch forward outputs have the documented shapes") {
  BackboneConfig cfg = probes::tiny_config();
  Network net = btn::init_parameters(cfg, 17);
  Rng rng(19);
  const int batch = 3;
  Tensor images({batch, cfg.in_channels, cfg.in_height, cfg.in_width},
                fd::random_uniform(rng, static_cast<std::size_t>(batch * cfg.in_channels * cfg.in_height * cfg.in_width)));
  auto out = btn::forward_batch(net, images);
  CHECK(out.probs.shape() == std::vector<int>{batch, cfg.num_classes});
  CHECK(out.embeddings.shape() == std::vector<int>{batch, cfg.embedding_dim});
  CHECK(out.bilinear.shape() == std::vector<int>{batch, cfg.bilinear_dim()});
  for (int b = 0; b < batch; ++b) {
    double s = 0, ss = 0;
    for (int k = 0; k < cfg.num_classes; ++k) s += out.probs.at({b, k});
    for (int d = 0; d < cfg.embedding_dim; ++d) ss += out.embeddings.at({b, d}) * out.embeddings.at({b, d});
    CHECK(std::abs(s - 1.0) < 1e-9);
    CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-9);
  }
}

TEST_CASE("full-network gradients match finite differences") {
  BackboneConfig cfg = probes::tiny_config();
  Network net = btn::init_parameters(cfg, 23);
  Rng rng(29);
  const int batch = 2;
  std::vector<double> img = fd::random_uniform(rng, static_cast<std::size_t>(batch * cfg.in_channels * cfg.in_height * cfg.in_width), 0.05, 1.0);
  Tensor images({batch, cfg.in_channels, cfg.in_height, cfg.in_width}, img);

  Rng wr(31);
  std::vector<double> wp = fd::random_uniform(wr, static_cast<std::size_t>(batch * cfg.num_classes));
  std::vector<double> we = fd::random_uniform(wr, static_cast<std::size_t>(batch * cfg.embedding_dim));
  Tensor wprobs({batch, cfg.num_classes}, wp);
  Tensor wemb({batch, cfg.embedding_dim}, we);

  // analytic gradient wrt every parameter
  btn::GradTape tape;
  Network attached = btn::attach_to_tape(net, tape);
  auto out = btn::forward_batch(attached, images);
  Tensor loss = btn::add(btn::sum(btn::mul(out.probs, wprobs)), btn::sum(btn::mul(out.embeddings, wemb)));
  tape.backward(loss);
  std::vector<double> analytic;
  for (auto& [name, p] : attached.named_parameters()) {
    auto g = tape.grad(*p).values();
    analytic.insert(analytic.end(), g.begin(), g.end());
  }

  auto f = [&](const std::vector<double>& flat) {
    Network probe = net;
    probes::set_params(probe, flat);
    auto o = btn::forward_batch(probe, images);
    double s = 0;
    for (std::size_t i = 0; i < wp.size(); ++i) s += o.probs.values()[i] * wp[i];
    for (std::size_t i = 0; i < we.size(); ++i) s += o.embeddings.values()[i] * we[i];
    return s;
  };
  std::vector<double> gfd = fd::central_diff(f, probes::flatten_params(net), 1e-5);
  CHECK(fd::rel_error(analytic, gfd) < 1e-4);
}

TEST_CASE("separate streams also pass the full-network gradient check") {
  BackboneConfig cfg = probes::tiny_config();
  cfg.shared_streams = false;
  Network net = btn::init_parameters(cfg, 51);
  Rng rng(53);
  std::vector<double> img = fd::random_uniform(rng, static_cast<std::size_t>(cfg.in_channels * cfg.in_height * cfg.in_width), 0.05, 1.0);
  Tensor images({1, cfg.in_channels, cfg.in_height, cfg.in_width}, img);

  Rng wr(59);
  std::vector<double> wp = fd::random_uniform(wr, static_cast<std::size_t>(cfg.num_classes));
  Tensor wprobs({1, cfg.num_classes}, wp);

  btn::GradTape tape;
  Network attached = btn::attach_to_tape(net, tape);
  tape.backward(btn::sum(btn::mul(btn::forward_batch(attached, images).probs, wprobs)));
  std::vector<double> analytic;
  for (auto& [name, p] : attached.named_parameters()) {
    auto g = tape.grad(*p).values();
    analytic.insert(analytic.end(), g.begin(), g.end());
  }
  auto f = [&](const std::vector<double>& flat) {
    Network probe = net;
    probes::set_params(probe, flat);
    auto o = btn::forward_batch(probe, images);
    double s = 0;
    for (std::size_t i = 0; i < wp.size(); ++i) s += o.probs.values()[i] * wp[i];
    return s;
  };
  CHECK(fd::rel_error(analytic, fd::central_diff(f, probes::flatten_params(net), 1e-5)) < 1e-4);
}

TEST_CASE("checkpoint round-trip preserves forward outputs exactly") {
  BackboneConfig cfg = probes::tiny_config();
  cfg.num_classes = 3;
  Network net = btn::init_parameters(cfg, 37);
  const std::string path = "backbone_roundtrip.btn";
  btn::save_network(net, path);
  Network loaded = btn::load_network(path);
  std::remove(path.c_str());

  Rng rng(41);
  Tensor img = random_image(rng, cfg);
  Tensor e1 = btn::forward_embedding(net, img);
  Tensor e2 = btn::forward_embedding(loaded, img);
  CHECK(e1.values() == e2.values());

  auto maps1 = btn::forward_features(net, img);
  auto maps2 = btn::forward_features(loaded, img);
  CHECK(maps1.map_a.values() == maps2.map_a.values());
}
