#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "btn/trainer.hpp"
#include "support/fd.hpp"
#include "support/probes.hpp"

using btn::Dataset;
using btn::MiningStrategy;
using btn::Network;
using btn::Rng;
using btn::SimilarityMatrix;
using btn::Splits;
using btn::Tensor;
using btn::TrainConfig;
using btn::TrainState;
using btn::TripletBatch;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.backbone.in_channels = 3;
  cfg.backbone.in_height = 16;
  cfg.backbone.in_width = 16;
  cfg.backbone.conv_blocks = {{6, 3, 1, 2}, {8, 3, 1, 2}};
  cfg.backbone.embedding_dim = 16;
  cfg.backbone.dropout_rate = 0.25;
  cfg.sampler.classes_per_batch = 2;
  cfg.sampler.samples_per_class = 4;
  cfg.epochs = 4;
  cfg.phase1_epochs = 2;
  cfg.phase1_learning_rate = 1e-3;
  cfg.learning_rate = 0.05;
  cfg.seed = 11;
  return cfg;
}

Splits tiny_splits(int seed = 5) {
  Dataset ds = btn::make_synthetic(2, 40, 16, 16, seed);
  btn::SplitSpec spec;
  spec.seed = 3;
  return btn::split(ds, spec);
}

TrainState make_state(const Splits& splits, const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.backbone.num_classes = splits.train.num_classes();
  TrainState state;
  state.network = btn::init_parameters(cfg.backbone, cfg.seed);
  state.similarity = SimilarityMatrix(cfg.backbone.num_classes, cfg.similarity_update_momentum);
  state.rng = Rng(99);
  for (auto& [name, p] : state.network.named_parameters()) {
    state.adam_m.push_back(Tensor::zeros(p->shape()));
    state.adam_v.push_back(Tensor::zeros(p->shape()));
  }
  return state;
}

bool params_equal(const Network& a, const Network& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].second->values() != pb[i].second->values()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("alpha = 1 with an identity similarity matrix is a zero-gradient fixed point") {
  TrainConfig cfg = tiny_train_config();
  cfg.margins.alpha_t = 1.0;
  cfg.backbone.dropout_rate = 0.0;
  Splits splits = tiny_splits();
  TrainState state = make_state(splits, cfg);
  state.similarity = SimilarityMatrix::identity(2);
  Network before = state.network;

  TripletBatch batch = btn::sample_batch(splits.train, cfg.sampler, state.similarity, state.rng);
  btn::StepMetrics m = btn::train_step(state, batch, cfg, false, MiningStrategy::kHard);
  CHECK(m.loss == 0.0);
  CHECK(params_equal(before, state.network));
}

TEST_CASE("epoch-derived step overload matches the explicit one") {
  TrainConfig cfg = tiny_train_config();
  cfg.backbone.dropout_rate = 0.0;
  Splits splits = tiny_splits();
  TrainState s1 = make_state(splits, cfg);
  TrainState s2 = make_state(splits, cfg);
  s2.rng = s1.rng;
  s1.epoch = cfg.epochs;  // past the phase boundary: phase 2, hard mining
  s2.epoch = cfg.epochs;

  Rng sample_rng(77);
  TripletBatch batch = btn::sample_batch(splits.train, cfg.sampler, s1.similarity, sample_rng);
  btn::StepMetrics m1 = btn::train_step(s1, batch, cfg);
  btn::StepMetrics m2 = btn::train_step(s2, batch, cfg, false, MiningStrategy::kHard);
  CHECK(m1.loss == m2.loss);
  CHECK(params_equal(s1.network, s2.network));
}

TEST_CASE("one small step decreases the joint loss") {
  TrainConfig cfg = tiny_train_config();
  cfg.backbone.dropout_rate = 0.0;  // keep the re-evaluated objective identical
  cfg.learning_rate = 1e-6;
  Splits splits = tiny_splits();
  TrainState state = make_state(splits, cfg);

  TripletBatch batch = btn::sample_batch(splits.train, cfg.sampler, state.similarity, state.rng);
  const double before = btn::evaluate_joint_loss(state.network, batch, state.similarity, cfg.margins, MiningStrategy::kHard);
  btn::train_step(state, batch, cfg, false, MiningStrategy::kHard);
  const double after = btn::evaluate_joint_loss(state.network, batch, state.similarity, cfg.margins, MiningStrategy::kHard);
  CHECK(after <= before + 1e-9);
  CHECK(before > 0.0);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  TrainConfig cfg = tiny_train_config();
  Splits splits = tiny_splits();
  TrainState a = btn::train(splits, cfg);
  TrainState b = btn::train(splits, cfg);
  CHECK(params_equal(a.network, b.network));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_acc == b.history[i].val_acc);
  }
}

TEST_CASE("phase 1 leaves the embedding head bit-identical") {
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 2;
  cfg.phase1_epochs = 2;  // pure phase 1
  Splits splits = tiny_splits();
  TrainState state = btn::train(splits, cfg);

  TrainConfig resolved = cfg;
  resolved.backbone.num_classes = splits.train.num_classes();
  Network initial = btn::init_parameters(resolved.backbone, cfg.seed);
  CHECK(state.network.embedding.weight.values() == initial.embedding.weight.values());
  CHECK(state.network.embedding.bias.values() == initial.embedding.bias.values());
  // while the classifier branch moved
  CHECK(state.network.classifier.weight.values() != initial.classifier.weight.values());
  CHECK(state.network.stream_a[0].weight.values() != initial.stream_a[0].weight.values());
}

TEST_CASE("degenerate phase schedules are legal and history is bookkept") {
  Splits splits = tiny_splits();
  TrainConfig pure2 = tiny_train_config();
  pure2.epochs = 2;
  pure2.phase1_epochs = 0;  // pure phase 2
  TrainState s2 = btn::train(splits, pure2);
  CHECK(s2.history.size() == 2);

  TrainConfig pure1 = tiny_train_config();
  pure1.epochs = 2;
  pure1.phase1_epochs = 2;  // pure phase 1
  TrainState s1 = btn::train(splits, pure1);
  CHECK(s1.history.size() == 2);
  for (std::size_t i = 0; i < s1.history.size(); ++i) CHECK(s1.history[i].epoch == static_cast<int>(i));
}

TEST_CASE("checkpoints round-trip and resume matches the straight run") {
  namespace fs = std::filesystem;
  TrainConfig cfg = tiny_train_config();
  Splits splits = tiny_splits();

  const std::string dir_a = (fs::temp_directory_path() / "btn_train_a").string();
  const std::string dir_b = (fs::temp_directory_path() / "btn_train_b").string();
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  TrainState straight = btn::train(splits, cfg, dir_a);

  TrainConfig half = cfg;
  half.epochs = 2;
  btn::train(splits, half, dir_b);
  TrainState resumed = btn::resume_train((fs::path(dir_b) / "final.btn").string(), splits, cfg);

  CHECK(params_equal(straight.network, resumed.network));
  REQUIRE(straight.history.size() == resumed.history.size());
  for (std::size_t i = 0; i < straight.history.size(); ++i) {
    CHECK(straight.history[i].train_loss == resumed.history[i].train_loss);
    CHECK(straight.history[i].val_loss == resumed.history[i].val_loss);
  }

  // save -> load preserves forward outputs exactly
  TrainState loaded = btn::load_train_checkpoint((fs::path(dir_a) / "final.btn").string());
  Tensor probe = btn::stack_batch(splits.test, {0, 1, 2});
  btn::BatchOutputs o1 = btn::forward_batch(straight.network, probe);
  btn::BatchOutputs o2 = btn::forward_batch(loaded.network, probe);
  CHECK(o1.probs.values() == o2.probs.values());
  CHECK(o1.embeddings.values() == o2.embeddings.values());
  CHECK(loaded.epoch == 4);
  CHECK(loaded.history.size() == 4);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("history export matches the documented CSV schema") {
  namespace fs = std::filesystem;
  Splits splits = tiny_splits();
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 2;
  TrainState state = btn::train(splits, cfg);
  const std::string path = (fs::temp_directory_path() / "btn_history.csv").string();
  btn::write_history_csv(path, state.history);
  btn::CsvTable table = btn::read_csv(path);
  CHECK(table.header == std::vector<std::string>{"epoch", "train_loss", "val_loss", "train_acc", "val_acc"});
  CHECK(table.rows.size() == 2);
  CHECK(std::stod(table.rows[0][1]) == static_cast<double>(state.history[0].train_loss));
  fs::remove(path);
}

TEST_CASE("config files round-trip and name missing keys") {
  TrainConfig cfg = tiny_train_config();
  cfg.margins.alpha_t = 0.55;
  cfg.beta = 0.25;
  TrainConfig parsed = btn::parse_train_config(btn::train_config_text(cfg));
  CHECK(parsed.epochs == cfg.epochs);
  CHECK(parsed.learning_rate == cfg.learning_rate);
  CHECK(parsed.margins.alpha_t == cfg.margins.alpha_t);
  CHECK(parsed.beta == cfg.beta);
  CHECK(parsed.backbone.conv_blocks.size() == cfg.backbone.conv_blocks.size());
  CHECK(parsed.sampler.samples_per_class == cfg.sampler.samples_per_class);

  std::string text = btn::train_config_text(cfg);
  const auto pos = text.find("learning_rate");
  text.erase(pos, text.find('\n', pos) - pos + 1);
  CHECK_THROWS_WITH_AS(btn::parse_train_config(text), doctest::Contains("learning_rate"), std::runtime_error);
}

TEST_CASE("non-finite losses abort with a batch diagnostic") {
  TrainConfig cfg = tiny_train_config();
  Splits splits = tiny_splits();
  TrainState state = make_state(splits, cfg);
  // poison the classifier so the forward pass overflows
  state.network.classifier.weight = Tensor(state.network.classifier.weight.shape(), 1e308);
  TripletBatch batch = btn::sample_batch(splits.train, cfg.sampler, state.similarity, state.rng);
  CHECK_THROWS_WITH_AS(btn::train_step(state, batch, cfg, false, MiningStrategy::kHard),
                       doctest::Contains("batch size"), std::runtime_error);
}

TEST_CASE("alpha sweep produces a row per alpha and emits artifacts") {
  namespace fs = std::filesystem;
  Splits splits = tiny_splits();
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 2;
  cfg.phase1_epochs = 1;

  auto single = btn::alpha_sweep(splits, cfg, {0.55});
  REQUIRE(single.size() == 1);
  CHECK(single[0].alpha == 0.55);
  CHECK(single[0].val_accuracy >= 0.0);
  CHECK(single[0].val_accuracy <= 1.0);

  const std::string dir = (fs::temp_directory_path() / "btn_sweep").string();
  fs::remove_all(dir);
  auto table = btn::alpha_sweep(splits, cfg, {0.0, 0.55, 1.0}, dir);
  CHECK(table.size() == 3);
  for (const auto& row : table) {
    CHECK(row.val_accuracy >= 0.0);
    CHECK(row.val_accuracy <= 1.0);
  }
  CHECK(fs::exists(fs::path(dir) / "alpha_sweep.csv"));
  CHECK(fs::exists(fs::path(dir) / "alpha_sweep.svg"));
  btn::CsvTable csv = btn::read_csv((fs::path(dir) / "alpha_sweep.csv").string());
  CHECK(csv.rows.size() == 3);
  fs::remove_all(dir);
}

TEST_CASE("desk-scale smoke: classifier learns the synthetic set quickly") {
  Dataset ds = btn::make_synthetic(2, 60, 16, 16, 21);
  btn::SplitSpec spec;
  spec.seed = 9;
  Splits splits = btn::split(ds, spec);
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 4;
  cfg.phase1_epochs = 2;
  TrainState state = btn::train(splits, cfg);
  CHECK(state.history.back().val_acc >= 0.9);
}
