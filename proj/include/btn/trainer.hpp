#pragma once

// End-to-end optimization: phase 1 trains the bilinear classifier branch
// with Adam (embedding head frozen), phase 2 trains everything with SGD on
// the joint objective alpha*L_softmax + (1-alpha)*L_triplet. The similarity
// matrix refreshes once per epoch from training-split softmax outputs.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "btn/checkpoint.hpp"
#include "btn/csv.hpp"
#include "btn/data.hpp"
#include "btn/eval.hpp"
#include "btn/losses.hpp"
#include "btn/mining.hpp"
#include "btn/network.hpp"
#include "btn/svg.hpp"

namespace btn {

struct TrainConfig {
  BackboneConfig backbone;
  SamplerConfig sampler;
  Margins margins;
  int epochs = 30;
  int phase1_epochs = -1;               // -1: 20% of the epoch budget
  real learning_rate = real(0.0001);    // phase-2 SGD
  real phase1_learning_rate = real(0.001);  // phase-1 Adam
  int seed = 0;
  real similarity_update_momentum = real(0.9);
  real beta = real(0);       // accepted and reported; no term uses it
  real grad_clip_norm = real(0);  // 0 disables the safety valve
  int steps_per_epoch = 0;        // 0: ceil(train size / batch size)
  bool strategy_schedule = true;  // semi-hard in the first triplet epoch, hard afterward

  int resolved_phase1_epochs() const { return phase1_epochs >= 0 ? phase1_epochs : epochs / 5; }

  void validate() const {
    backbone.validate();
    sampler.validate();
    margins.validate();
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (learning_rate <= real(0) || phase1_learning_rate <= real(0)) {
      throw std::invalid_argument("TrainConfig: learning rates must be > 0");
    }
    if (resolved_phase1_epochs() > epochs) throw std::invalid_argument("TrainConfig: phase1_epochs exceeds epochs");
    if (similarity_update_momentum < real(0) || similarity_update_momentum >= real(1)) {
      throw std::invalid_argument("TrainConfig: similarity momentum must be in [0,1)");
    }
    if (grad_clip_norm < real(0)) throw std::invalid_argument("TrainConfig: grad_clip_norm must be >= 0");
  }
};

struct EpochStats {
  int epoch = 0;
  real train_loss = 0;
  real val_loss = 0;
  real train_acc = 0;
  real val_acc = 0;
};

struct TrainState {
  Network network;
  SimilarityMatrix similarity{2};
  Rng rng{0};
  int epoch = 0;
  long long adam_step = 0;
  std::vector<Tensor> adam_m;  // parallel to named_parameters() order
  std::vector<Tensor> adam_v;
  std::vector<EpochStats> history;
};

struct StepMetrics {
  real loss = 0;
  real softmax_loss = 0;
  real triplet_loss = 0;
  real batch_accuracy = 0;
  int triplets = 0;
};

namespace detail {

inline bool is_embedding_param(const std::string& name) {
  return name.rfind("embedding.", 0) == 0;
}

inline real flat_grad_norm(const std::vector<Tensor>& grads) {
  double ss = 0;
  for (const auto& g : grads)
    for (real v : g.values()) ss += static_cast<double>(v) * static_cast<double>(v);
  return static_cast<real>(std::sqrt(ss));
}

inline std::string batch_diagnostic(const TripletBatch& batch) {
  real lo = batch.images.values()[0], hi = lo;
  for (real v : batch.images.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ostringstream os;
  os << "batch size " << batch.labels.size() << ", pixel range [" << lo << ", " << hi << "], labels";
  for (int l : batch.labels) os << " " << l;
  return os.str();
}

}  // namespace detail

// One optimization step. Phase 1 (phase1 == true): plain cross-entropy,
// Adam over everything except the embedding head. Phase 2: joint loss
// with online-mined triplets, SGD over all parameters.
inline StepMetrics train_step(TrainState& state, const TripletBatch& batch, const TrainConfig& config,
                              bool phase1, MiningStrategy strategy) {
  StepMetrics metrics;
  GradTape tape;
  Network attached = attach_to_tape(state.network, tape);

  Tensor loss;
  try {
    BatchOutputs out = forward_batch(attached, batch.images, true, &state.rng);
    long long hits = 0;
    for (int i = 0; i < static_cast<int>(batch.labels.size()); ++i) {
      if (argmax_row(out.probs, i) == batch.labels[static_cast<std::size_t>(i)]) ++hits;
    }
    metrics.batch_accuracy = static_cast<real>(hits) / static_cast<real>(batch.labels.size());

    if (phase1) {
      loss = cross_entropy_loss(out.probs, batch.labels);
      metrics.softmax_loss = loss.value();
    } else {
      Tensor distances = pairwise_distances(out.embeddings);  // detached values
      std::vector<Triplet> triplets = mine_hard_triplets(distances, batch.labels, strategy, &state.rng);
      validate_triplets(triplets, batch.labels);
      metrics.triplets = static_cast<int>(triplets.size());
      std::vector<int> anchors, positives, negatives;
      for (const auto& t : triplets) {
        anchors.push_back(t.anchor);
        positives.push_back(t.positive);
        negatives.push_back(t.negative);
      }
      Tensor l_triplet = constrained_triplet_loss(gather_rows(out.embeddings, anchors),
                                                  gather_rows(out.embeddings, positives),
                                                  gather_rows(out.embeddings, negatives), config.margins);
      Tensor l_softmax = weighted_softmax_loss(out.probs, batch.labels, state.similarity);
      metrics.softmax_loss = l_softmax.value();
      metrics.triplet_loss = l_triplet.value();
      loss = joint_loss(l_softmax, l_triplet, config.margins.alpha_t);
    }
    metrics.loss = loss.value();
    tape.backward(loss);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string(e.what()) + " [" + detail::batch_diagnostic(batch) + "]");
  }

  auto params = attached.named_parameters();
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (auto& [name, p] : params) grads.push_back(tape.grad(*p));

  if (config.grad_clip_norm > real(0)) {
    const real norm = detail::flat_grad_norm(grads);
    if (norm > config.grad_clip_norm) {
      const real factor = config.grad_clip_norm / norm;
      for (auto& g : grads) g = scale(g, factor);
    }
  }

  auto master = state.network.named_parameters();
  if (phase1) {
    ++state.adam_step;
    const real b1 = real(0.9), b2 = real(0.999), eps = real(1e-8);
    const real bc1 = real(1) - static_cast<real>(std::pow(static_cast<double>(b1), static_cast<double>(state.adam_step)));
    const real bc2 = real(1) - static_cast<real>(std::pow(static_cast<double>(b2), static_cast<double>(state.adam_step)));
    for (std::size_t i = 0; i < master.size(); ++i) {
      if (detail::is_embedding_param(master[i].first)) continue;  // frozen branch
      const auto& g = grads[i].values();
      std::vector<real> m = state.adam_m[i].values();
      std::vector<real> v = state.adam_v[i].values();
      std::vector<real> w = master[i].second->values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (real(1) - b1) * g[j];
        v[j] = b2 * v[j] + (real(1) - b2) * g[j] * g[j];
        w[j] -= config.phase1_learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
      }
      state.adam_m[i] = Tensor(state.adam_m[i].shape(), std::move(m));
      state.adam_v[i] = Tensor(state.adam_v[i].shape(), std::move(v));
      *master[i].second = Tensor(master[i].second->shape(), std::move(w));
    }
  } else {
    for (std::size_t i = 0; i < master.size(); ++i) {
      const auto& g = grads[i].values();
      std::vector<real> w = master[i].second->values();
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= config.learning_rate * g[j];
      *master[i].second = Tensor(master[i].second->shape(), std::move(w));
    }
  }
  return metrics;
}

// Convenience overload: phase and mining strategy follow from the completed
// epoch count and the configured schedule.
inline StepMetrics train_step(TrainState& state, const TripletBatch& batch, const TrainConfig& config) {
  const int phase1 = config.resolved_phase1_epochs();
  MiningStrategy strategy = config.sampler.strategy;
  if (config.strategy_schedule) {
    strategy = (state.epoch == phase1) ? MiningStrategy::kSemiHard : MiningStrategy::kHard;
  }
  return train_step(state, batch, config, state.epoch < phase1, strategy);
}

// Inference-mode cross-entropy and top-1 accuracy over a dataset.
inline std::pair<real, real> evaluate_classifier(const Network& net, const Dataset& ds) {
  auto [probs, embeddings] = infer_dataset(net, ds);
  const real loss = cross_entropy_loss(probs, ds.labels).value();
  long long hits = 0;
  for (int i = 0; i < static_cast<int>(ds.size()); ++i) {
    if (argmax_row(probs, i) == ds.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return {loss, static_cast<real>(hits) / static_cast<real>(ds.size())};
}

// Joint loss of one batch at fixed parameters, mining included — used by the
// descent-direction checks.
inline real evaluate_joint_loss(const Network& net, const TripletBatch& batch, const SimilarityMatrix& sm,
                                const Margins& margins, MiningStrategy strategy) {
  BatchOutputs out = forward_batch(net, batch.images);
  Tensor distances = pairwise_distances(out.embeddings);
  std::vector<Triplet> triplets = mine_hard_triplets(distances, batch.labels, strategy);
  std::vector<int> anchors, positives, negatives;
  for (const auto& t : triplets) {
    anchors.push_back(t.anchor);
    positives.push_back(t.positive);
    negatives.push_back(t.negative);
  }
  Tensor l_triplet = constrained_triplet_loss(gather_rows(out.embeddings, anchors),
                                              gather_rows(out.embeddings, positives),
                                              gather_rows(out.embeddings, negatives), margins);
  Tensor l_softmax = weighted_softmax_loss(out.probs, batch.labels, sm);
  return joint_loss(l_softmax, l_triplet, margins.alpha_t).value();
}

// ---------------------------------------------------------------------------
// Trainer checkpoints (network container + optimizer and loop state)
// ---------------------------------------------------------------------------

inline void save_train_checkpoint(const TrainState& state, const TrainConfig& config, const std::string& path) {
  Archive a;
  write_network(a, state.network);
  a.put_int("trainer.epoch", state.epoch);
  a.put_int("trainer.adam_step", state.adam_step);
  a.put_u64("trainer.rng_state", state.rng.state());
  a.put_real("trainer.similarity_momentum", state.similarity.momentum());
  a.put_real("trainer.alpha_t", config.margins.alpha_t);
  a.put_real("trainer.beta", config.beta);
  a.put_int("trainer.history_rows", static_cast<long long>(state.history.size()));
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto& h = state.history[i];
    a.put("trainer.history." + std::to_string(i),
          std::to_string(h.epoch) + "," + format_real(h.train_loss) + "," + format_real(h.val_loss) + "," +
              format_real(h.train_acc) + "," + format_real(h.val_acc));
  }
  a.put_tensor("trainer.similarity", state.similarity.matrix());
  for (std::size_t i = 0; i < state.adam_m.size(); ++i) {
    a.put_tensor("opt.m." + std::to_string(i), state.adam_m[i]);
    a.put_tensor("opt.v." + std::to_string(i), state.adam_v[i]);
  }
  a.save(path);
}

inline TrainState load_train_checkpoint(const std::string& path) {
  Archive a = Archive::load(path);
  TrainState state;
  state.network = read_network(a);
  state.epoch = static_cast<int>(a.get_int("trainer.epoch"));
  state.adam_step = a.get_int("trainer.adam_step");
  state.rng.set_state(a.get_u64("trainer.rng_state"));
  state.similarity = SimilarityMatrix(state.network.config.num_classes, a.get_real("trainer.similarity_momentum"));
  state.similarity.load_rows(a.tensor("trainer.similarity"));
  const long long rows = a.get_int("trainer.history_rows");
  for (long long i = 0; i < rows; ++i) {
    std::stringstream ss(a.get("trainer.history." + std::to_string(i)));
    std::string cell;
    EpochStats h;
    std::getline(ss, cell, ',');
    h.epoch = std::stoi(cell);
    std::getline(ss, cell, ',');
    h.train_loss = parse_real(cell);
    std::getline(ss, cell, ',');
    h.val_loss = parse_real(cell);
    std::getline(ss, cell, ',');
    h.train_acc = parse_real(cell);
    std::getline(ss, cell, ',');
    h.val_acc = parse_real(cell);
    state.history.push_back(h);
  }
  const std::size_t params = state.network.named_parameters().size();
  for (std::size_t i = 0; i < params; ++i) {
    state.adam_m.push_back(a.tensor("opt.m." + std::to_string(i)));
    state.adam_v.push_back(a.tensor("opt.v." + std::to_string(i)));
  }
  return state;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

inline TrainState fresh_state(const Splits& splits, const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.backbone.num_classes = splits.train.num_classes();
  cfg.validate();
  TrainState state;
  state.network = init_parameters(cfg.backbone, cfg.seed);
  state.similarity = SimilarityMatrix(cfg.backbone.num_classes, cfg.similarity_update_momentum);
  state.rng = Rng(static_cast<std::uint64_t>(cfg.seed) * 0x9e3779b97f4a7c15ULL + 0x1234567);
  for (auto& [name, p] : state.network.named_parameters()) {
    state.adam_m.push_back(Tensor::zeros(p->shape()));
    state.adam_v.push_back(Tensor::zeros(p->shape()));
  }
  return state;
}

inline void run_epochs(TrainState& state, const Splits& splits, const TrainConfig& config,
                       const std::string& checkpoint_dir) {
  TrainConfig cfg = config;
  cfg.backbone.num_classes = splits.train.num_classes();
  cfg.validate();
  splits.train.validate();
  splits.validation.validate();
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

  const int batch_size = cfg.sampler.batch_size();
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : std::max<int>(1, static_cast<int>((splits.train.size() + batch_size - 1) / static_cast<std::size_t>(batch_size)));
  const int phase1 = cfg.resolved_phase1_epochs();

  // state.epoch counts completed epochs, which keeps resume exact
  while (state.epoch < cfg.epochs) {
    const int e = state.epoch;
    const bool in_phase1 = e < phase1;
    MiningStrategy strategy = cfg.sampler.strategy;
    if (cfg.strategy_schedule) {
      strategy = (e == phase1) ? MiningStrategy::kSemiHard : MiningStrategy::kHard;
    }
    real loss_sum = 0, acc_sum = 0;
    for (int s = 0; s < steps; ++s) {
      TripletBatch batch = sample_batch(splits.train, cfg.sampler, state.similarity, state.rng);
      StepMetrics m = train_step(state, batch, cfg, in_phase1, strategy);
      loss_sum += m.loss;
      acc_sum += m.batch_accuracy;
    }

    // per-epoch similarity refresh from training-split outputs
    auto [train_probs, train_emb] = infer_dataset(state.network, splits.train);
    state.similarity = state.similarity.updated(train_probs, splits.train.labels);

    auto [val_loss, val_acc] = evaluate_classifier(state.network, splits.validation);
    EpochStats stats;
    stats.epoch = e;
    stats.train_loss = loss_sum / static_cast<real>(steps);
    stats.train_acc = acc_sum / static_cast<real>(steps);
    stats.val_loss = val_loss;
    stats.val_acc = val_acc;
    state.history.push_back(stats);
    state.epoch = e + 1;

    if (!checkpoint_dir.empty()) {
      save_train_checkpoint(state, cfg,
                            (std::filesystem::path(checkpoint_dir) / ("epoch_" + std::to_string(e) + ".btn")).string());
    }
  }
  if (!checkpoint_dir.empty()) {
    save_train_checkpoint(state, cfg, (std::filesystem::path(checkpoint_dir) / "final.btn").string());
  }
}

}  // namespace detail

inline TrainState train(const Splits& splits, const TrainConfig& config, const std::string& checkpoint_dir = "") {
  TrainState state = detail::fresh_state(splits, config);
  detail::run_epochs(state, splits, config, checkpoint_dir);
  return state;
}

inline TrainState resume_train(const std::string& checkpoint_path, const Splits& splits, const TrainConfig& config,
                               const std::string& checkpoint_dir = "") {
  TrainState state = load_train_checkpoint(checkpoint_path);
  detail::run_epochs(state, splits, config, checkpoint_dir);
  return state;
}

inline void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  CsvTable table;
  table.header = {"epoch", "train_loss", "val_loss", "train_acc", "val_acc"};
  for (const auto& h : history) {
    table.rows.push_back({std::to_string(h.epoch), csv_number(static_cast<double>(h.train_loss)),
                          csv_number(static_cast<double>(h.val_loss)), csv_number(static_cast<double>(h.train_acc)),
                          csv_number(static_cast<double>(h.val_acc))});
  }
  write_csv(path, table);
}

inline void write_history_plot(const std::string& path, const std::vector<EpochStats>& history) {
  SvgSeries tl{"train loss", {}}, vl{"val loss", {}}, ta{"train acc", {}}, va{"val acc", {}};
  for (const auto& h : history) {
    tl.points.emplace_back(h.epoch, static_cast<double>(h.train_loss));
    vl.points.emplace_back(h.epoch, static_cast<double>(h.val_loss));
    ta.points.emplace_back(h.epoch, static_cast<double>(h.train_acc));
    va.points.emplace_back(h.epoch, static_cast<double>(h.val_acc));
  }
  write_svg_line_chart(path, "Loss and accuracy by epoch", "epoch", "value", {tl, vl, ta, va});
}

// ---------------------------------------------------------------------------
// Alpha sweep
// ---------------------------------------------------------------------------

struct AlphaResult {
  real alpha = 0;
  real val_accuracy = 0;
};

// Trains one model per alpha with a shared seed; writes alpha_sweep.csv and
// alpha_sweep.svg when out_dir is given.
inline std::vector<AlphaResult> alpha_sweep(const Splits& splits, const TrainConfig& config,
                                            const std::vector<real>& alphas, const std::string& out_dir = "") {
  if (alphas.empty()) throw std::invalid_argument("alpha_sweep: need at least one alpha");
  for (real a : alphas) {
    if (a < real(0) || a > real(1)) throw std::invalid_argument("alpha_sweep: alphas must lie in [0,1]");
  }
  std::vector<AlphaResult> table;
  for (real a : alphas) {
    TrainConfig cfg = config;
    cfg.margins.alpha_t = a;
    TrainState state = train(splits, cfg);
    table.push_back(AlphaResult{a, state.history.back().val_acc});
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    CsvTable csv;
    csv.header = {"alpha", "val_accuracy"};
    SvgSeries series{"validation accuracy", {}};
    for (const auto& r : table) {
      csv.rows.push_back({csv_number(static_cast<double>(r.alpha)), csv_number(static_cast<double>(r.val_accuracy))});
      series.points.emplace_back(static_cast<double>(r.alpha), static_cast<double>(r.val_accuracy));
    }
    write_csv((std::filesystem::path(out_dir) / "alpha_sweep.csv").string(), csv);
    write_svg_line_chart((std::filesystem::path(out_dir) / "alpha_sweep.svg").string(), "Accuracy by alpha", "alpha",
                         "validation accuracy", {series}, 0, 1, 0, 1);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Flat key-value config files
// ---------------------------------------------------------------------------

// Every key is required; a missing key is reported by name. Lines are
// `key = value`, '#' starts a comment.
inline TrainConfig parse_train_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) kv.emplace_back(key, value);
  }
  auto get = [&kv](const std::string& key) -> const std::string& {
    for (const auto& [k, v] : kv)
      if (k == key) return v;
    throw std::runtime_error("config: missing key '" + key + "'");
  };
  auto get_real_v = [&get](const std::string& key) { return parse_real(get(key)); };
  auto get_int_v = [&get](const std::string& key) { return std::stoi(get(key)); };
  auto get_bool_v = [&get](const std::string& key) { return get(key) == "1" || get(key) == "true"; };

  TrainConfig cfg;
  cfg.backbone.in_channels = get_int_v("input_channels");
  cfg.backbone.in_height = get_int_v("input_height");
  cfg.backbone.in_width = get_int_v("input_width");
  cfg.backbone.conv_blocks = parse_conv_blocks(get("conv_blocks"));
  cfg.backbone.embedding_dim = get_int_v("embedding_dim");
  cfg.backbone.dropout_rate = get_real_v("dropout_rate");
  cfg.backbone.shared_streams = get_bool_v("shared_streams");
  cfg.backbone.pool_mode = get("pool_mode") == "average" ? BilinearPoolMode::kAverage : BilinearPoolMode::kSum;
  cfg.sampler.classes_per_batch = get_int_v("batch_classes");
  cfg.sampler.samples_per_class = get_int_v("batch_samples");
  const std::string strat = get("strategy");
  if (strat == "hard") cfg.sampler.strategy = MiningStrategy::kHard;
  else if (strat == "semi_hard") cfg.sampler.strategy = MiningStrategy::kSemiHard;
  else if (strat == "random") cfg.sampler.strategy = MiningStrategy::kRandom;
  else throw std::runtime_error("config: unknown strategy '" + strat + "'");
  cfg.sampler.oversample_with_similarity = get_bool_v("oversample");
  cfg.strategy_schedule = get_bool_v("strategy_schedule");
  cfg.margins.mu1 = get_real_v("mu1");
  cfg.margins.mu2 = get_real_v("mu2");
  cfg.margins.b = get_real_v("b");
  cfg.margins.alpha_t = get_real_v("alpha_t");
  cfg.epochs = get_int_v("epochs");
  cfg.phase1_epochs = get_int_v("phase1_epochs");
  cfg.learning_rate = get_real_v("learning_rate");
  cfg.phase1_learning_rate = get_real_v("phase1_learning_rate");
  cfg.seed = get_int_v("seed");
  cfg.similarity_update_momentum = get_real_v("similarity_momentum");
  cfg.beta = get_real_v("beta");
  cfg.grad_clip_norm = get_real_v("grad_clip_norm");
  cfg.steps_per_epoch = get_int_v("steps_per_epoch");
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

inline std::string train_config_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "# network\n";
  os << "input_channels = " << cfg.backbone.in_channels << "\n";
  os << "input_height = " << cfg.backbone.in_height << "\n";
  os << "input_width = " << cfg.backbone.in_width << "\n";
  os << "conv_blocks = " << conv_blocks_string(cfg.backbone.conv_blocks) << "\n";
  os << "embedding_dim = " << cfg.backbone.embedding_dim << "\n";
  os << "dropout_rate = " << static_cast<double>(cfg.backbone.dropout_rate) << "\n";
  os << "shared_streams = " << (cfg.backbone.shared_streams ? 1 : 0) << "\n";
  os << "pool_mode = " << (cfg.backbone.pool_mode == BilinearPoolMode::kAverage ? "average" : "sum") << "\n";
  os << "# batches\n";
  os << "batch_classes = " << cfg.sampler.classes_per_batch << "\n";
  os << "batch_samples = " << cfg.sampler.samples_per_class << "\n";
  os << "strategy = "
     << (cfg.sampler.strategy == MiningStrategy::kHard ? "hard"
         : cfg.sampler.strategy == MiningStrategy::kSemiHard ? "semi_hard" : "random")
     << "\n";
  os << "strategy_schedule = " << (cfg.strategy_schedule ? 1 : 0) << "\n";
  os << "oversample = " << (cfg.sampler.oversample_with_similarity ? 1 : 0) << "\n";
  os << "# losses\n";
  os << "mu1 = " << static_cast<double>(cfg.margins.mu1) << "\n";
  os << "mu2 = " << static_cast<double>(cfg.margins.mu2) << "\n";
  os << "b = " << static_cast<double>(cfg.margins.b) << "\n";
  os << "alpha_t = " << static_cast<double>(cfg.margins.alpha_t) << "\n";
  os << "# optimization\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "phase1_epochs = " << cfg.phase1_epochs << "\n";
  os << "learning_rate = " << static_cast<double>(cfg.learning_rate) << "\n";
  os << "phase1_learning_rate = " << static_cast<double>(cfg.phase1_learning_rate) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "similarity_momentum = " << static_cast<double>(cfg.similarity_update_momentum) << "\n";
  os << "beta = " << static_cast<double>(cfg.beta) << "\n";
  os << "grad_clip_norm = " << static_cast<double>(cfg.grad_clip_norm) << "\n";
  os << "steps_per_epoch = " << cfg.steps_per_epoch << "\n";
  return os.str();
}

}  // namespace btn
