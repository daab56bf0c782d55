// Command-line entry point: synthetic dataset generation, directory
// ingestion, training, evaluation, pair verification, alpha sweeps and
// gradient self-checks.
//
// Exit codes: 0 success, 1 usage error, 2 runtime or numeric failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "btn/data.hpp"
#include "btn/eval.hpp"
#include "btn/gradcheck.hpp"
#include "btn/trainer.hpp"

namespace fs = std::filesystem;

namespace {

bool verbose() {
  const char* v = std::getenv("BTN_VERBOSE");
  return v && std::string(v) != "0" && std::string(v) != "";
}

std::pair<int, int> parse_size(const std::string& size) {
  int h = 0, w = 0;
  if (std::sscanf(size.c_str(), "%dx%d", &h, &w) != 2 || h < 1 || w < 1) {
    throw CLI::ValidationError("--size", "expected HxW, e.g. 32x32");
  }
  return {h, w};
}

btn::Splits load_and_split(const std::string& data_dir, int h, int w, int split_seed) {
  btn::Dataset ds = btn::load_directory(data_dir, h, w);
  btn::SplitSpec spec;
  spec.seed = split_seed;
  return btn::split(ds, spec);
}

void cmd_synth(const std::string& out_dir, int classes, int per_class, const std::string& size, int seed,
               double noise, int split_seed) {
  auto [h, w] = parse_size(size);
  btn::Dataset ds = btn::make_synthetic(classes, per_class, h, w, seed, static_cast<btn::real>(noise));
  fs::create_directories(out_dir);
  ds.paths.resize(ds.size());
  std::vector<int> written(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int c = ds.labels[i];
    const fs::path class_dir = fs::path(out_dir) / ds.class_names[static_cast<std::size_t>(c)];
    fs::create_directories(class_dir);
    char name[48];
    std::snprintf(name, sizeof(name), "img_%04d.ppm", written[static_cast<std::size_t>(c)]++);
    const std::string path = (class_dir / name).string();
    btn::write_ppm(path, ds.images[i]);
    ds.paths[i] = path;
  }
  btn::SplitSpec spec;
  spec.seed = split_seed;
  btn::write_manifest((fs::path(out_dir) / "manifest.csv").string(), btn::split(ds, spec));
  std::printf("wrote %zu images across %d classes to %s\n", ds.size(), classes, out_dir.c_str());
}

void cmd_ingest(const std::string& data_dir, const std::string& size, int split_seed, const std::string& out) {
  auto [h, w] = parse_size(size);
  btn::Splits splits = load_and_split(data_dir, h, w, split_seed);
  btn::write_manifest(out, splits);
  std::printf("ingested %zu train / %zu validation / %zu test samples, manifest at %s\n", splits.train.size(),
              splits.validation.size(), splits.test.size(), out.c_str());
}

void cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
               const std::string& resume, int split_seed) {
  btn::TrainConfig cfg = btn::load_train_config(config_path);
  btn::Splits splits = load_and_split(data_dir, cfg.backbone.in_height, cfg.backbone.in_width, split_seed);
  fs::create_directories(out_dir);
  btn::TrainState state = resume.empty() ? btn::train(splits, cfg, out_dir)
                                         : btn::resume_train(resume, splits, cfg, out_dir);
  btn::write_history_csv((fs::path(out_dir) / "history.csv").string(), state.history);
  btn::write_history_plot((fs::path(out_dir) / "history.svg").string(), state.history);
  if (verbose()) {
    for (const auto& hrow : state.history) {
      std::printf("epoch %d: train_loss %.6f val_loss %.6f train_acc %.4f val_acc %.4f\n", hrow.epoch,
                  static_cast<double>(hrow.train_loss), static_cast<double>(hrow.val_loss),
                  static_cast<double>(hrow.train_acc), static_cast<double>(hrow.val_acc));
    }
  }
  std::printf("trained %d epochs, final val_acc %.4f, checkpoints in %s\n", state.epoch,
              state.history.empty() ? 0.0 : static_cast<double>(state.history.back().val_acc), out_dir.c_str());
}

void cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_dir,
              int split_seed, int pair_count, int folds, double same_fraction, int pair_seed,
              const std::string& history_csv) {
  btn::Network net = btn::load_network(checkpoint);
  btn::Splits splits = load_and_split(data_dir, net.config.in_height, net.config.in_width, split_seed);
  btn::PairEvalConfig pair_cfg;
  pair_cfg.count = pair_count;
  pair_cfg.folds = folds;
  pair_cfg.same_fraction = static_cast<btn::real>(same_fraction);
  pair_cfg.seed = pair_seed;
  btn::EvalReport report = btn::full_report(net, splits.test, pair_cfg);
  btn::write_report_files(report, out_dir);
  if (!history_csv.empty()) {
    btn::CsvTable table = btn::read_csv(history_csv);
    std::vector<btn::EpochStats> history;
    for (const auto& row : table.rows) {
      btn::EpochStats h;
      h.epoch = std::stoi(row[0]);
      h.train_loss = static_cast<btn::real>(std::stod(row[1]));
      h.val_loss = static_cast<btn::real>(std::stod(row[2]));
      h.train_acc = static_cast<btn::real>(std::stod(row[3]));
      h.val_acc = static_cast<btn::real>(std::stod(row[4]));
      history.push_back(h);
    }
    btn::write_history_plot((fs::path(out_dir) / "history.svg").string(), history);
  }
  std::printf("accuracy %.4f, pair 10-fold accuracy %.4f, report in %s\n",
              static_cast<double>(report.overall_accuracy), static_cast<double>(report.pair_eval.mean_accuracy),
              out_dir.c_str());
}

void cmd_pairs(const std::string& checkpoint, const std::string& data_dir, const std::string& out_dir,
               int split_seed, int count, int folds, double same_fraction, int seed) {
  btn::Network net = btn::load_network(checkpoint);
  btn::Splits splits = load_and_split(data_dir, net.config.in_height, net.config.in_width, split_seed);
  auto [probs, embeddings] = btn::infer_dataset(net, splits.validation);
  btn::Rng rng(static_cast<std::uint64_t>(seed) * 0x94d049bb133111ebULL + 5);
  btn::PairSet pairs = btn::build_pair_set(embeddings, splits.validation.labels, count,
                                           static_cast<btn::real>(same_fraction), rng);
  btn::KFoldResult result = btn::kfold_pair_eval(pairs, folds);
  fs::create_directories(out_dir);
  btn::CsvTable table;
  table.header = {"distance", "same_class", "fold", "threshold", "correct"};
  for (const auto& r : result.records) {
    table.rows.push_back({btn::csv_number(static_cast<double>(r.distance)), r.same_class ? "1" : "0",
                          std::to_string(r.fold), btn::csv_number(static_cast<double>(r.threshold)),
                          r.correct ? "1" : "0"});
  }
  btn::write_csv((fs::path(out_dir) / "pairs.csv").string(), table);
  std::printf("pair verification over %d pairs, %d folds: mean accuracy %.4f\n", count, folds,
              static_cast<double>(result.mean_accuracy));
  for (std::size_t f = 0; f < result.fold_thresholds.size(); ++f) {
    std::printf("fold %zu: threshold %.6f accuracy %.4f\n", f, static_cast<double>(result.fold_thresholds[f]),
                static_cast<double>(result.fold_accuracies[f]));
  }
}

void cmd_sweep_alpha(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
                     const std::vector<double>& alphas, int split_seed) {
  btn::TrainConfig cfg = btn::load_train_config(config_path);
  btn::Splits splits = load_and_split(data_dir, cfg.backbone.in_height, cfg.backbone.in_width, split_seed);
  std::vector<btn::real> as;
  for (double a : alphas) as.push_back(static_cast<btn::real>(a));
  auto table = btn::alpha_sweep(splits, cfg, as, out_dir);
  for (const auto& row : table) {
    std::printf("alpha %.3f: val_accuracy %.4f\n", static_cast<double>(row.alpha),
                static_cast<double>(row.val_accuracy));
  }
}

int cmd_gradcheck(int seed, int trials) {
  auto results = btn::run_gradient_checks(seed, trials);
  for (const auto& r : results) {
    std::printf("%-26s max rel err %.3e  %s\n", r.name.c_str(), static_cast<double>(r.max_rel_error),
                r.pass ? "PASS" : "FAIL");
  }
  return btn::all_gradient_checks_passed(results) ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilinear-pooling + constrained-triplet metric learning"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic PPM dataset");
  int s_classes = 8, s_per_class = 100, s_seed = 0, s_split_seed = 0;
  double s_noise = 0.08;
  std::string s_size = "32x32", s_out;
  synth->add_option("--classes", s_classes, "number of classes")->check(CLI::Range(2, 1024));
  synth->add_option("--per-class", s_per_class, "images per class")->check(CLI::PositiveNumber);
  synth->add_option("--size", s_size, "image size HxW");
  synth->add_option("--seed", s_seed, "generator seed");
  synth->add_option("--noise", s_noise, "additive pixel noise amplitude");
  synth->add_option("--split-seed", s_split_seed, "seed for the manifest split");
  synth->add_option("--out", s_out, "output directory")->required();

  auto* ingest = app.add_subcommand("ingest", "index a class-per-directory dataset");
  std::string i_data, i_size = "32x32", i_out;
  int i_split_seed = 0;
  ingest->add_option("--data", i_data, "dataset root directory")->required();
  ingest->add_option("--size", i_size, "target image size HxW");
  ingest->add_option("--split-seed", i_split_seed, "split seed");
  ingest->add_option("--out", i_out, "manifest CSV path")->required();

  auto* train = app.add_subcommand("train", "train a model");
  std::string t_data, t_config, t_out, t_resume;
  int t_split_seed = 0;
  train->add_option("--data", t_data, "dataset root directory")->required();
  train->add_option("--config", t_config, "training config file")->required();
  train->add_option("--out", t_out, "checkpoint output directory")->required();
  train->add_option("--resume", t_resume, "checkpoint to resume from");
  train->add_option("--split-seed", t_split_seed, "split seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string e_ckpt, e_data, e_out, e_history;
  int e_split_seed = 0, e_pairs = 600, e_folds = 10, e_pair_seed = 1;
  double e_same = 0.6;
  eval->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  eval->add_option("--data", e_data, "dataset root directory")->required();
  eval->add_option("--out", e_out, "report output directory")->required();
  eval->add_option("--split-seed", e_split_seed, "split seed");
  eval->add_option("--pairs", e_pairs, "pair count for verification");
  eval->add_option("--folds", e_folds, "folds for threshold selection");
  eval->add_option("--same-fraction", e_same, "fraction of same-class pairs");
  eval->add_option("--pair-seed", e_pair_seed, "pair sampling seed");
  eval->add_option("--history", e_history, "history.csv to plot trends from");

  auto* pairs = app.add_subcommand("pairs", "pair verification on the validation split");
  std::string p_ckpt, p_data, p_out;
  int p_split_seed = 0, p_count = 600, p_folds = 10, p_seed = 1;
  double p_same = 0.6;
  pairs->add_option("--checkpoint", p_ckpt, "checkpoint file")->required();
  pairs->add_option("--data", p_data, "dataset root directory")->required();
  pairs->add_option("--out", p_out, "output directory")->required();
  pairs->add_option("--split-seed", p_split_seed, "split seed");
  pairs->add_option("--count", p_count, "number of pairs")->check(CLI::PositiveNumber);
  pairs->add_option("--folds", p_folds, "fold count")->check(CLI::Range(2, 1000));
  pairs->add_option("--same-fraction", p_same, "fraction of same-class pairs");
  pairs->add_option("--seed", p_seed, "pair sampling seed");

  auto* sweep = app.add_subcommand("sweep-alpha", "train once per alpha and tabulate accuracy");
  std::string w_data, w_config, w_out;
  std::vector<double> w_alphas;
  int w_split_seed = 0;
  sweep->add_option("--data", w_data, "dataset root directory")->required();
  sweep->add_option("--config", w_config, "training config file")->required();
  sweep->add_option("--out", w_out, "output directory")->required();
  sweep->add_option("--alphas", w_alphas, "alpha values in [0,1]")->required()->delimiter(',');
  sweep->add_option("--split-seed", w_split_seed, "split seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference self-check");
  int g_seed = 1, g_trials = 20;
  gradcheck->add_option("--seed", g_seed, "random seed");
  gradcheck->add_option("--trials", g_trials, "trials per operation")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // every malformed invocation is a usage error
  }

  try {
    if (synth->parsed()) cmd_synth(s_out, s_classes, s_per_class, s_size, s_seed, s_noise, s_split_seed);
    else if (ingest->parsed()) cmd_ingest(i_data, i_size, i_split_seed, i_out);
    else if (train->parsed()) cmd_train(t_data, t_config, t_out, t_resume, t_split_seed);
    else if (eval->parsed()) cmd_eval(e_ckpt, e_data, e_out, e_split_seed, e_pairs, e_folds, e_same, e_pair_seed, e_history);
    else if (pairs->parsed()) cmd_pairs(p_ckpt, p_data, p_out, p_split_seed, p_count, p_folds, p_same, p_seed);
    else if (sweep->parsed()) cmd_sweep_alpha(w_data, w_config, w_out, w_alphas, w_split_seed);
    else if (gradcheck->parsed()) return cmd_gradcheck(g_seed, g_trials);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
