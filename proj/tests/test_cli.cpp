#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "btn/csv.hpp"

namespace fs = std::filesystem;

namespace {

#ifndef BTN_CLI_PATH
#error "BTN_CLI_PATH must point at the btn executable"
#endif

const std::string kCli = BTN_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct Workspace {
  fs::path root;
  Workspace() : root(fs::temp_directory_path() / "btn_cli_ws") {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string p(const std::string& rel) const { return (root / rel).string(); }
};

void write_config(const fs::path& path, int epochs, int phase1) {
  std::ofstream out(path);
  out << "input_channels = 3\ninput_height = 16\ninput_width = 16\n"
      << "conv_blocks = 6,3,1,2;8,3,1,2\nembedding_dim = 16\ndropout_rate = 0.25\n"
      << "shared_streams = 1\npool_mode = sum\nbatch_classes = 2\nbatch_samples = 4\n"
      << "strategy = semi_hard\nstrategy_schedule = 1\noversample = 1\n"
      << "mu1 = 0.5\nmu2 = 0.5\nb = 1.0\nalpha_t = 0.55\n"
      << "epochs = " << epochs << "\nphase1_epochs = " << phase1 << "\n"
      << "learning_rate = 0.05\nphase1_learning_rate = 0.001\nseed = 7\n"
      << "similarity_momentum = 0.9\nbeta = 0\ngrad_clip_norm = 0\nsteps_per_epoch = 0\n";
}

}  // namespace

TEST_CASE("synth is deterministic and idempotent") {
  Workspace ws;
  CHECK(run("synth --classes 2 --per-class 6 --size 12x12 --seed 3 --out " + ws.p("data")) == 0);
  const std::string img = slurp(ws.root / "data" / "class_0" / "img_0000.ppm");
  const std::string manifest = slurp(ws.root / "data" / "manifest.csv");
  CHECK(!img.empty());

  // rerun with identical flags overwrites with identical bytes
  CHECK(run("synth --classes 2 --per-class 6 --size 12x12 --seed 3 --out " + ws.p("data")) == 0);
  CHECK(slurp(ws.root / "data" / "class_0" / "img_0000.ppm") == img);
  CHECK(slurp(ws.root / "data" / "manifest.csv") == manifest);

  // a different seed changes the pixels
  CHECK(run("synth --classes 2 --per-class 6 --size 12x12 --seed 4 --out " + ws.p("data2")) == 0);
  CHECK(slurp(ws.root / "data2" / "class_0" / "img_0000.ppm") != img);
}

TEST_CASE("usage errors exit with code 1") {
  Workspace ws;
  CHECK(run("synth --classes 1 --per-class 5 --out " + ws.p("bad")) == 1);
  CHECK(run("synth") == 1);               // missing required --out
  CHECK(run("train --data missing") == 1);  // missing required flags
  CHECK(run("unknown-subcommand") == 1);
}

TEST_CASE("runtime failures exit with code 2") {
  Workspace ws;
  write_config(ws.root / "config.txt", 1, 0);
  CHECK(run("train --data " + ws.p("nonexistent") + " --config " + ws.p("config.txt") + " --out " + ws.p("run")) == 2);
}

TEST_CASE("train, eval, pairs and sweep-alpha produce their artifacts") {
  Workspace ws;
  REQUIRE(run("synth --classes 3 --per-class 40 --size 16x16 --seed 11 --out " + ws.p("data")) == 0);
  write_config(ws.root / "config.txt", 2, 1);

  const auto t0 = std::chrono::steady_clock::now();
  CHECK(run("train --data " + ws.p("data") + " --config " + ws.p("config.txt") + " --out " + ws.p("run")) == 0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(seconds < 60.0);
  for (const char* f : {"final.btn", "epoch_0.btn", "epoch_1.btn", "history.csv", "history.svg"}) {
    CHECK(fs::exists(ws.root / "run" / f));
  }
  btn::CsvTable history = btn::read_csv(ws.p("run/history.csv"));
  CHECK(history.rows.size() == 2);

  // resume continues to the requested epoch budget
  write_config(ws.root / "config4.txt", 4, 1);
  CHECK(run("train --data " + ws.p("data") + " --config " + ws.p("config4.txt") + " --out " + ws.p("run4") +
            " --resume " + ws.p("run/final.btn")) == 0);
  btn::CsvTable resumed = btn::read_csv(ws.p("run4/history.csv"));
  CHECK(resumed.rows.size() == 4);

  CHECK(run("eval --checkpoint " + ws.p("run/final.btn") + " --data " + ws.p("data") + " --out " + ws.p("report") +
            " --pairs 40 --folds 4 --history " + ws.p("run/history.csv")) == 0);
  for (const char* f : {"report.csv", "confusion.csv", "pairs.csv", "roc.svg", "confusion.svg", "history.svg"}) {
    CHECK(fs::exists(ws.root / "report" / f));
  }

  CHECK(run("pairs --checkpoint " + ws.p("run/final.btn") + " --data " + ws.p("data") + " --count 30 --folds 3 --out " +
            ws.p("pairsout")) == 0);
  btn::CsvTable pairs = btn::read_csv(ws.p("pairsout/pairs.csv"));
  CHECK(pairs.rows.size() == 30);

  CHECK(run("sweep-alpha --data " + ws.p("data") + " --config " + ws.p("config.txt") + " --alphas 0.25,0.75 --out " +
            ws.p("sweep")) == 0);
  CHECK(fs::exists(ws.root / "sweep" / "alpha_sweep.csv"));
  CHECK(fs::exists(ws.root / "sweep" / "alpha_sweep.svg"));
}

TEST_CASE("gradcheck passes on a fresh random network") {
  CHECK(run("gradcheck --trials 4 --seed 3") == 0);
}
