#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "cfan/commands.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cfan;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(CFAN_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("cfan_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
  static inline int counter_ = 0;
};

const char* kSmallConfig =
    "n_subjects = 12\n"
    "dim = 6\n"
    "map_dim = 10\n"
    "quality_latent_dim = 6\n"
    "instances_per_subject = 13\n"
    "subjects_per_batch = 4\n"
    "steps = 25\n"
    "unmated_subjects = 3\n"
    "seed = 3\n";

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("cli usage errors") {
  CHECK(run("").exit_code != 0);
  CHECK(run("no-such-command").exit_code != 0);
  CHECK(run("aggregate --data x").exit_code != 0);
  const auto r = run("analyze-corr --data /nonexistent/file.bin");
  CHECK(r.exit_code == 1);
  CHECK(r.output.rfind("cfan: error: ", 0) == 0);
  CHECK(count_lines(r.output) == 1);
}

TEST_CASE("gen-data") {
  TempDir dir;
  io::write_text_file(dir / "empty.cfg", "n_subjects = 0\n");
  const auto empty = run("gen-data --config " + dir / "empty.cfg" + " --out " + dir / "x.bin");
  CHECK(empty.exit_code == 1);
  CHECK(empty.output == "cfan: error: empty dataset\n");
  CHECK_FALSE(fs::exists(dir / "x.bin"));

  io::write_text_file(dir / "bad.cfg", "dim = 4\nsteps = 2\nbatch = 3\n");
  const auto bad = run("gen-data --config " + dir / "bad.cfg" + " --out " + dir / "x.bin");
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("line 3") != std::string::npos);
  CHECK(count_lines(bad.output) == 1);

  io::write_text_file(dir / "small.cfg", kSmallConfig);
  const auto ok = run("gen-data --config " + dir / "small.cfg" + " --out " + dir / "d.bin");
  CHECK(ok.exit_code == 0);
  const auto f = io::load_feature_file(dir / "d.bin");
  CHECK(f.map_dim == 10);
  CHECK(f.dim == 6);
  CHECK(f.records.size() == 12 * 13);

  // --seed overrides the configured seed
  run("gen-data --config " + dir / "small.cfg" + " --seed 4 --out " + dir / "d4.bin");
  CHECK(io::read_text_file(dir / "d4.bin") != io::read_text_file(dir / "d.bin"));
}

TEST_CASE("train, aggregate and evaluate end to end") {
  TempDir dir;
  io::write_text_file(dir / "small.cfg", kSmallConfig);
  REQUIRE(run("gen-data --config " + dir / "small.cfg" + " --out " + dir / "d.bin").exit_code == 0);

  const auto t1 = run("train --config " + dir / "small.cfg" + " --data " + dir / "d.bin" + " --out " + dir / "m1.bin");
  const auto t2 = run("train --config " + dir / "small.cfg" + " --data " + dir / "d.bin" + " --out " + dir / "m2.bin" +
                      " --log " + dir / "log.txt");
  REQUIRE(t1.exit_code == 0);
  REQUIRE(t2.exit_code == 0);
  CHECK(count_lines(t1.output) == 25);
  CHECK(t1.output.rfind("step 0 loss ", 0) == 0);
  CHECK(io::read_text_file(dir / "log.txt") == t1.output);
  CHECK(io::read_text_file(dir / "m1.bin") == io::read_text_file(dir / "m2.bin"));

  const auto avg_model = run("train --config " + dir / "small.cfg" + " --mode average --data " + dir / "d.bin" +
                             " --out " + dir / "m.bin");
  CHECK(avg_model.exit_code != 0);

  CHECK(run("aggregate --data " + dir / "d.bin" + " --mode average --out " + dir / "avg.bin").exit_code == 0);
  const auto no_model = run("aggregate --data " + dir / "d.bin" + " --mode cfan --out " + dir / "c.bin");
  CHECK(no_model.exit_code == 1);
  CHECK(no_model.output.find("--model") != std::string::npos);
  REQUIRE(run("aggregate --data " + dir / "d.bin" + " --mode cfan --model " + dir / "m1.bin" + " --out " +
              dir / "cfan.bin").exit_code == 0);

  const auto reps = io::load_rep_file(dir / "cfan.bin");
  CHECK(reps.mode == PoolingMode::cfan);
  CHECK(reps.dim == 6);

  // CLI report equals the in-process command and direct library calls
  const auto cli = run("evaluate --reps " + dir / "cfan.bin" + " --curves " + dir / "c");
  REQUIRE(cli.exit_code == 0);
  cmd::EvaluateOptions opts;
  opts.reps_path = dir / "cfan.bin";
  CHECK(cli.output == cmd::evaluate(opts));
  CHECK(fs::exists(dir / "c_cmc.csv"));

  const auto [gallery, probes] = cmd::split_gallery(reps, "g");
  CHECK(gallery.subject_ids.size() == 9);
  const Truth truth = match_probes(probes, gallery);
  Truth mated;
  Matrix all = score_matrix(probes.reps, gallery.reps);
  std::vector<std::size_t> rows;
  for (std::size_t p = 0; p < truth.size(); ++p)
    if (truth[p] != kUnmated) {
      mated.push_back(truth[p]);
      rows.push_back(p);
    }
  Matrix ms(rows.size(), all.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t g = 0; g < all.cols(); ++g) ms(k, g) = all(rows[k], g);
  EvalReport expected;
  expected.cmc = closed_set_ir(ms, mated);
  expected.tpir = open_set_tpir(all, truth);
  CHECK(cli.output == format_report(expected));

  const auto out = run("evaluate --reps " + dir / "cfan.bin" + " --out " + dir / "report.txt");
  CHECK(out.output.empty());
  CHECK(io::read_text_file(dir / "report.txt") == cli.output);
}

TEST_CASE("aggregate: manifest empties and constant head") {
  TempDir dir;
  io::write_text_file(dir / "small.cfg", kSmallConfig);
  REQUIRE(run("gen-data --config " + dir / "small.cfg" + " --out " + dir / "d.bin").exit_code == 0);

  io::write_text_file(dir / "manifest.txt", "s000001 g\nghost g\ns000002 p1\n");
  REQUIRE(run("aggregate --data " + dir / "d.bin" + " --mode average --manifest " + dir / "manifest.txt" + " --out " +
              dir / "m.bin").exit_code == 0);
  const auto m = io::load_rep_file(dir / "m.bin");
  REQUIRE(m.records.size() == 3);
  CHECK(m.records[1].subject_id == "ghost");
  CHECK(m.records[1].n_instances == 0);
  CHECK(m.records[1].vector == Vector(6, 0.0));
  CHECK(m.records[2].n_instances == 5);

  // an empty probe whose subject sits at gallery index 0 is still a miss
  io::write_text_file(dir / "empty_probe.txt", "s000000 g\ns000001 g\ns000000 p9\n");
  REQUIRE(run("aggregate --data " + dir / "d.bin" + " --mode average --manifest " + dir / "empty_probe.txt" +
              " --out " + dir / "e.bin").exit_code == 0);
  const auto e = run("evaluate --reps " + dir / "e.bin" + " --ranks 1 2");
  REQUIRE(e.exit_code == 0);
  CHECK(e.output == "metric=ir target=1 value=0 threshold=nan\nmetric=ir target=2 value=0 threshold=nan\n");

  // a head whose output ignores its input weights every instance equally
  std::mt19937_64 rng(1);
  auto head = QualityHead::initialize(10, 6, QualityMode::component_wise, rng);
  for (auto& w : head.fc.weight.data()) w = 0.0;
  head.fc.bias = testing::random_vector(6, rng);
  io::save_quality_head(dir / "const.bin", head);
  REQUIRE(run("aggregate --data " + dir / "d.bin" + " --mode cfan --model " + dir / "const.bin" + " --out " +
              dir / "c.bin").exit_code == 0);
  REQUIRE(run("aggregate --data " + dir / "d.bin" + " --mode average --out " + dir / "a.bin").exit_code == 0);
  const auto c = io::load_rep_file(dir / "c.bin");
  const auto a = io::load_rep_file(dir / "a.bin");
  REQUIRE(c.records.size() == a.records.size());
  for (std::size_t k = 0; k < c.records.size(); ++k) {
    CHECK(c.records[k].subject_id == a.records[k].subject_id);
    CHECK(testing::max_abs_diff(c.records[k].vector, a.records[k].vector) <= 1e-12);
  }

  // mismatched model dims are rejected
  auto wrong = QualityHead::initialize(4, 6, QualityMode::component_wise, rng);
  io::save_quality_head(dir / "wrong.bin", wrong);
  CHECK(run("aggregate --data " + dir / "d.bin" + " --mode cfan --model " + dir / "wrong.bin" + " --out " +
            dir / "w.bin").exit_code == 1);
}

TEST_CASE("evaluate: pair protocol") {
  TempDir dir;
  io::RepFile reps;
  reps.dim = 2;
  for (int k = 0; k < 20; ++k) {
    const double angle = 0.05 * k;
    reps.records.push_back({"s" + std::to_string(k), "a", 1, {std::cos(angle), std::sin(angle)}});
    reps.records.push_back({"s" + std::to_string(k), "b", 1, {std::cos(angle + 0.01), std::sin(angle + 0.01)}});
  }
  io::save_rep_file(dir / "r.bin", reps);
  std::string pairs;
  for (int k = 0; k < 20; ++k) {
    pairs += "s" + std::to_string(k) + " a s" + std::to_string(k) + " b 1\n";
    pairs += "s" + std::to_string(k) + " a s" + std::to_string((k + 10) % 20) + " b 0\n";
  }
  io::write_text_file(dir / "pairs.txt", pairs);
  const auto r = run("evaluate --reps " + dir / "r.bin" + " --pairs " + dir / "pairs.txt" + " --curves " + dir / "v");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("metric=pair_accuracy_mean target=10 value=1 threshold=nan\n") != std::string::npos);
  CHECK(r.output.find("metric=pair_accuracy_std target=10 value=0 threshold=nan\n") != std::string::npos);
  CHECK(r.output.find("metric=tar target=0.001 value=1 ") != std::string::npos);
  CHECK(fs::exists(dir / "v_roc.csv"));

  io::write_text_file(dir / "bad.txt", "s0 a nobody b 1\n");
  const auto bad = run("evaluate --reps " + dir / "r.bin" + " --pairs " + dir / "bad.txt");
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("nobody") != std::string::npos);
}

TEST_CASE("analyze-corr") {
  TempDir dir;
  io::write_text_file(dir / "d1.cfg", "n_subjects = 5\ndim = 1\nmap_dim = 2\nquality_latent_dim = 1\n");
  REQUIRE(run("gen-data --config " + dir / "d1.cfg" + " --out " + dir / "d1.bin").exit_code == 0);
  CHECK(run("analyze-corr --data " + dir / "d1.bin").output == "1\n");

  io::write_text_file(dir / "ind.cfg",
                      "n_subjects = 1000\ndim = 4\nmap_dim = 8\nquality_latent_dim = 4\ninstances_per_subject = 10\n");
  REQUIRE(run("gen-data --config " + dir / "ind.cfg" + " --out " + dir / "ind.bin").exit_code == 0);
  const auto out = run("analyze-corr --data " + dir / "ind.bin" + " --out " + dir / "corr.csv");
  CHECK(out.exit_code == 0);
  std::istringstream csv(io::read_text_file(dir / "corr.csv"));
  std::string line;
  std::size_t row = 0;
  while (std::getline(csv, line)) {
    std::istringstream cells(line);
    std::string cell;
    for (std::size_t col = 0; std::getline(cells, cell, ','); ++col) {
      const double v = std::stod(cell);
      if (col == row) CHECK(v == 1.0);
      else CHECK(v < 0.05);
    }
    ++row;
  }
  CHECK(row == 4);
}
