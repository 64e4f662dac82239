#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SCFC_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe))
    r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  return line;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

const char* kTinyCohort =
    " --subjects 8 --rois 12 --modules 2 --hidden-period 1.0"
    " --hidden-burn-in 0.25 --seed 3";
const char* kTinyKuramoto = " --period 1.5 --burn-in 0.3";
const char* kTinyRefiner =
    " --refiner-epochs 2 --refiner-batch-size 4 --refiner-base-channels 4"
    " --refiner-depth 2";
const char* kTinyFusion =
    " --epochs 8 --batch-size 8 --gcn-layers 2 --gcn-channels 8"
    " --embed-dim 4 --mlp-hidden 8 --k 3";

}  // namespace

TEST_CASE("usage and help") {
  CmdResult none = run_cli("");
  CHECK(none.code == 1);
  CHECK(none.out.find("Usage") != std::string::npos);

  CmdResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("pipeline") != std::string::npos);
  CHECK(help.out.find("gen-synth") != std::string::npos);

  CmdResult sub_help = run_cli("simulate --help");
  CHECK(sub_help.code == 0);
  CHECK(sub_help.out.find("--manifest") != std::string::npos);
  CHECK(sub_help.out.find("--config") != std::string::npos);
}

TEST_CASE("usage error exit codes") {
  CHECK(run_cli("no-such-command").code == 1);
  CHECK(run_cli("gen-synth --bogus-flag 1").code == 1);
  CHECK(run_cli("gen-synth").code == 1);  // missing required --out-dir
  CHECK(run_cli("gen-synth --out-dir x --config /no/such/file.conf").code == 1);
  CHECK(run_cli("simulate --manifest missing.csv --out-dir x").code == 2);
}

TEST_CASE("snapshot reproduces a run and flags beat the file") {
  testutil::TempDir dir;
  const std::string base = dir.path().string();

  CmdResult gen = run_cli("gen-synth --out-dir " + base + "/a" + kTinyCohort);
  REQUIRE(gen.code == 0);
  CHECK(fs::exists(dir.path() / "a" / "manifest.csv"));
  CHECK(fs::exists(dir.path() / "a" / "atlas.csv"));
  CHECK(fs::exists(dir.path() / "a" / "ground_truth.txt"));
  const fs::path snapshot = dir.path() / "a" / "resolved_config.txt";
  REQUIRE(fs::exists(snapshot));
  const std::string snap_text = file_bytes(snapshot);
  CHECK(snap_text.find("subjects = 8\n") != std::string::npos);
  CHECK(snap_text.find("seed = 3\n") != std::string::npos);

  // the snapshot alone reproduces the cohort byte for byte
  CmdResult rerun = run_cli("gen-synth --config " + snapshot.string() +
                            " --out-dir " + base + "/b");
  REQUIRE(rerun.code == 0);
  for (const char* name : {"manifest.csv", "sub000_sc.csv", "sub000_fc.csv",
                           "sub007_sc.csv", "atlas.csv"})
    CHECK(file_bytes(dir.path() / "a" / name) ==
          file_bytes(dir.path() / "b" / name));

  // a flag overrides the same key in the file
  CmdResult flagged = run_cli("gen-synth --config " + snapshot.string() +
                              " --out-dir " + base + "/c --subjects 4");
  REQUIRE(flagged.code == 0);
  CHECK(count_lines(dir.path() / "c" / "manifest.csv") ==
        count_lines(dir.path() / "a" / "manifest.csv") - 4);

  // unknown keys in the file are rejected as usage errors
  std::ofstream(dir.path() / "bad.conf") << "no-such-option = 1\n";
  CHECK(run_cli("gen-synth --out-dir " + base + "/d --config " + base +
                "/bad.conf")
            .code == 1);
}

TEST_CASE("end to end command chain") {
  testutil::TempDir dir;
  const std::string base = dir.path().string();
  const std::string manifest = base + "/cohort/manifest.csv";

  REQUIRE(run_cli("gen-synth --out-dir " + base + "/cohort" + kTinyCohort)
              .code == 0);

  CmdResult sim = run_cli("simulate --manifest " + manifest + " --out-dir " +
                          base + "/sims" + kTinyKuramoto +
                          " --seed 3 --threads 4");
  REQUIRE(sim.code == 0);
  CHECK(first_line(dir.path() / "sims" / "simulation_report.txt") ==
        "subject_id,terminal_order_parameter");
  CHECK(count_lines(dir.path() / "sims" / "simulation_report.txt") == 9);
  CHECK(fs::exists(dir.path() / "sims" / "sub007_simfc.csv"));

  REQUIRE(run_cli("train-refiner --manifest " + manifest + " --sims-dir " +
                  base + "/sims --out " + base +
                  "/models/refiner.ckpt --epochs 2 --batch-size 4"
                  " --base-channels 4 --depth 2 --seed 3 --threads 4")
              .code == 0);
  REQUIRE(fs::exists(dir.path() / "models" / "refiner.ckpt"));

  REQUIRE(run_cli("predict-fc --checkpoint " + base +
                  "/models/refiner.ckpt --manifest " + manifest +
                  " --sims-dir " + base + "/sims --out-dir " + base + "/pred")
              .code == 0);
  REQUIRE(fs::exists(dir.path() / "pred" / "sub000_predfc.csv"));

  CmdResult graphs =
      run_cli("build-graphs --manifest " + manifest + " --fc-dir " + base +
              "/pred --out-dir " + base + "/graphs --k 3");
  REQUIRE(graphs.code == 0);
  CHECK(first_line(dir.path() / "graphs" / "sub000_structural_edges.csv") ==
        "src,dst,weight");
  CHECK(first_line(dir.path() / "graphs" / "sub000_functional_features.csv") ==
        "deg,nbr_mean,nbr_std,nbr_min,nbr_max");
  // 12 nodes -> 13 lines with the header
  CHECK(count_lines(dir.path() / "graphs" / "sub003_structural_features.csv") ==
        13);

  REQUIRE(run_cli("train-fusion --manifest " + manifest + " --pred-fc-dir " +
                  base + "/pred --out " + base + "/models/fusion.ckpt" +
                  kTinyFusion + " --seed 3 --threads 4")
              .code == 0);

  // classify agrees between a supplied FC file and the simulate+refine path
  CmdResult from_file =
      run_cli("classify --checkpoint " + base + "/models/fusion.ckpt --sc " +
              base + "/cohort/sub000_sc.csv --fc " + base +
              "/pred/sub000_predfc.csv");
  REQUIRE(from_file.code == 0);
  CHECK(from_file.out.find("probability = ") != std::string::npos);
  CHECK(from_file.out.find("label = ") != std::string::npos);
  CmdResult from_sim =
      run_cli("classify --checkpoint " + base + "/models/fusion.ckpt --sc " +
              base + "/cohort/sub000_sc.csv --refiner-checkpoint " + base +
              "/models/refiner.ckpt" + kTinyKuramoto + " --seed 3");
  REQUIRE(from_sim.code == 0);
  CHECK(from_file.out == from_sim.out);

  CmdResult eval =
      run_cli("evaluate --manifest " + manifest + " --out-dir " + base +
              "/eval --folds 2" + kTinyFusion + kTinyKuramoto + kTinyRefiner +
              " --seed 3 --threads 4");
  REQUIRE(eval.code == 0);
  CHECK(first_line(dir.path() / "eval" / "metrics.csv") ==
        "fold,accuracy,precision,f1");
  CHECK(file_bytes(dir.path() / "eval" / "metrics.csv").find("summary,") !=
        std::string::npos);

  // re-running evaluate from its own snapshot reproduces the metrics
  CmdResult eval2 = run_cli("evaluate --config " + base +
                            "/eval/resolved_config.txt --out-dir " + base +
                            "/eval2");
  REQUIRE(eval2.code == 0);
  CHECK(file_bytes(dir.path() / "eval" / "metrics.csv") ==
        file_bytes(dir.path() / "eval2" / "metrics.csv"));

  CmdResult expl = run_cli("explain --checkpoint " + base +
                           "/models/fusion.ckpt --manifest " + manifest +
                           " --atlas " + base + "/cohort/atlas.csv --pred-fc-dir " +
                           base + "/pred --out-dir " + base +
                           "/expl --steps 5 --threads 4");
  REQUIRE(expl.code == 0);
  for (int i = 0; i < 8; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "sub%03d_edge_importance.csv", i);
    CHECK(fs::exists(dir.path() / "expl" / name));
  }
  CHECK(first_line(dir.path() / "expl" / "sub000_edge_importance.csv") ==
        "src,dst,importance");
  CHECK(first_line(dir.path() / "expl" / "network_summary.csv") ==
        "network_a,network_b,within,n_edges,total_importance,mean_importance");
  CHECK(file_bytes(dir.path() / "expl" / "network_summary.csv").find("M0") !=
        std::string::npos);
}

TEST_CASE("evaluate k sweep emits the comparison table") {
  testutil::TempDir dir;
  const std::string base = dir.path().string();
  REQUIRE(run_cli("gen-synth --out-dir " + base + "/cohort" + kTinyCohort)
              .code == 0);
  CmdResult sweep = run_cli(
      "evaluate --manifest " + base + "/cohort/manifest.csv --out-dir " + base +
      "/sweep --folds 2 --k-sweep 3,5 --sc-only" + kTinyFusion +
      " --seed 3 --threads 4");
  REQUIRE(sweep.code == 0);
  CHECK(first_line(dir.path() / "sweep" / "k_sweep.csv") ==
        "k,accuracy_mean,accuracy_std,precision_mean,precision_std,"
        "f1_mean,f1_std");
  CHECK(count_lines(dir.path() / "sweep" / "k_sweep.csv") == 3);
  CHECK(fs::exists(dir.path() / "sweep" / "metrics_k3.csv"));
  CHECK(fs::exists(dir.path() / "sweep" / "metrics_k5.csv"));
  CHECK(run_cli("evaluate --manifest " + base +
                "/cohort/manifest.csv --out-dir " + base +
                "/sweep2 --k-sweep 3,nope")
            .code == 1);
}

TEST_CASE("pipeline is deterministic across thread counts") {
  testutil::TempDir dir;
  const std::string base = dir.path().string();
  const std::string shared =
      std::string("pipeline --subjects 8 --rois 10 --modules 2"
                  " --hidden-period 1.0 --hidden-burn-in 0.25 --folds 2") +
      kTinyKuramoto + kTinyRefiner + kTinyFusion + " --seed 3";

  CmdResult p1 = run_cli(shared + " --out-dir " + base + "/p1 --threads 1");
  REQUIRE(p1.code == 0);
  CHECK(p1.out.find("[5/5]") != std::string::npos);
  CmdResult p4 = run_cli(shared + " --out-dir " + base + "/p4 --threads 4");
  REQUIRE(p4.code == 0);

  for (const char* name :
       {"metrics.csv", "refiner.ckpt", "fusion.ckpt", "cohort/manifest.csv",
        "sims/sub000_simfc.csv", "pred_fc/sub007_predfc.csv"})
    CHECK(file_bytes(dir.path() / "p1" / name) ==
          file_bytes(dir.path() / "p4" / name));
}