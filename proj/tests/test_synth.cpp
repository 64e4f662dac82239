#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "scfc/explain.hpp"
#include "scfc/synth.hpp"
#include "test_util.hpp"

using namespace scfc;
using testutil::TempDir;

namespace {

SynthConfig quick_cfg() {
  SynthConfig cfg;
  cfg.n_subjects = 6;
  cfg.n_rois = 10;
  cfg.n_modules = 2;
  cfg.hidden_kuramoto.sim_period = 1.0;
  cfg.hidden_kuramoto.burn_in = 0.25;
  cfg.seed = 31;
  return cfg;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

// mean over every cell of the designated inter-module blocks, per class
std::pair<double, double> block_means(const SynthResult& r) {
  double sum0 = 0.0, sum1 = 0.0;
  std::size_t cnt0 = 0, cnt1 = 0;
  const auto& mod = r.truth.module_of_node;
  for (const SubjectRecord& rec : r.cohort.subjects) {
    const Mat& m = rec.sc.values();
    for (std::size_t i = 0; i < mod.size(); ++i)
      for (std::size_t j = i + 1; j < mod.size(); ++j) {
        const auto lo = std::min(mod[i], mod[j]);
        const auto hi = std::max(mod[i], mod[j]);
        bool designated = false;
        for (const auto& [a, b] : r.truth.attenuated_blocks)
          designated |= lo == a && hi == b;
        if (!designated) continue;
        if (rec.label == 0) {
          sum0 += m(i, j);
          ++cnt0;
        } else {
          sum1 += m(i, j);
          ++cnt1;
        }
      }
  }
  REQUIRE(cnt0 > 0);
  REQUIRE(cnt1 > 0);
  return {sum0 / cnt0, sum1 / cnt1};
}

}  // namespace

TEST_CASE("synth config validation") {
  SynthConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  auto rejects = [](auto mutate) {
    SynthConfig c;
    mutate(c);
    REQUIRE_ERRC(c.validate(), Errc::ConfigInvalid);
  };
  rejects([](SynthConfig& c) { c.n_subjects = 0; });
  rejects([](SynthConfig& c) { c.n_modules = 0; });
  rejects([](SynthConfig& c) { c.n_modules = c.n_rois + 1; });
  rejects([](SynthConfig& c) { c.within_density = 0.0; });
  rejects([](SynthConfig& c) { c.between_density = 1.5; });
  rejects([](SynthConfig& c) { c.within_weight_mean = -1.0; });
  rejects([](SynthConfig& c) { c.class_effect = 1.5; });
  rejects([](SynthConfig& c) { c.class_effect = -0.1; });
  rejects([](SynthConfig& c) { c.fc_noise_std = -1.0; });
  rejects([](SynthConfig& c) { c.hidden_kuramoto.dt = 0.0; });
}

TEST_CASE("module assignment and designated blocks") {
  auto mod53 = module_assignment(53, 7);
  REQUIRE(mod53.size() == 53);
  std::vector<std::size_t> counts(7, 0);
  for (std::size_t m : mod53) counts[m]++;
  CHECK(counts == std::vector<std::size_t>{8, 8, 8, 8, 7, 7, 7});
  // contiguous ranges
  for (std::size_t i = 1; i < mod53.size(); ++i)
    CHECK(mod53[i] >= mod53[i - 1]);

  auto mod10 = module_assignment(10, 2);
  std::size_t zeros = 0;
  for (std::size_t m : mod10) zeros += m == 0;
  CHECK(zeros == 5);

  CHECK(designated_blocks(7) ==
        std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {2, 3}, {4, 5}});
  CHECK(designated_blocks(2) ==
        std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}});
  CHECK(designated_blocks(1).empty());
  // the planted signal never reaches past the first six modules
  CHECK(designated_blocks(9).size() == 3);
}

TEST_CASE("generated cohort structure") {
  SynthConfig cfg = quick_cfg();
  SynthResult r = make_cohort(cfg, 4);

  REQUIRE(r.cohort.size() == 6);
  CHECK(r.cohort.n_rois == 10);
  CHECK(r.cohort.labels() == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(r.cohort.subjects[0].subject_id == "sub000");
  CHECK(r.cohort.subjects[5].subject_id == "sub005");
  CHECK(r.truth.class_effect == cfg.class_effect);
  CHECK(r.truth.module_of_node.size() == 10);

  for (const SubjectRecord& rec : r.cohort.subjects) {
    const Mat& sc = rec.sc.values();
    CHECK(rec.sc.kind() == MatrixKind::Structural);
    REQUIRE(sc.rows() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(sc(i, i) == 0.0);
      for (std::size_t j = 0; j < 10; ++j) {
        CHECK(sc(i, j) == sc(j, i));
        CHECK(sc(i, j) >= 0.0);
        CHECK(sc(i, j) == std::floor(sc(i, j)));  // integer fiber counts
      }
    }
    REQUIRE(rec.fc_empirical.has_value());
    const Mat& fc = rec.fc_empirical->values();
    CHECK(rec.fc_empirical->kind() == MatrixKind::FunctionalEmpirical);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(fc(i, i) == 1.0);
      for (std::size_t j = 0; j < 10; ++j) {
        CHECK(fc(i, j) >= -1.0);
        CHECK(fc(i, j) <= 1.0);
      }
    }
  }

  // noise actually perturbs the hidden-dynamics correlations
  ConnMatrix clean = subject_fc(r.cohort.subjects[0].sc, cfg.hidden_kuramoto,
                                derive_seed(cfg.seed, "synth_hidden", 0));
  bool differs = false;
  const Mat& fc0 = r.cohort.subjects[0].fc_empirical->values();
  for (std::size_t i = 0; i < 10 && !differs; ++i)
    for (std::size_t j = i + 1; j < 10; ++j)
      if (fc0(i, j) != clean.values()(i, j)) {
        differs = true;
        break;
      }
  CHECK(differs);
}

TEST_CASE("on-disk layout round trips") {
  TempDir dir;
  SynthConfig cfg = quick_cfg();
  SynthResult r = gen_cohort(cfg, dir.path() / "cohort", 4);

  const auto base = dir.path() / "cohort";
  CHECK(std::filesystem::exists(base / "manifest.csv"));
  CHECK(std::filesystem::exists(base / "atlas.csv"));
  CHECK(std::filesystem::exists(base / "ground_truth.txt"));
  CHECK(std::filesystem::exists(base / "sub000_sc.csv"));
  CHECK(std::filesystem::exists(base / "sub005_fc.csv"));
  CHECK(r.manifest_path == base / "manifest.csv");

  Cohort loaded = load_cohort(r.manifest_path, cfg.seed);
  REQUIRE(loaded.size() == r.cohort.size());
  CHECK(loaded.n_rois == r.cohort.n_rois);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded.subjects[i].subject_id == r.cohort.subjects[i].subject_id);
    CHECK(loaded.subjects[i].label == r.cohort.subjects[i].label);
    const Mat& a = loaded.subjects[i].sc.values();
    const Mat& b = r.cohort.subjects[i].sc.values();
    for (std::size_t x = 0; x < a.rows(); ++x)
      for (std::size_t y = 0; y < a.cols(); ++y) CHECK(a(x, y) == b(x, y));
    REQUIRE(loaded.subjects[i].fc_empirical.has_value());
    const Mat& fa = loaded.subjects[i].fc_empirical->values();
    const Mat& fb = r.cohort.subjects[i].fc_empirical->values();
    for (std::size_t x = 0; x < fa.rows(); ++x)
      for (std::size_t y = 0; y < fa.cols(); ++y) CHECK(fa(x, y) == fb(x, y));
  }

  NetworkAtlas atlas = load_atlas(base / "atlas.csv");
  REQUIRE(atlas.node_network.size() == cfg.n_rois);
  for (std::size_t v = 0; v < cfg.n_rois; ++v)
    CHECK(atlas.node_network[v] ==
          "M" + std::to_string(r.truth.module_of_node[v]));

  const std::string truth_text = file_bytes(base / "ground_truth.txt");
  CHECK(truth_text.find("class_effect = 0.3") != std::string::npos);
  CHECK(truth_text.find("attenuated_blocks = 0-1") != std::string::npos);
  CHECK(truth_text.find("hidden_g = 5.2") != std::string::npos);
}

TEST_CASE("generation is deterministic") {
  TempDir dir;
  SynthConfig cfg = quick_cfg();
  cfg.n_subjects = 4;
  gen_cohort(cfg, dir.path() / "a", 1);
  gen_cohort(cfg, dir.path() / "b", 4);

  for (const char* name :
       {"manifest.csv", "atlas.csv", "ground_truth.txt", "sub000_sc.csv",
        "sub000_fc.csv", "sub003_sc.csv", "sub003_fc.csv"})
    CHECK(file_bytes(dir.path() / "a" / name) ==
          file_bytes(dir.path() / "b" / name));

  SynthConfig reseeded = cfg;
  reseeded.seed = cfg.seed + 1;
  gen_cohort(reseeded, dir.path() / "c", 4);
  CHECK(file_bytes(dir.path() / "a" / "sub000_sc.csv") !=
        file_bytes(dir.path() / "c" / "sub000_sc.csv"));
}

TEST_CASE("class effect attenuates the designated blocks") {
  SynthConfig cfg;
  cfg.n_subjects = 40;
  cfg.n_rois = 20;
  cfg.n_modules = 2;
  cfg.between_density = 0.5;
  cfg.class_effect = 0.4;
  cfg.hidden_kuramoto.sim_period = 1.0;
  cfg.hidden_kuramoto.burn_in = 0.25;
  cfg.seed = 7;

  SynthResult r = make_cohort(cfg, 4);
  auto [mean0, mean1] = block_means(r);
  CHECK(mean1 < mean0);
  const double ratio = mean1 / mean0;
  CHECK(std::abs(ratio - cfg.class_effect) <= 0.1 * cfg.class_effect);

  SynthConfig null_cfg = cfg;
  null_cfg.class_effect = 1.0;
  auto [n0, n1] = block_means(make_cohort(null_cfg, 4));
  CHECK(std::abs(n1 / n0 - 1.0) <= 0.1);
}

TEST_CASE("unwritable output directory reports an io error") {
  TempDir dir;
  const auto blocker = dir.path() / "occupied";
  {
    std::ofstream f(blocker);
    f << "x";
  }
  SynthConfig cfg = quick_cfg();
  cfg.n_subjects = 2;
  REQUIRE_ERRC(gen_cohort(cfg, blocker / "sub", 1), Errc::Io);
}