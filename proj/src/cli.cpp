#include "scfc/cli.hpp"

#include <CLI11.hpp>

#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "scfc/connectome.hpp"
#include "scfc/explain.hpp"
#include "scfc/fusionnet.hpp"
#include "scfc/kuramoto.hpp"
#include "scfc/parallel.hpp"
#include "scfc/refiner.hpp"
#include "scfc/synth.hpp"

namespace fs = std::filesystem;

namespace scfc::cli {
namespace {

constexpr const char* kSimSuffix = "_simfc.csv";
constexpr const char* kPredSuffix = "_predfc.csv";
constexpr const char* kSnapshotName = "resolved_config.txt";

std::string quote_string(const std::string& s) {
  if (!s.empty() && s.find_first_of(" \t\"\\#=") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

template <class T>
std::string fmt_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  } else if constexpr (std::is_integral_v<T>) {
    return std::to_string(v);
  } else {
    return quote_string(v);
  }
}

// Resolved settings of one invocation, written as the `key = value` file the
// same subcommand accepts back through --config.
class Snapshot {
 public:
  template <class T>
  void set(const std::string& key, const T& v) {
    kv_[key] = fmt_value(v);
  }

  std::string text() const {
    std::string out;
    for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    fail(Errc::Io, "cannot create directory " + dir.string());
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out.good()) fail(Errc::Io, "cannot write " + path.string());
}

// Declares options on a subcommand while remembering how to render each one's
// final value, so the snapshot always matches the accepted flag names.
struct SubCtx {
  CLI::App* sub = nullptr;
  std::string config_file;
  std::vector<std::function<void(Snapshot&)>> recorders;

  template <class T>
  CLI::Option* opt(const std::string& flag, T& var, const std::string& desc) {
    CLI::Option* o = sub->add_option(flag, var, desc);
    record(flag, var);
    return o;
  }

  CLI::Option* flag(const std::string& name, bool& var,
                    const std::string& desc) {
    CLI::Option* o = sub->add_flag(name, var, desc);
    record(name, var);
    return o;
  }

  template <class T>
  void record(const std::string& flag, T& var) {
    std::string key = flag.substr(flag.find_first_not_of('-'));
    recorders.push_back([key, &var](Snapshot& s) { s.set(key, var); });
  }

  void finish() {
    sub->add_option("--config", config_file,
                    "key = value settings file; command-line flags win");
  }

  Snapshot snapshot() const {
    Snapshot s;
    for (const auto& r : recorders) r(s);
    return s;
  }

  void write_snapshot(const fs::path& dir) const {
    write_text_file(dir / kSnapshotName, snapshot().text());
  }
};

// Settings files hold one `key = value` per line (blank lines and # comments
// skipped); values may be double-quoted with \" and \\ escapes. Keys are flag
// names without the leading dashes.
std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) fail(Errc::Usage, "cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      fail(Errc::Usage, path + ":" + std::to_string(line_no) +
                            ": expected 'key = value'");
    const std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      fail(Errc::Usage,
           path + ":" + std::to_string(line_no) + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      std::string unescaped;
      for (std::size_t i = 1; i + 1 < value.size(); ++i) {
        if (value[i] == '\\' && i + 2 < value.size()) ++i;
        unescaped += value[i];
      }
      value = unescaped;
    }
    entries.emplace_back(key, value);
  }
  return entries;
}

// Merges the config file named by --config into the argument list as
// `--key=value` tokens, skipping keys already present as flags so that
// explicit flags always win.
std::vector<std::string> merge_config_args(int argc,
                                           const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);

  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_path = args[i].substr(9);
  }
  if (config_path.empty()) return args;

  auto given = [&args](const std::string& key) {
    const std::string plain = "--" + key;
    const std::string inline_prefix = plain + "=";
    for (const std::string& a : args)
      if (a == plain || a.rfind(inline_prefix, 0) == 0) return true;
    return false;
  };
  for (const auto& [key, value] : read_config_file(config_path)) {
    // an empty value can only restate an empty default, and `--key=` would
    // make the parser treat the next token as the value
    if (key == "config" || value.empty() || given(key)) continue;
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

// ---------------------------------------------------------------------------
// shared option groups

struct KuramotoFlags {
  KuramotoParams p;
  std::string sc_norm = "max";

  void attach(SubCtx& c) {
    c.opt("--g", p.g, "global coupling gain");
    c.opt("--gamma", p.gamma, "phase frustration, radians");
    c.opt("--period", p.sim_period, "simulated duration, seconds");
    c.opt("--dt", p.dt, "integration step, seconds");
    c.opt("--burn-in", p.burn_in, "discarded transient, seconds");
    c.opt("--a0", p.a0, "signal amplitude");
    c.opt("--freq-mean", p.freq_mean, "intrinsic frequency mean, Hz");
    c.opt("--freq-std", p.freq_std, "intrinsic frequency spread, Hz");
    c.opt("--sc-norm", sc_norm, "coupling matrix scaling")
        ->check(CLI::IsMember({"none", "max", "mean-degree"}));
  }

  KuramotoParams resolve() const {
    KuramotoParams out = p;
    if (sc_norm == "none")
      out.sc_normalization = ScNormalization::None;
    else if (sc_norm == "max")
      out.sc_normalization = ScNormalization::MaxScale;
    else
      out.sc_normalization = ScNormalization::MeanDegreeScale;
    return out;
  }
};

struct RefinerFlags {
  UNetConfig cfg;

  void attach(SubCtx& c, const std::string& prefix) {
    c.opt("--" + prefix + "depth", cfg.depth, "encoder depth");
    c.opt("--" + prefix + "base-channels", cfg.base_channels,
          "channels at the top level");
    c.opt("--" + prefix + "in-channels", cfg.in_channels,
          "1: simulated FC only; 2: + scaled SC");
    c.opt("--" + prefix + "lambda-w", cfg.lambda_w,
          "simulation-consistency weight");
    c.opt("--" + prefix + "lr", cfg.lr, "learning rate");
    c.opt("--" + prefix + "epochs", cfg.epochs, "training epochs");
    c.opt("--" + prefix + "batch-size", cfg.batch_size, "minibatch size");
  }
};

struct FusionFlags {
  FusionConfig cfg;

  void attach(SubCtx& c) {
    c.opt("--gcn-layers", cfg.gcn_layers, "shared encoder depth");
    c.opt("--gcn-channels", cfg.gcn_channels, "encoder width");
    c.opt("--embed-dim", cfg.embed_dim, "per-view embedding size");
    c.opt("--mlp-hidden", cfg.mlp_hidden, "projection head width");
    c.opt("--dropout", cfg.dropout_p, "dropout probability");
    c.opt("--lambda-z", cfg.lambda_z, "decorrelation penalty weight");
    c.opt("--alpha", cfg.alpha, "view-alignment loss weight");
    c.opt("--beta", cfg.beta, "cross-entropy loss weight");
    c.opt("--lr", cfg.lr, "learning rate");
    c.opt("--epochs", cfg.epochs, "training epochs");
    c.opt("--batch-size", cfg.batch_size, "minibatch size");
    c.opt("--k", cfg.k_nn, "neighbors kept per node when sparsifying");
  }
};

struct SynthFlags {
  SynthConfig cfg;

  void attach(SubCtx& c) {
    c.opt("--subjects", cfg.n_subjects, "cohort size");
    c.opt("--rois", cfg.n_rois, "nodes per connectome");
    c.opt("--modules", cfg.n_modules, "community count");
    c.opt("--within-density", cfg.within_density,
          "edge probability inside a module");
    c.opt("--between-density", cfg.between_density,
          "edge probability between modules");
    c.opt("--within-weight-mean", cfg.within_weight_mean,
          "fiber weight mean inside modules");
    c.opt("--within-weight-std", cfg.within_weight_std,
          "fiber weight spread inside modules");
    c.opt("--between-weight-mean", cfg.between_weight_mean,
          "fiber weight mean between modules");
    c.opt("--between-weight-std", cfg.between_weight_std,
          "fiber weight spread between modules");
    c.opt("--class-effect", cfg.class_effect,
          "attenuation of the designated blocks in class 1 (1 = none)");
    c.opt("--fc-noise-std", cfg.fc_noise_std,
          "observation noise on empirical FC");
    c.opt("--hidden-g", cfg.hidden_kuramoto.g, "generator coupling gain");
    c.opt("--hidden-gamma", cfg.hidden_kuramoto.gamma,
          "generator phase frustration");
    c.opt("--hidden-period", cfg.hidden_kuramoto.sim_period,
          "generator duration, seconds");
    c.opt("--hidden-dt", cfg.hidden_kuramoto.dt, "generator step, seconds");
    c.opt("--hidden-burn-in", cfg.hidden_kuramoto.burn_in,
          "generator transient, seconds");
    c.opt("--hidden-freq-mean", cfg.hidden_kuramoto.freq_mean,
          "generator frequency mean, Hz");
    c.opt("--hidden-freq-std", cfg.hidden_kuramoto.freq_std,
          "generator frequency spread, Hz");
  }
};

// ---------------------------------------------------------------------------
// shared data plumbing

std::vector<ConnMatrix> load_fc_set(const Cohort& cohort, const fs::path& dir,
                                    const std::string& suffix,
                                    MatrixKind kind) {
  std::vector<ConnMatrix> out;
  out.reserve(cohort.size());
  for (const SubjectRecord& s : cohort.subjects) {
    const fs::path p = dir / (s.subject_id + suffix);
    if (!fs::exists(p)) fail(Errc::Io, "missing matrix file " + p.string());
    out.push_back(load_matrix(p, kind));
    if (out.back().n_rois() != cohort.n_rois)
      fail(Errc::InconsistentRoiCount,
           p.string() + " has " + std::to_string(out.back().n_rois()) +
               " ROIs, cohort has " + std::to_string(cohort.n_rois));
  }
  return out;
}

void write_fc_set(const std::vector<ConnMatrix>& fcs, const Cohort& cohort,
                  const fs::path& dir, const std::string& suffix) {
  ensure_dir(dir);
  for (std::size_t i = 0; i < fcs.size(); ++i)
    save_matrix(fcs[i], dir / (cohort.subjects[i].subject_id + suffix));
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> ks;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string tok = text.substr(pos, comma - pos);
    const auto a = tok.find_first_not_of(" \t");
    const auto b = tok.find_last_not_of(" \t");
    tok = a == std::string::npos ? std::string() : tok.substr(a, b - a + 1);
    if (!tok.empty()) {
      std::size_t k = 0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), k);
      if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || k == 0)
        fail(Errc::Usage, "bad --k-sweep entry '" + tok + "'");
      ks.push_back(k);
    }
    pos = comma + 1;
  }
  if (ks.empty()) fail(Errc::Usage, "--k-sweep lists no k values");
  return ks;
}

std::string metrics_line(std::size_t k, const Metrics& mean,
                         const Metrics& std) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-5zu %.4f+/-%.4f  %.4f+/-%.4f  %.4f+/-%.4f",
                k, mean.accuracy, std.accuracy, mean.precision, std.precision,
                mean.f1, std.f1);
  return buf;
}

// ---------------------------------------------------------------------------
// subcommands

struct GenSynthCmd {
  SubCtx ctx;
  std::string out_dir;
  SynthFlags synth;
  std::uint64_t seed = 0;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "gen-synth", "Generate a labeled synthetic cohort with ground truth");
    ctx.opt("--out-dir", out_dir, "cohort directory")->required();
    synth.attach(ctx);
    ctx.opt("--seed", seed, "master seed");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  void exec() {
    SynthConfig cfg = synth.cfg;
    cfg.seed = seed;
    SynthResult r = gen_cohort(cfg, out_dir, threads);
    ctx.write_snapshot(out_dir);
    std::cout << "generated " << r.cohort.size() << " subjects ("
              << r.cohort.n_rois << " ROIs) under " << out_dir << "\n"
              << "manifest: " << r.manifest_path.string() << "\n";
  }
};

struct SimulateCmd {
  SubCtx ctx;
  std::string manifest, out_dir;
  KuramotoFlags kuramoto;
  std::uint64_t seed = 0;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "simulate", "Integrate the oscillator model over each subject's SC");
    ctx.opt("--manifest", manifest, "cohort manifest CSV")->required();
    ctx.opt("--out-dir", out_dir, "destination for simulated FC")->required();
    kuramoto.attach(ctx);
    ctx.opt("--seed", seed, "master seed");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  void exec() {
    const Cohort cohort = load_cohort(manifest, seed);
    const KuramotoParams params = kuramoto.resolve();
    params.validate();
    ensure_dir(out_dir);

    struct SubjectSim {
      std::optional<ConnMatrix> fc;
      double terminal_r = 0.0;
    };
    std::vector<SubjectSim> sims(cohort.size());
    parallel_for(cohort.size(), threads, [&](std::size_t i) {
      PhaseTrajectory traj = simulate_phases(cohort.subjects[i].sc, params,
                                             cohort.base_seed + i);
      const double r = order_parameter(traj).back();
      SignalMatrix sig = bold_signal(traj, params.a0);
      sims[i] = SubjectSim{simulated_fc(sig), r};
    });

    std::string report = "subject_id,terminal_order_parameter\n";
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const std::string& id = cohort.subjects[i].subject_id;
      save_matrix(*sims[i].fc, fs::path(out_dir) / (id + kSimSuffix));
      char buf[64];
      std::snprintf(buf, sizeof buf, ",%.6f\n", sims[i].terminal_r);
      report += id + buf;
    }
    write_text_file(fs::path(out_dir) / "simulation_report.txt", report);
    ctx.write_snapshot(out_dir);
    std::cout << "simulated " << cohort.size() << " subjects -> " << out_dir
              << "\n";
  }
};

struct TrainRefinerCmd {
  SubCtx ctx;
  std::string manifest, sims_dir, out;
  RefinerFlags refiner;
  std::uint64_t seed = 0;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "train-refiner",
        "Fit the encoder-decoder that maps simulated FC toward empirical FC");
    ctx.opt("--manifest", manifest, "cohort manifest CSV")->required();
    ctx.opt("--sims-dir", sims_dir, "directory of simulated FC")->required();
    ctx.opt("--out", out, "checkpoint path")->required();
    refiner.attach(ctx, "");
    ctx.opt("--seed", seed, "master seed");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  void exec() {
    const Cohort cohort = load_cohort(manifest, seed);
    const std::vector<ConnMatrix> sims =
        load_fc_set(cohort, sims_dir, kSimSuffix, MatrixKind::FunctionalSimulated);
    UNetConfig cfg = refiner.cfg;
    cfg.seed = seed;
    RefinerHistory history;
    RefinerModel model = train_refiner(cohort, sims, cfg, &history, threads);
    const fs::path out_path(out);
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
    save_refiner(model, out);
    ctx.write_snapshot(out_path.has_parent_path() ? out_path.parent_path()
                                                  : fs::path("."));
    std::cout << "trained " << cfg.epochs << " epochs; final epoch loss = "
              << fmt_value(history.epoch_loss.back()) << "\n"
              << "checkpoint: " << out << "\n";
  }
};

struct PredictFcCmd {
  SubCtx ctx;
  std::string checkpoint, manifest, out_dir, sims_dir;
  KuramotoFlags kuramoto;
  std::uint64_t seed = 0;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "predict-fc", "Refine simulated FC with a trained checkpoint");
    ctx.opt("--checkpoint", checkpoint, "refiner checkpoint")->required();
    ctx.opt("--manifest", manifest, "cohort manifest CSV")->required();
    ctx.opt("--out-dir", out_dir, "destination for predicted FC")->required();
    ctx.opt("--sims-dir", sims_dir,
            "existing simulated FC; simulated here when omitted");
    kuramoto.attach(ctx);
    ctx.opt("--seed", seed, "master seed");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  void exec() {
    const RefinerModel model = load_refiner(checkpoint);
    const Cohort cohort = load_cohort(manifest, seed);
    const std::vector<ConnMatrix> sims =
        sims_dir.empty()
            ? simulate_cohort_fc(cohort, kuramoto.resolve(), threads)
            : load_fc_set(cohort, sims_dir, kSimSuffix,
                          MatrixKind::FunctionalSimulated);
    const std::vector<ConnMatrix> preds =
        refine_cohort(model, cohort, sims, threads);
    write_fc_set(preds, cohort, out_dir, kPredSuffix);
    ctx.write_snapshot(out_dir);
    std::cout << "wrote " << preds.size() << " predicted FC matrices -> "
              << out_dir << "\n";
  }
};

struct BuildGraphsCmd {
  SubCtx ctx;
  std::string manifest, fc_dir, out_dir;
  std::string fc_suffix = kPredSuffix;
  std::size_t k = 5;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "build-graphs",
        "Write sparsified edge lists and node features for both views");
    ctx.opt("--manifest", manifest, "cohort manifest CSV")->required();
    ctx.opt("--fc-dir", fc_dir, "directory of functional matrices")->required();
    ctx.opt("--out-dir", out_dir, "destination directory")->required();
    ctx.opt("--fc-suffix", fc_suffix, "per-subject functional file suffix");
    ctx.opt("--k", k, "neighbors kept per node");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  static std::string edge_csv(const BrainGraph& g) {
    std::string text = "src,dst,weight\n";
    for (const auto& [i, j] : g.edge_list())
      text += std::to_string(i) + "," + std::to_string(j) + "," +
              fmt_value(g.adjacency(i, j)) + "\n";
    return text;
  }

  static std::string feature_csv(const BrainGraph& g) {
    std::string text = "deg,nbr_mean,nbr_std,nbr_min,nbr_max\n";
    for (std::size_t i = 0; i < g.n_nodes; ++i) {
      for (std::size_t c = 0; c < 5; ++c) {
        if (c) text += ',';
        text += fmt_value(g.node_features(i, c));
      }
      text += '\n';
    }
    return text;
  }

  void exec() {
    const Cohort cohort = load_cohort(manifest);
    const std::vector<ConnMatrix> fcs =
        load_fc_set(cohort, fc_dir, fc_suffix, MatrixKind::FunctionalPredicted);
    ensure_dir(out_dir);
    std::vector<std::array<std::string, 4>> files(cohort.size());
    parallel_for(cohort.size(), threads, [&](std::size_t i) {
      const BrainGraph g_s =
          build_graph(cohort.subjects[i].sc, k, GraphView::Structural);
      const BrainGraph g_f = build_graph(fcs[i], k, GraphView::Functional);
      files[i] = {edge_csv(g_s), feature_csv(g_s), edge_csv(g_f),
                  feature_csv(g_f)};
    });
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const std::string& id = cohort.subjects[i].subject_id;
      const fs::path base(out_dir);
      write_text_file(base / (id + "_structural_edges.csv"), files[i][0]);
      write_text_file(base / (id + "_structural_features.csv"), files[i][1]);
      write_text_file(base / (id + "_functional_edges.csv"), files[i][2]);
      write_text_file(base / (id + "_functional_features.csv"), files[i][3]);
    }
    ctx.write_snapshot(out_dir);
    std::cout << "wrote edge lists and features for " << cohort.size()
              << " subjects -> " << out_dir << "\n";
  }
};

struct TrainFusionCmd {
  SubCtx ctx;
  std::string manifest, pred_fc_dir, out;
  FusionFlags fusion;
  std::uint64_t seed = 0;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "train-fusion",
        "Train the two-view GCN classifier on SC and predicted FC");
    ctx.opt("--manifest", manifest, "cohort manifest CSV")->required();
    ctx.opt("--pred-fc-dir", pred_fc_dir, "directory of predicted FC")
        ->required();
    ctx.opt("--out", out, "checkpoint path")->required();
    fusion.attach(ctx);
    ctx.opt("--seed", seed, "master seed");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  void exec() {
    const Cohort cohort = load_cohort(manifest, seed);
    const std::vector<ConnMatrix> preds = load_fc_set(
        cohort, pred_fc_dir, kPredSuffix, MatrixKind::FunctionalPredicted);
    FusionConfig cfg = fusion.cfg;
    cfg.seed = seed;
    FusionHistory history;
    FusionModel model = train_fusion(cohort, preds, cfg, &history, threads);
    const fs::path out_path(out);
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
    save_fusion(model, out);
    ctx.write_snapshot(out_path.has_parent_path() ? out_path.parent_path()
                                                  : fs::path("."));
    std::cout << "trained " << cfg.epochs << " epochs; final joint loss = "
              << fmt_value(history.joint.back()) << "\n"
              << "checkpoint: " << out << "\n";
  }
};

struct ClassifyCmd {
  SubCtx ctx;
  std::string checkpoint, sc_path, fc_path, refiner_checkpoint, out_dir;
  KuramotoFlags kuramoto;
  std::uint64_t seed = 0;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "classify",
        "Predict one subject's label from SC (FC is simulated and refined "
        "when not supplied)");
    ctx.opt("--checkpoint", checkpoint, "fusion checkpoint")->required();
    ctx.opt("--sc", sc_path, "structural matrix CSV")->required();
    ctx.opt("--fc", fc_path, "functional matrix CSV; simulated when omitted");
    ctx.opt("--refiner-checkpoint", refiner_checkpoint,
            "refine the simulated FC before classifying");
    kuramoto.attach(ctx);
    ctx.opt("--seed", seed, "simulation seed");
    ctx.opt("--out-dir", out_dir, "also write prediction.txt and the snapshot");
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  void exec() {
    const FusionModel model = load_fusion(checkpoint);
    const ConnMatrix sc = load_matrix(sc_path, MatrixKind::Structural);
    std::optional<ConnMatrix> fc;
    if (!fc_path.empty()) {
      fc = load_matrix(fc_path, MatrixKind::FunctionalPredicted);
    } else {
      ConnMatrix sim = subject_fc(sc, kuramoto.resolve(), seed);
      if (!refiner_checkpoint.empty()) {
        const RefinerModel refiner = load_refiner(refiner_checkpoint);
        fc = refine_fc(refiner, sc, sim);
      } else {
        fc = std::move(sim);
      }
    }
    const BrainGraph g_s =
        build_graph(sc, model.cfg.k_nn, GraphView::Structural);
    const BrainGraph g_f =
        build_graph(*fc, model.cfg.k_nn, GraphView::Functional);
    const auto [prob, label] = predict(model, g_s, g_f);
    char buf[64];
    std::snprintf(buf, sizeof buf, "probability = %.6f\nlabel = %d\n", prob,
                  label);
    std::cout << buf;
    if (!out_dir.empty()) {
      ensure_dir(out_dir);
      write_text_file(fs::path(out_dir) / "prediction.txt", buf);
      ctx.write_snapshot(out_dir);
    }
  }
};

struct EvaluateCmd {
  SubCtx ctx;
  std::string manifest, out_dir, k_sweep;
  std::size_t folds = 5;
  bool sc_only = false;
  bool no_refiner = false;
  FusionFlags fusion;
  KuramotoFlags kuramoto;
  RefinerFlags refiner;
  std::uint64_t seed = 0;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "evaluate", "Stratified cross-validation of the full pipeline");
    ctx.opt("--manifest", manifest, "cohort manifest CSV")->required();
    ctx.opt("--out-dir", out_dir, "destination for metrics CSVs")->required();
    ctx.opt("--folds", folds, "cross-validation folds");
    ctx.flag("--sc-only", sc_only, "ablation: both views read SC");
    ctx.flag("--no-refiner", no_refiner,
             "functional view reads raw simulated FC");
    ctx.opt("--k-sweep", k_sweep,
            "comma-separated k values to compare, e.g. 3,5,10,20");
    fusion.attach(ctx);
    kuramoto.attach(ctx);
    refiner.attach(ctx, "refiner-");
    ctx.opt("--seed", seed, "master seed");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  CvOptions cv_options() const {
    CvOptions opts;
    opts.n_folds = folds;
    opts.sc_only = sc_only;
    opts.use_refiner = !no_refiner;
    opts.kuramoto = kuramoto.resolve();
    opts.refiner = refiner.cfg;
    opts.refiner.seed = seed;
    opts.threads = threads;
    return opts;
  }

  void exec() {
    const Cohort cohort = load_cohort(manifest, seed);
    FusionConfig cfg = fusion.cfg;
    cfg.seed = seed;
    const CvOptions opts = cv_options();
    ensure_dir(out_dir);

    if (k_sweep.empty()) {
      const CvReport report = cross_validate(cohort, cfg, opts);
      std::cout << report.table();
      write_text_file(fs::path(out_dir) / "metrics.csv", report.csv());
      std::cout << "metrics: " << (fs::path(out_dir) / "metrics.csv").string()
                << "\n";
    } else {
      const std::vector<std::size_t> ks = parse_k_list(k_sweep);
      std::string sweep_csv =
          "k,accuracy_mean,accuracy_std,precision_mean,precision_std,"
          "f1_mean,f1_std\n";
      std::cout << "k     accuracy         precision        f1\n";
      for (std::size_t k : ks) {
        FusionConfig kc = cfg;
        kc.k_nn = k;
        const CvReport report = cross_validate(cohort, kc, opts);
        write_text_file(
            fs::path(out_dir) / ("metrics_k" + std::to_string(k) + ".csv"),
            report.csv());
        char buf[200];
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      k, report.mean.accuracy, report.stddev.accuracy,
                      report.mean.precision, report.stddev.precision,
                      report.mean.f1, report.stddev.f1);
        sweep_csv += buf;
        std::cout << metrics_line(k, report.mean, report.stddev) << "\n";
      }
      write_text_file(fs::path(out_dir) / "k_sweep.csv", sweep_csv);
      std::cout << "sweep: " << (fs::path(out_dir) / "k_sweep.csv").string()
                << "\n";
    }
    ctx.write_snapshot(out_dir);
  }
};

struct ExplainCmd {
  SubCtx ctx;
  std::string checkpoint, manifest, atlas_path, out_dir, pred_fc_dir,
      refiner_checkpoint;
  std::string view = "functional";
  ExplainConfig ecfg;
  KuramotoFlags kuramoto;
  std::uint64_t seed = 0;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "explain",
        "Learn per-edge importance masks and summarize them by network pair");
    ctx.opt("--checkpoint", checkpoint, "fusion checkpoint")->required();
    ctx.opt("--manifest", manifest, "cohort manifest CSV")->required();
    ctx.opt("--atlas", atlas_path, "node,network CSV")->required();
    ctx.opt("--out-dir", out_dir, "destination directory")->required();
    ctx.opt("--pred-fc-dir", pred_fc_dir,
            "predicted FC; simulated (and optionally refined) when omitted");
    ctx.opt("--refiner-checkpoint", refiner_checkpoint,
            "refine simulated FC when --pred-fc-dir is omitted");
    ctx.opt("--view", view, "view whose edges are masked")
        ->check(CLI::IsMember({"functional", "structural"}));
    ctx.opt("--steps", ecfg.steps, "mask optimization steps");
    ctx.opt("--mask-lr", ecfg.mask_lr, "mask learning rate");
    ctx.opt("--sparsity-weight", ecfg.sparsity_weight, "mask sparsity weight");
    ctx.opt("--entropy-weight", ecfg.entropy_weight, "mask entropy weight");
    kuramoto.attach(ctx);
    ctx.opt("--seed", seed, "master seed");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  void exec() {
    const FusionModel model = load_fusion(checkpoint);
    const Cohort cohort = load_cohort(manifest, seed);
    const NetworkAtlas atlas = load_atlas(atlas_path);
    ecfg.seed = seed;
    ecfg.validate();

    std::vector<ConnMatrix> fcs;
    if (!pred_fc_dir.empty()) {
      fcs = load_fc_set(cohort, pred_fc_dir, kPredSuffix,
                        MatrixKind::FunctionalPredicted);
    } else {
      fcs = simulate_cohort_fc(cohort, kuramoto.resolve(), threads);
      if (!refiner_checkpoint.empty()) {
        const RefinerModel refiner = load_refiner(refiner_checkpoint);
        fcs = refine_cohort(refiner, cohort, fcs, threads);
      }
    }

    const GraphView target =
        view == "structural" ? GraphView::Structural : GraphView::Functional;
    std::vector<EdgeImportance> imps(cohort.size());
    parallel_for(cohort.size(), threads, [&](std::size_t i) {
      const BrainGraph g_s =
          build_graph(cohort.subjects[i].sc, model.cfg.k_nn,
                      GraphView::Structural);
      const BrainGraph g_f =
          build_graph(fcs[i], model.cfg.k_nn, GraphView::Functional);
      imps[i] = explain_subject(model, g_s, g_f, target, ecfg,
                                cohort.subjects[i].subject_id);
    });

    ensure_dir(out_dir);
    EdgeImportance merged;
    merged.subject_id = "cohort";
    merged.view = target;
    for (std::size_t i = 0; i < imps.size(); ++i) {
      save_edge_importance(imps[i],
                           fs::path(out_dir) / (cohort.subjects[i].subject_id +
                                                "_edge_importance.csv"));
      merged.edges.insert(merged.edges.end(), imps[i].edges.begin(),
                          imps[i].edges.end());
    }
    const auto rows = group_by_network(merged, atlas);
    write_text_file(fs::path(out_dir) / "network_summary.csv",
                    network_summary_csv(rows));
    ctx.write_snapshot(out_dir);
    std::cout << "wrote " << imps.size() << " edge importance files and "
              << "network_summary.csv -> " << out_dir << "\n";
  }
};

struct PipelineCmd {
  SubCtx ctx;
  std::string out_dir, manifest;
  SynthFlags synth;
  KuramotoFlags kuramoto;
  RefinerFlags refiner;
  FusionFlags fusion;
  std::size_t folds = 5;
  bool sc_only = false;
  bool no_refiner = false;
  std::uint64_t seed = 0;
  int threads = 1;

  void setup(CLI::App& app) {
    ctx.sub = app.add_subcommand(
        "pipeline",
        "Generate or ingest a cohort, simulate, train both models, and "
        "cross-validate");
    ctx.opt("--out-dir", out_dir, "working directory for every artifact")
        ->required();
    ctx.opt("--manifest", manifest,
            "ingest this cohort instead of generating one");
    synth.attach(ctx);
    kuramoto.attach(ctx);
    refiner.attach(ctx, "refiner-");
    fusion.attach(ctx);
    ctx.opt("--folds", folds, "cross-validation folds");
    ctx.flag("--sc-only", sc_only, "ablation: both views read SC");
    ctx.flag("--no-refiner", no_refiner,
             "functional view reads raw simulated FC");
    ctx.opt("--seed", seed, "master seed");
    ctx.opt("--threads", threads, "worker threads")
        ->check(CLI::PositiveNumber);
    ctx.finish();
    ctx.sub->callback([this] { exec(); });
  }

  void exec() {
    ensure_dir(out_dir);
    const fs::path base(out_dir);

    Cohort cohort;
    if (manifest.empty()) {
      SynthConfig scfg = synth.cfg;
      scfg.seed = seed;
      std::cout << "[1/5] generating " << scfg.n_subjects
                << "-subject cohort\n";
      cohort = gen_cohort(scfg, base / "cohort", threads).cohort;
    } else {
      std::cout << "[1/5] loading cohort from " << manifest << "\n";
      cohort = load_cohort(manifest, seed);
    }

    const KuramotoParams params = kuramoto.resolve();
    std::cout << "[2/5] simulating functional connectivity\n";
    const std::vector<ConnMatrix> sims =
        simulate_cohort_fc(cohort, params, threads);
    write_fc_set(sims, cohort, base / "sims", kSimSuffix);

    std::vector<ConnMatrix> preds = sims;
    if (!no_refiner && !sc_only) {
      std::cout << "[3/5] training the refiner on the full cohort\n";
      UNetConfig rcfg = refiner.cfg;
      rcfg.seed = seed;
      const RefinerModel rmodel = train_refiner(cohort, sims, rcfg, nullptr,
                                                threads);
      save_refiner(rmodel, (base / "refiner.ckpt").string());
      preds = refine_cohort(rmodel, cohort, sims, threads);
    } else {
      std::cout << "[3/5] refiner stage skipped\n";
    }
    write_fc_set(preds, cohort, base / "pred_fc", kPredSuffix);

    FusionConfig fcfg = fusion.cfg;
    fcfg.seed = seed;
    if (!sc_only) {
      std::cout << "[4/5] training the fusion classifier on the full cohort\n";
      const FusionModel fmodel =
          train_fusion(cohort, preds, fcfg, nullptr, threads);
      save_fusion(fmodel, (base / "fusion.ckpt").string());
    } else {
      std::cout << "[4/5] fusion stage runs inside cross-validation only "
                   "(sc-only)\n";
    }

    std::cout << "[5/5] cross-validating\n";
    CvOptions opts;
    opts.n_folds = folds;
    opts.sc_only = sc_only;
    opts.use_refiner = !no_refiner;
    opts.kuramoto = params;
    opts.refiner = refiner.cfg;
    opts.refiner.seed = seed;
    opts.threads = threads;
    const CvReport report = cross_validate(cohort, fcfg, opts, &sims);
    std::cout << report.table();
    write_text_file(base / "metrics.csv", report.csv());
    ctx.write_snapshot(base);
    std::cout << "metrics: " << (base / "metrics.csv").string() << "\n";
  }
};

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{
      "Oscillator-based SC-to-FC coupling, two-view fusion classification, "
      "and edge-level explanation"};
  app.require_subcommand(1);

  GenSynthCmd gen_synth;
  SimulateCmd simulate;
  TrainRefinerCmd train_refiner;
  PredictFcCmd predict_fc;
  BuildGraphsCmd build_graphs;
  TrainFusionCmd train_fusion;
  ClassifyCmd classify;
  EvaluateCmd evaluate;
  ExplainCmd explain;
  PipelineCmd pipeline;

  gen_synth.setup(app);
  simulate.setup(app);
  train_refiner.setup(app);
  predict_fc.setup(app);
  build_graphs.setup(app);
  train_fusion.setup(app);
  classify.setup(app);
  evaluate.setup(app);
  explain.setup(app);
  pipeline.setup(app);

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }

  try {
    const std::vector<std::string> merged = merge_config_args(argc, argv);
    std::vector<const char*> cargv;
    cargv.reserve(merged.size() + 1);
    cargv.push_back(argc > 0 ? argv[0] : "scfc");
    for (const std::string& a : merged) cargv.push_back(a.c_str());
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace scfc::cli
