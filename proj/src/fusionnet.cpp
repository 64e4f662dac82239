#include "scfc/fusionnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "scfc/errors.hpp"
#include "scfc/parallel.hpp"

namespace scfc {

using ad::NodeId;
using ad::ParamStore;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

namespace {
constexpr double kProbFloor = 1e-7;
}

void FusionConfig::validate() const {
  if (gcn_layers < 1) fail(Errc::ConfigInvalid, "gcn_layers must be >= 1");
  if (gcn_channels < 1) fail(Errc::ConfigInvalid, "gcn_channels must be >= 1");
  if (embed_dim < 1) fail(Errc::ConfigInvalid, "embed_dim must be >= 1");
  if (mlp_hidden < 1) fail(Errc::ConfigInvalid, "mlp_hidden must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    fail(Errc::ConfigInvalid, "dropout_p must lie in [0, 1)");
  if (!(lambda_z >= 0.0)) fail(Errc::ConfigInvalid, "lambda_z must be >= 0");
  if (!(alpha >= 0.0) || !(beta >= 0.0))
    fail(Errc::ConfigInvalid, "loss weights must be >= 0");
  if (!(lr > 0.0)) fail(Errc::ConfigInvalid, "lr must be > 0");
  if (batch_size < 2)
    fail(Errc::ConfigInvalid, "batch_size must be >= 2 for batch statistics");
  if (k_nn < 1) fail(Errc::ConfigInvalid, "k_nn must be >= 1");
}

std::map<std::string, Shape> fusion_param_shapes(const FusionConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> out;
  std::size_t in = 5;  // node feature width
  for (std::size_t m = 0; m < cfg.gcn_layers; ++m) {
    out["gcn." + std::to_string(m) + ".w"] = Shape::mat(in, cfg.gcn_channels);
    in = cfg.gcn_channels;
  }
  for (const char* view : {"mlp_s", "mlp_f"}) {
    const std::string p(view);
    out[p + ".0.w"] = Shape::mat(cfg.gcn_channels, cfg.mlp_hidden);
    out[p + ".0.b"] = Shape::mat(1, cfg.mlp_hidden);
    out[p + ".1.w"] = Shape::mat(cfg.mlp_hidden, cfg.embed_dim);
    out[p + ".1.b"] = Shape::mat(1, cfg.embed_dim);
  }
  out["clf.w"] = Shape::mat(2 * cfg.embed_dim, 1);
  out["clf.b"] = Shape::mat(1, 1);
  return out;
}

FusionModel init_fusion(const FusionConfig& cfg) {
  FusionModel model;
  model.cfg = cfg;
  Rng rng(derive_seed(cfg.seed, "fusion_init", 0));
  for (const auto& [name, shape] : fusion_param_shapes(cfg)) {
    if (name.ends_with(".b")) {
      model.params[name] = Tensor(shape);
      continue;
    }
    model.params[name] = ad::he_uniform(shape, shape.dim[0], rng);
  }
  return model;
}

namespace {

NodeId pnode(const std::map<std::string, NodeId>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end())
    fail(Errc::UntrainedParams, "missing fusion parameter " + name);
  return it->second;
}

// relu(A H W) per layer; dropout after every non-final activation when
// training
NodeId gcn_stack(Tape& t, const FusionConfig& cfg,
                 const std::map<std::string, NodeId>& p, NodeId a, NodeId h,
                 bool train_mode, Rng* rng) {
  for (std::size_t m = 0; m < cfg.gcn_layers; ++m) {
    h = t.relu(t.matmul(t.matmul(a, h), pnode(p, "gcn." + std::to_string(m) + ".w")));
    if (train_mode && cfg.dropout_p > 0.0 && m + 1 < cfg.gcn_layers)
      h = t.dropout(h, cfg.dropout_p, *rng);
  }
  return h;
}

NodeId graph_inputs(Tape& t, const BrainGraph& g, NodeId* features) {
  *features = t.input(Tensor::from_mat(g.node_features), false);
  return t.input(Tensor::from_mat(g.norm_adjacency), false);
}

NodeId build_gcn(Tape& t, const FusionConfig& cfg,
                 const std::map<std::string, NodeId>& p, const BrainGraph& g,
                 bool train_mode, Rng* rng) {
  NodeId h = -1;
  NodeId a = graph_inputs(t, g, &h);
  return gcn_stack(t, cfg, p, a, h, train_mode, rng);
}

NodeId view_embedding(Tape& t, const FusionConfig& cfg,
                      const std::map<std::string, NodeId>& p, NodeId a,
                      NodeId h, const char* head, bool train_mode, Rng* rng) {
  NodeId nodes = gcn_stack(t, cfg, p, a, h, train_mode, rng);
  NodeId pooled = t.mean_pool_rows(nodes);
  const std::string hd(head);
  NodeId hidden = t.relu(t.add(t.matmul(pooled, pnode(p, hd + ".0.w")),
                               pnode(p, hd + ".0.b")));
  NodeId embed = t.add(t.matmul(hidden, pnode(p, hd + ".1.w")),
                       pnode(p, hd + ".1.b"));
  return t.l2_normalize_rows(embed);
}

NodeId build_view_embedding(Tape& t, const FusionConfig& cfg,
                            const std::map<std::string, NodeId>& p,
                            const BrainGraph& g, const char* head,
                            bool train_mode, Rng* rng) {
  NodeId h = -1;
  NodeId a = graph_inputs(t, g, &h);
  return view_embedding(t, cfg, p, a, h, head, train_mode, rng);
}

NodeId logit_from_embeddings(Tape& t, const std::map<std::string, NodeId>& p,
                             NodeId xs, NodeId xf) {
  NodeId cat = t.concat(xs, xf, 1);
  return t.add(t.matmul(cat, pnode(p, "clf.w")), pnode(p, "clf.b"));
}

struct SampleNodes {
  NodeId xs, xf, logit;
};

SampleNodes build_sample(Tape& t, const FusionConfig& cfg,
                         const std::map<std::string, NodeId>& p,
                         const BrainGraph& g_s, const BrainGraph& g_f,
                         bool train_mode, Rng* rng) {
  if (g_s.n_nodes != g_f.n_nodes)
    fail(Errc::ShapeMismatch, "views disagree on node count: " +
                                  std::to_string(g_s.n_nodes) + " vs " +
                                  std::to_string(g_f.n_nodes));
  SampleNodes out;
  out.xs = build_view_embedding(t, cfg, p, g_s, "mlp_s", train_mode, rng);
  out.xf = build_view_embedding(t, cfg, p, g_f, "mlp_f", train_mode, rng);
  out.logit = logit_from_embeddings(t, p, out.xs, out.xf);
  return out;
}

std::map<std::string, NodeId> record_params(Tape& t, const ParamStore& params,
                                            bool requires_grad) {
  if (params.empty())
    fail(Errc::UntrainedParams, "fusion model has no parameters");
  std::map<std::string, NodeId> out;
  for (const auto& [name, tensor] : params)
    out[name] = t.input(tensor, requires_grad);
  return out;
}

}  // namespace

Mat gcn_forward(const FusionModel& model, const BrainGraph& graph,
                bool train_mode, std::uint64_t seed) {
  Tape t;
  auto p = record_params(t, model.params, false);
  Rng rng(seed);
  NodeId h = build_gcn(t, model.cfg, p, graph, train_mode, &rng);
  return t.value(h).to_mat();
}

EmbeddingPair embed_views(const FusionModel& model, const BrainGraph& g_s,
                          const BrainGraph& g_f, bool train_mode,
                          std::uint64_t seed) {
  Tape t;
  auto p = record_params(t, model.params, false);
  Rng rng(seed);
  SampleNodes s = build_sample(t, model.cfg, p, g_s, g_f, train_mode, &rng);
  EmbeddingPair pair;
  pair.x_s = t.value(s.xs).data;
  pair.x_f = t.value(s.xf).data;
  return pair;
}

NodeId fusion_logit(Tape& t, const FusionConfig& cfg,
                    const std::map<std::string, NodeId>& params, NodeId a_s,
                    NodeId h_s, NodeId a_f, NodeId h_f) {
  NodeId xs = view_embedding(t, cfg, params, a_s, h_s, "mlp_s", false, nullptr);
  NodeId xf = view_embedding(t, cfg, params, a_f, h_f, "mlp_f", false, nullptr);
  return logit_from_embeddings(t, params, xs, xf);
}

double cca_loss(const Mat& xs, const Mat& xf, double lambda_z) {
  if (!xs.same_shape(xf))
    fail(Errc::ShapeMismatch, "view batches differ in shape");
  const std::size_t e = xs.rows(), d = xs.cols();
  if (e < 2)
    fail(Errc::BatchTooSmall,
         "batch statistics need >= 2 samples, got " + std::to_string(e));
  double corr = 0.0;
  for (std::size_t k = 0; k < e; ++k)
    for (std::size_t j = 0; j < d; ++j) corr += xs(k, j) * xf(k, j);
  double penalty = 0.0;
  for (const Mat* view : {&xs, &xf}) {
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double z = 0.0;
        for (std::size_t k = 0; k < e; ++k) z += (*view)(k, i) * (*view)(k, j);
        z /= static_cast<double>(e);
        const double dev = z - (i == j ? 1.0 : 0.0);
        penalty += dev * dev;
      }
  }
  return -corr / static_cast<double>(e) + lambda_z * penalty;
}

double ce_loss(const std::vector<double>& y_hat, const std::vector<int>& y) {
  if (y_hat.size() != y.size() || y_hat.empty())
    fail(Errc::LengthMismatch, "prediction and label counts differ");
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p =
        std::min(1.0 - kProbFloor, std::max(kProbFloor, y_hat[i]));
    loss += y[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return loss / static_cast<double>(y.size());
}

double joint_loss(const Mat& xs, const Mat& xf,
                  const std::vector<double>& y_hat, const std::vector<int>& y,
                  double alpha, double beta, double lambda_z) {
  if (y_hat.size() != xs.rows())
    fail(Errc::LengthMismatch, "embedding rows and predictions differ");
  return alpha * cca_loss(xs, xf, lambda_z) + beta * ce_loss(y_hat, y);
}

std::pair<double, int> predict(const FusionModel& model, const BrainGraph& g_s,
                               const BrainGraph& g_f) {
  Tape t;
  auto p = record_params(t, model.params, false);
  SampleNodes s = build_sample(t, model.cfg, p, g_s, g_f, false, nullptr);
  NodeId prob = t.sigmoid(s.logit);
  const double v = t.value(prob).scalar_value();
  return {v, v >= 0.5 ? 1 : 0};
}

namespace {

// chunk [0, n) into batches of `size`, folding a trailing single sample into
// the previous batch so every batch supports batch statistics
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n,
                                                              std::size_t size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t start = 0;
  while (start < n) {
    std::size_t len = std::min(size, n - start);
    if (n - start - len == 1) len += 1;  // absorb the straggler
    out.emplace_back(start, len);
    start += len;
  }
  return out;
}

}  // namespace

NodeId fusion_batch_loss(Tape& t, const FusionConfig& cfg,
                         const std::map<std::string, NodeId>& params,
                         const std::vector<ViewPair>& views,
                         const std::vector<int>& labels,
                         const std::vector<std::size_t>& batch, bool train_mode,
                         Rng* dropout_rng, NodeId* cca_out, NodeId* ce_out) {
  const std::size_t bsz = batch.size();
  if (bsz < 2)
    fail(Errc::BatchTooSmall,
         "batch statistics need >= 2 samples, got " + std::to_string(bsz));
  NodeId xs = -1, xf = -1, logits = -1;
  Tensor yv(Shape::mat(bsz, 1)), yc(Shape::mat(bsz, 1));
  for (std::size_t b = 0; b < bsz; ++b) {
    const std::size_t i = batch[b];
    SampleNodes s = build_sample(t, cfg, params, views[i].g_s, views[i].g_f,
                                 train_mode, dropout_rng);
    xs = b == 0 ? s.xs : t.concat(xs, s.xs, 0);
    xf = b == 0 ? s.xf : t.concat(xf, s.xf, 0);
    logits = b == 0 ? s.logit : t.concat(logits, s.logit, 0);
    yv.data[b] = labels[i] == 1 ? 1.0 : 0.0;
    yc.data[b] = 1.0 - yv.data[b];
  }
  const double inv_b = 1.0 / static_cast<double>(bsz);

  NodeId corr = t.scale(t.sum(t.mul(xs, xf)), -inv_b);
  NodeId eye = t.input(Tensor::from_mat(Mat::identity(cfg.embed_dim)), false);
  NodeId zs = t.sub(t.scale(t.matmul(t.transpose(xs), xs), inv_b), eye);
  NodeId zf = t.sub(t.scale(t.matmul(t.transpose(xf), xf), inv_b), eye);
  NodeId cca = t.add(
      corr,
      t.scale(t.add(t.frobenius_sq(zs), t.frobenius_sq(zf)), cfg.lambda_z));

  NodeId prob = t.clamp(t.sigmoid(logits), kProbFloor, 1.0 - kProbFloor);
  NodeId ones = t.input(Tensor::full(Shape::mat(bsz, 1), 1.0), false);
  NodeId ce = t.scale(
      t.sum(t.add(t.mul(t.input(yv, false), t.log(prob)),
                  t.mul(t.input(yc, false), t.log(t.sub(ones, prob))))),
      -inv_b);
  if (cca_out) *cca_out = cca;
  if (ce_out) *ce_out = ce;
  return t.add(t.scale(cca, cfg.alpha), t.scale(ce, cfg.beta));
}

FusionModel train_fusion_graphs(const std::vector<ViewPair>& views,
                                const std::vector<int>& labels,
                                const FusionConfig& cfg,
                                FusionHistory* history) {
  cfg.validate();
  const std::size_t e_total = views.size();
  if (labels.size() != e_total)
    fail(Errc::LengthMismatch, "got " + std::to_string(labels.size()) +
                                   " labels for " + std::to_string(e_total) +
                                   " subjects");
  if (e_total < 4)
    fail(Errc::CohortTooSmall,
         "fusion training needs >= 4 subjects, got " + std::to_string(e_total));

  FusionModel model = init_fusion(cfg);
  ad::Adam opt(ad::AdamConfig{cfg.lr});
  if (history) {
    history->cca.clear();
    history->ce.clear();
    history->joint.clear();
  }

  std::vector<std::size_t> order(e_total);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(derive_seed(cfg.seed, "fusion_epoch", epoch));
    erng.shuffle(order);
    Rng drng(derive_seed(cfg.seed, "fusion_dropout", epoch));
    double cca_sum = 0.0, ce_sum = 0.0, joint_sum = 0.0;

    for (const auto& [start, bsz] : batch_ranges(e_total, cfg.batch_size)) {
      Tape t;
      auto p = record_params(t, model.params, true);
      std::vector<std::size_t> batch(order.begin() + start,
                                     order.begin() + start + bsz);
      NodeId cca = -1, ce = -1;
      NodeId joint =
          fusion_batch_loss(t, cfg, p, views, labels, batch, true, &drng, &cca, &ce);

      const double w = static_cast<double>(bsz) / static_cast<double>(e_total);
      cca_sum += t.value(cca).scalar_value() * w;
      ce_sum += t.value(ce).scalar_value() * w;
      joint_sum += t.value(joint).scalar_value() * w;

      ad::GradMap g = t.backward(joint);
      std::map<std::string, Tensor> named;
      for (const auto& [name, id] : p) named[name] = std::move(g.at(id));
      opt.step(model.params, named);
    }
    if (history) {
      history->cca.push_back(cca_sum);
      history->ce.push_back(ce_sum);
      history->joint.push_back(joint_sum);
    }
  }
  return model;
}

FusionModel train_fusion(const Cohort& cohort,
                         const std::vector<ConnMatrix>& predicted_fcs,
                         const FusionConfig& cfg, FusionHistory* history,
                         int threads) {
  cfg.validate();
  if (predicted_fcs.size() != cohort.size())
    fail(Errc::MissingPredictedFc,
         "expected a predicted FC for each of " +
             std::to_string(cohort.size()) + " subjects, got " +
             std::to_string(predicted_fcs.size()));
  std::vector<ViewPair> views(cohort.size());
  parallel_for(cohort.size(), threads, [&](std::size_t i) {
    views[i].g_s =
        build_graph(cohort.subjects[i].sc, cfg.k_nn, GraphView::Structural);
    views[i].g_f =
        build_graph(predicted_fcs[i], cfg.k_nn, GraphView::Functional);
  });
  return train_fusion_graphs(views, cohort.labels(), cfg, history);
}

namespace {

std::string format_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string CvReport::csv() const {
  std::ostringstream out;
  out << "fold,accuracy,precision,f1\n";
  for (std::size_t f = 0; f < folds.size(); ++f)
    out << f << ',' << format_fixed(folds[f].accuracy) << ','
        << format_fixed(folds[f].precision) << ',' << format_fixed(folds[f].f1)
        << '\n';
  out << "summary," << format_fixed(mean.accuracy) << "±"
      << format_fixed(stddev.accuracy) << ',' << format_fixed(mean.precision)
      << "±" << format_fixed(stddev.precision) << ',' << format_fixed(mean.f1)
      << "±" << format_fixed(stddev.f1) << '\n';
  return out.str();
}

std::string CvReport::table() const {
  std::ostringstream out;
  out << "fold  accuracy  precision  f1\n";
  for (std::size_t f = 0; f < folds.size(); ++f) {
    char line[128];
    std::snprintf(line, sizeof line, "%-4zu  %.4f    %.4f     %.4f\n", f,
                  folds[f].accuracy, folds[f].precision, folds[f].f1);
    out << line;
  }
  char summary[160];
  std::snprintf(summary, sizeof summary,
                "mean  %.4f+/-%.4f  %.4f+/-%.4f  %.4f+/-%.4f\n", mean.accuracy,
                stddev.accuracy, mean.precision, stddev.precision, mean.f1,
                stddev.f1);
  out << summary;
  return out.str();
}

CvReport cross_validate(const Cohort& cohort, const FusionConfig& cfg,
                        const CvOptions& opts,
                        const std::vector<ConnMatrix>* precomputed_sims) {
  cfg.validate();
  const std::size_t e_total = cohort.size();
  if (e_total < 2 * opts.n_folds)
    fail(Errc::CohortTooSmall, "cohort of " + std::to_string(e_total) +
                                   " is too small for " +
                                   std::to_string(opts.n_folds) + " folds");
  if (precomputed_sims && precomputed_sims->size() != e_total)
    fail(Errc::LengthMismatch,
         "got " + std::to_string(precomputed_sims->size()) +
             " simulated matrices for " + std::to_string(e_total) +
             " subjects");
  const std::vector<int> labels = cohort.labels();
  Rng split_rng(derive_seed(cfg.seed, "cv_split", 0));
  const auto folds = stratified_folds(labels, opts.n_folds, split_rng);

  // the structural view never changes across folds
  std::vector<BrainGraph> g_s(e_total);
  parallel_for(e_total, opts.threads, [&](std::size_t i) {
    g_s[i] = build_graph(cohort.subjects[i].sc, cfg.k_nn, GraphView::Structural);
  });

  std::vector<ConnMatrix> sims;
  if (!opts.sc_only) {
    if (precomputed_sims)
      sims = *precomputed_sims;
    else
      sims = simulate_cohort_fc(cohort, opts.kuramoto, opts.threads);
  }

  std::vector<Metrics> fold_metrics(opts.n_folds);
  const int inner_threads = opts.threads > 1 ? 1 : opts.threads;
  parallel_for(opts.n_folds, opts.threads, [&](std::size_t f) {
    std::vector<std::size_t> test_idx = folds[f];
    std::vector<char> in_test(e_total, 0);
    for (std::size_t i : test_idx) in_test[i] = 1;
    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < e_total; ++i)
      if (!in_test[i]) train_idx.push_back(i);

    std::vector<ViewPair> views(e_total);
    if (opts.sc_only) {
      for (std::size_t i = 0; i < e_total; ++i)
        views[i] = ViewPair{g_s[i], g_s[i]};
    } else {
      std::vector<ConnMatrix> fc(sims);
      if (opts.use_refiner) {
        Cohort train_cohort;
        train_cohort.n_rois = cohort.n_rois;
        train_cohort.base_seed = cohort.base_seed;
        std::vector<ConnMatrix> train_sims;
        for (std::size_t i : train_idx) {
          train_cohort.subjects.push_back(cohort.subjects[i]);
          train_sims.push_back(sims[i]);
        }
        UNetConfig rcfg = opts.refiner;
        rcfg.seed = opts.refiner.seed + f;
        RefinerModel refiner =
            train_refiner(train_cohort, train_sims, rcfg, nullptr, inner_threads);
        for (std::size_t i = 0; i < e_total; ++i)
          fc[i] = refine_fc(refiner, cohort.subjects[i].sc, sims[i]);
      }
      for (std::size_t i = 0; i < e_total; ++i)
        views[i] =
            ViewPair{g_s[i], build_graph(fc[i], cfg.k_nn, GraphView::Functional)};
    }

    std::vector<ViewPair> train_views;
    std::vector<int> train_labels;
    for (std::size_t i : train_idx) {
      train_views.push_back(views[i]);
      train_labels.push_back(labels[i]);
    }
    FusionConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + f;
    FusionModel model = train_fusion_graphs(train_views, train_labels, fold_cfg);

    std::vector<int> truth, pred;
    for (std::size_t i : test_idx) {
      truth.push_back(labels[i]);
      pred.push_back(predict(model, views[i].g_s, views[i].g_f).second);
    }
    fold_metrics[f] = classification_metrics(truth, pred);
  });

  CvReport report;
  report.folds = fold_metrics;
  report.fold_indices = folds;
  std::vector<double> acc, prec, f1;
  for (const Metrics& m : fold_metrics) {
    acc.push_back(m.accuracy);
    prec.push_back(m.precision);
    f1.push_back(m.f1);
  }
  auto [am, as] = mean_sample_std(acc);
  auto [pm, ps] = mean_sample_std(prec);
  auto [fm, fs] = mean_sample_std(f1);
  report.mean = {am, pm, fm};
  report.stddev = {as, ps, fs};

  std::ostringstream snap;
  snap << "alpha = " << cfg.alpha << "\nbatch_size = " << cfg.batch_size
       << "\nbeta = " << cfg.beta << "\ndropout_p = " << cfg.dropout_p
       << "\nembed_dim = " << cfg.embed_dim << "\nepochs = " << cfg.epochs
       << "\nfolds = " << opts.n_folds << "\ngcn_channels = " << cfg.gcn_channels
       << "\ngcn_layers = " << cfg.gcn_layers << "\nk_nn = " << cfg.k_nn
       << "\nlambda_z = " << cfg.lambda_z << "\nlr = " << cfg.lr
       << "\nmlp_hidden = " << cfg.mlp_hidden << "\nsc_only = " << opts.sc_only
       << "\nseed = " << cfg.seed << "\nuse_refiner = " << opts.use_refiner
       << "\n";
  report.config_snapshot = snap.str();
  return report;
}

namespace {

const char* kFusionMeta[] = {"meta.gcn_layers", "meta.gcn_channels",
                             "meta.embed_dim",  "meta.mlp_hidden",
                             "meta.dropout_p",  "meta.lambda_z",
                             "meta.alpha",      "meta.beta",
                             "meta.k_nn"};

}  // namespace

void save_fusion(const FusionModel& model, const std::string& path) {
  ParamStore store = model.params;
  const FusionConfig& c = model.cfg;
  const double vals[] = {static_cast<double>(c.gcn_layers),
                         static_cast<double>(c.gcn_channels),
                         static_cast<double>(c.embed_dim),
                         static_cast<double>(c.mlp_hidden),
                         c.dropout_p,
                         c.lambda_z,
                         c.alpha,
                         c.beta,
                         static_cast<double>(c.k_nn)};
  for (std::size_t i = 0; i < std::size(kFusionMeta); ++i)
    store[kFusionMeta[i]] = Tensor::scalar(vals[i]);
  ad::save_checkpoint(store, path);
}

FusionModel load_fusion(const std::string& path) {
  ParamStore store = ad::load_checkpoint(path);
  auto take = [&](const char* key) {
    auto it = store.find(key);
    if (it == store.end())
      fail(Errc::ParseError, std::string("checkpoint lacks ") + key);
    const double v = it->second.scalar_value();
    store.erase(it);
    return v;
  };
  FusionModel model;
  FusionConfig& c = model.cfg;
  c.gcn_layers = static_cast<std::size_t>(take("meta.gcn_layers"));
  c.gcn_channels = static_cast<std::size_t>(take("meta.gcn_channels"));
  c.embed_dim = static_cast<std::size_t>(take("meta.embed_dim"));
  c.mlp_hidden = static_cast<std::size_t>(take("meta.mlp_hidden"));
  c.dropout_p = take("meta.dropout_p");
  c.lambda_z = take("meta.lambda_z");
  c.alpha = take("meta.alpha");
  c.beta = take("meta.beta");
  c.k_nn = static_cast<std::size_t>(take("meta.k_nn"));
  try {
    c.validate();
  } catch (const Error& e) {
    fail(Errc::ParseError, std::string("checkpoint metadata invalid: ") + e.what());
  }
  const auto expected = fusion_param_shapes(c);
  for (const auto& [name, shape] : expected) {
    auto it = store.find(name);
    if (it == store.end())
      fail(Errc::ParseError, "checkpoint lacks tensor " + name);
    if (!(it->second.shape == shape))
      fail(Errc::ParseError, "checkpoint tensor " + name + " has shape " +
                                 it->second.shape.str() + ", expected " +
                                 shape.str());
  }
  if (store.size() != expected.size())
    fail(Errc::ParseError, "checkpoint contains unexpected tensors");
  model.params = std::move(store);
  return model;
}

}  // namespace scfc
