#include "scfc/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scfc/errors.hpp"
#include "scfc/metrics.hpp"
#include "scfc/parallel.hpp"

namespace scfc {

using ad::NodeId;
using ad::ParamStore;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

void UNetConfig::validate() const {
  if (depth < 1 || kUNetGrid % (std::size_t{1} << depth) != 0)
    fail(Errc::ConfigInvalid, "depth must satisfy 1 <= depth and 2^depth | " +
                                  std::to_string(kUNetGrid) + ", got " +
                                  std::to_string(depth));
  if (base_channels < 1)
    fail(Errc::ConfigInvalid, "base_channels must be >= 1");
  if (in_channels != 1 && in_channels != 2)
    fail(Errc::ConfigInvalid, "in_channels must be 1 or 2, got " +
                                  std::to_string(in_channels));
  if (!(lambda_w >= 0.0)) fail(Errc::ConfigInvalid, "lambda_w must be >= 0");
  if (!(lr > 0.0)) fail(Errc::ConfigInvalid, "lr must be > 0");
  if (batch_size < 1) fail(Errc::ConfigInvalid, "batch_size must be >= 1");
}

std::map<std::string, Shape> refiner_param_shapes(const UNetConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> out;
  std::size_t c_prev = cfg.in_channels;
  for (std::size_t d = 0; d < cfg.depth; ++d) {
    const std::size_t c = cfg.base_channels << d;
    const std::string p = "down" + std::to_string(d);
    out[p + ".conv1.w"] = Shape::nchw(c, c_prev, 3, 3);
    out[p + ".conv1.b"] = Shape::vec(c);
    out[p + ".conv2.w"] = Shape::nchw(c, c, 3, 3);
    out[p + ".conv2.b"] = Shape::vec(c);
    c_prev = c;
  }
  for (std::size_t u = 0; u < cfg.depth; ++u) {
    const std::size_t level = cfg.depth - 1 - u;
    const std::size_t c = cfg.base_channels << level;
    const std::size_t cin =
        u == 0 ? (cfg.base_channels << (cfg.depth - 1)) : 2 * c;
    const std::string p = "up" + std::to_string(u);
    out[p + ".convt.w"] = Shape::nchw(cin, c, 2, 2);
    out[p + ".convt.b"] = Shape::vec(c);
    out[p + ".conv1.w"] = Shape::nchw(c, 2 * c, 3, 3);
    out[p + ".conv1.b"] = Shape::vec(c);
    out[p + ".conv2.w"] = Shape::nchw(c, c, 3, 3);
    out[p + ".conv2.b"] = Shape::vec(c);
  }
  out["head.w"] = Shape::nchw(1, cfg.base_channels, 1, 1);
  out["head.b"] = Shape::vec(1);
  return out;
}

RefinerModel init_refiner(const UNetConfig& cfg) {
  RefinerModel model;
  model.cfg = cfg;
  Rng rng(derive_seed(cfg.seed, "refiner_init", 0));
  // map iteration is name-sorted, so the draw sequence is well defined
  for (const auto& [name, shape] : refiner_param_shapes(cfg)) {
    if (name.ends_with(".b")) {
      model.params[name] = Tensor(shape);
      continue;
    }
    const bool transposed = name.ends_with(".convt.w");
    const std::size_t fan_in = transposed
                                   ? shape.dim[0] * shape.dim[2] * shape.dim[3]
                                   : shape.dim[1] * shape.dim[2] * shape.dim[3];
    model.params[name] = ad::he_uniform(shape, fan_in, rng);
  }
  return model;
}

namespace {

NodeId unet_forward(Tape& t, const UNetConfig& cfg,
                    const std::map<std::string, NodeId>& p, NodeId x) {
  auto at = [&](const std::string& name) {
    auto it = p.find(name);
    if (it == p.end())
      fail(Errc::UntrainedParams, "missing refiner parameter " + name);
    return it->second;
  };
  std::vector<NodeId> skips;
  NodeId cur = x;
  for (std::size_t d = 0; d < cfg.depth; ++d) {
    const std::string pre = "down" + std::to_string(d);
    cur = t.relu(t.conv2d(cur, at(pre + ".conv1.w"), at(pre + ".conv1.b"),
                          ad::Pad::Same));
    cur = t.relu(t.conv2d(cur, at(pre + ".conv2.w"), at(pre + ".conv2.b"),
                          ad::Pad::Same));
    skips.push_back(cur);
    cur = t.maxpool2d(cur);
  }
  for (std::size_t u = 0; u < cfg.depth; ++u) {
    const std::size_t level = cfg.depth - 1 - u;
    const std::string pre = "up" + std::to_string(u);
    cur = t.conv_transpose2d(cur, at(pre + ".convt.w"), at(pre + ".convt.b"));
    cur = t.concat(cur, skips[level], 1);
    cur = t.relu(t.conv2d(cur, at(pre + ".conv1.w"), at(pre + ".conv1.b"),
                          ad::Pad::Same));
    cur = t.relu(t.conv2d(cur, at(pre + ".conv2.w"), at(pre + ".conv2.b"),
                          ad::Pad::Same));
  }
  return t.conv2d(cur, at("head.w"), at("head.b"), ad::Pad::Same);
}

}  // namespace

NodeId refined_prediction(Tape& t, const UNetConfig& cfg,
                          const std::map<std::string, NodeId>& params,
                          NodeId x_padded, std::size_t n_rois) {
  const std::size_t n = n_rois;
  NodeId raw = unet_forward(t, cfg, params, x_padded);
  NodeId m = t.reshape(t.crop2d(raw, 0, 0, n, n), Shape::mat(n, n));
  NodeId sq = t.tanh(m);
  NodeId sym = t.scale(t.add(sq, t.transpose(sq)), 0.5);
  Tensor off_diag = Tensor::full(Shape::mat(n, n), 1.0);
  Tensor eye(Shape::mat(n, n));
  for (std::size_t i = 0; i < n; ++i) {
    off_diag.data[i * n + i] = 0.0;
    eye.data[i * n + i] = 1.0;
  }
  return t.add(t.mul(sym, t.input(off_diag, false)), t.input(eye, false));
}

Tensor refiner_input(const UNetConfig& cfg, const ConnMatrix& sc,
                     const ConnMatrix& fc_sim) {
  const std::size_t n = fc_sim.n_rois();
  if (n > kUNetGrid)
    fail(Errc::RoiCountTooLarge, std::to_string(n) + " ROIs exceed the " +
                                     std::to_string(kUNetGrid) +
                                     "-cell refiner grid");
  if (sc.n_rois() != n)
    fail(Errc::ShapeMismatch, "SC has " + std::to_string(sc.n_rois()) +
                                  " ROIs but simulated FC has " +
                                  std::to_string(n));
  if (sc.kind() != MatrixKind::Structural)
    fail(Errc::NonStructuralInput, "refiner SC channel must be structural");

  Tensor x(Shape::nchw(1, cfg.in_channels, kUNetGrid, kUNetGrid));
  const Mat& sim = fc_sim.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      x.data[i * kUNetGrid + j] = sim(i, j);
  if (cfg.in_channels == 2) {
    const Mat& s = sc.values();
    double mx = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, s(i, j));
    const double inv = mx > 0.0 ? 1.0 / mx : 0.0;
    double* ch1 = x.data.data() + kUNetGrid * kUNetGrid;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ch1[i * kUNetGrid + j] = s(i, j) * inv;
  }
  return x;
}

ConnMatrix refine_fc(const RefinerModel& model, const ConnMatrix& sc,
                     const ConnMatrix& fc_sim) {
  if (model.params.empty())
    fail(Errc::UntrainedParams, "refiner has no parameters");
  Tensor x = refiner_input(model.cfg, sc, fc_sim);
  Tape t;
  std::map<std::string, NodeId> pn;
  for (const auto& [name, tensor] : model.params)
    pn[name] = t.input(tensor, false);
  NodeId pred = refined_prediction(t, model.cfg, pn, t.input(std::move(x), false),
                                   fc_sim.n_rois());
  return ConnMatrix(t.value(pred).to_mat(), MatrixKind::FunctionalPredicted);
}

std::vector<ConnMatrix> refine_cohort(const RefinerModel& model,
                                      const Cohort& cohort,
                                      const std::vector<ConnMatrix>& sims,
                                      int threads) {
  if (sims.size() != cohort.size())
    fail(Errc::LengthMismatch, "got " + std::to_string(sims.size()) +
                                   " simulated FCs for " +
                                   std::to_string(cohort.size()) + " subjects");
  std::vector<ConnMatrix> out(cohort.size(),
                              ConnMatrix(Mat::identity(1), MatrixKind::FunctionalPredicted));
  parallel_for(cohort.size(), threads, [&](std::size_t i) {
    out[i] = refine_fc(model, cohort.subjects[i].sc, sims[i]);
  });
  return out;
}

double refiner_loss(const Mat& pred, const Mat& target, const Mat& fc_sim,
                    double lambda_w) {
  if (!pred.same_shape(target) || !pred.same_shape(fc_sim))
    fail(Errc::ShapeMismatch, "refiner_loss operands differ in shape");
  const std::size_t total = pred.rows() * pred.cols();
  double mse = 0.0, dev = 0.0;
  for (std::size_t i = 0; i < pred.rows(); ++i)
    for (std::size_t j = 0; j < pred.cols(); ++j) {
      const double d = pred(i, j) - target(i, j);
      const double s = pred(i, j) - fc_sim(i, j);
      mse += d * d;
      dev += s * s;
    }
  return mse / static_cast<double>(total) +
         lambda_w * dev / static_cast<double>(total);
}

namespace {

struct SampleGrad {
  double loss = 0.0;
  std::map<std::string, Tensor> grads;
};

SampleGrad sample_pass(const RefinerModel& model, const Tensor& x,
                       const Mat& target, const Mat& sim) {
  Tape t;
  std::map<std::string, NodeId> pn;
  for (const auto& [name, tensor] : model.params)
    pn[name] = t.input(tensor, true);
  NodeId pred =
      refined_prediction(t, model.cfg, pn, t.input(x, false), target.rows());
  NodeId diff = t.sub(pred, t.input(Tensor::from_mat(target), false));
  NodeId loss = t.mean(t.mul(diff, diff));
  if (model.cfg.lambda_w > 0.0) {
    NodeId dev = t.sub(pred, t.input(Tensor::from_mat(sim), false));
    loss = t.add(loss, t.scale(t.mean(t.mul(dev, dev)), model.cfg.lambda_w));
  }
  SampleGrad out;
  out.loss = t.value(loss).scalar_value();
  ad::GradMap g = t.backward(loss);
  for (const auto& [name, id] : pn) out.grads[name] = std::move(g.at(id));
  return out;
}

}  // namespace

RefinerModel train_refiner(const Cohort& cohort,
                           const std::vector<ConnMatrix>& sims,
                           const UNetConfig& cfg, RefinerHistory* history,
                           int threads) {
  cfg.validate();
  const std::size_t e_total = cohort.size();
  if (e_total == 0) fail(Errc::CohortTooSmall, "cannot train on an empty cohort");
  if (sims.size() != e_total)
    fail(Errc::LengthMismatch, "got " + std::to_string(sims.size()) +
                                   " simulated FCs for " +
                                   std::to_string(e_total) + " subjects");
  for (const SubjectRecord& s : cohort.subjects)
    if (!s.fc_empirical)
      fail(Errc::MissingEmpiricalFc,
           "subject " + s.subject_id + " has no empirical FC to train against");

  std::vector<Tensor> xs;
  std::vector<Mat> targets, simmats;
  xs.reserve(e_total);
  for (std::size_t i = 0; i < e_total; ++i) {
    xs.push_back(refiner_input(cfg, cohort.subjects[i].sc, sims[i]));
    targets.push_back(cohort.subjects[i].fc_empirical->values());
    simmats.push_back(sims[i].values());
  }

  RefinerModel model = init_refiner(cfg);
  ad::Adam opt(ad::AdamConfig{cfg.lr});
  if (history) history->epoch_loss.clear();

  std::vector<std::size_t> order(e_total);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(derive_seed(cfg.seed, "refiner_epoch", epoch));
    erng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < e_total; start += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, e_total - start);
      std::vector<SampleGrad> results(bsz);
      parallel_for(bsz, threads, [&](std::size_t b) {
        const std::size_t i = order[start + b];
        results[b] = sample_pass(model, xs[i], targets[i], simmats[i]);
      });
      std::map<std::string, Tensor> grad_sum;
      for (std::size_t b = 0; b < bsz; ++b) {  // fixed-order reduction
        loss_sum += results[b].loss;
        for (auto& [name, g] : results[b].grads) {
          auto [it, fresh] = grad_sum.try_emplace(name, g.shape);
          Tensor& acc = it->second;
          (void)fresh;
          for (std::size_t k = 0; k < g.data.size(); ++k)
            acc.data[k] += g.data[k];
        }
      }
      const double inv = 1.0 / static_cast<double>(bsz);
      for (auto& [name, g] : grad_sum)
        for (double& v : g.data) v *= inv;
      opt.step(model.params, grad_sum);
    }
    if (history)
      history->epoch_loss.push_back(loss_sum / static_cast<double>(e_total));
  }
  return model;
}

std::pair<double, double> eval_refiner_correlation(
    const std::vector<ConnMatrix>& preds,
    const std::vector<ConnMatrix>& targets) {
  if (preds.size() != targets.size() || preds.empty())
    fail(Errc::LengthMismatch, "got " + std::to_string(preds.size()) +
                                   " predictions for " +
                                   std::to_string(targets.size()) + " targets");
  std::vector<double> rs;
  rs.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].n_rois() != targets[i].n_rois())
      fail(Errc::ShapeMismatch, "subject " + std::to_string(i) +
                                    ": prediction and target ROI counts differ");
    try {
      rs.push_back(pearson(upper_triangle(preds[i].values()),
                           upper_triangle(targets[i].values())));
    } catch (const Error& e) {
      if (e.code() == Errc::ZeroVariance)
        fail(Errc::ZeroVariance, "subject " + std::to_string(i) + ": " + e.what());
      throw;
    }
  }
  return mean_sample_std(rs);
}

namespace {

const char* kMetaDepth = "meta.depth";
const char* kMetaBase = "meta.base_channels";
const char* kMetaIn = "meta.in_channels";
const char* kMetaLambda = "meta.lambda_w";

}  // namespace

void save_refiner(const RefinerModel& model, const std::string& path) {
  ParamStore store = model.params;
  store[kMetaDepth] = Tensor::scalar(static_cast<double>(model.cfg.depth));
  store[kMetaBase] = Tensor::scalar(static_cast<double>(model.cfg.base_channels));
  store[kMetaIn] = Tensor::scalar(static_cast<double>(model.cfg.in_channels));
  store[kMetaLambda] = Tensor::scalar(model.cfg.lambda_w);
  ad::save_checkpoint(store, path);
}

RefinerModel load_refiner(const std::string& path) {
  ParamStore store = ad::load_checkpoint(path);
  RefinerModel model;
  auto take_meta = [&](const char* key) {
    auto it = store.find(key);
    if (it == store.end())
      fail(Errc::ParseError, std::string("checkpoint lacks ") + key);
    const double v = it->second.scalar_value();
    store.erase(it);
    return v;
  };
  model.cfg.depth = static_cast<std::size_t>(take_meta(kMetaDepth));
  model.cfg.base_channels = static_cast<std::size_t>(take_meta(kMetaBase));
  model.cfg.in_channels = static_cast<std::size_t>(take_meta(kMetaIn));
  model.cfg.lambda_w = take_meta(kMetaLambda);
  try {
    model.cfg.validate();
  } catch (const Error& e) {
    fail(Errc::ParseError, std::string("checkpoint metadata invalid: ") + e.what());
  }
  const auto expected = refiner_param_shapes(model.cfg);
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
