#include "lungsc/cotuning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lungsc/error.hpp"
#include "lungsc/log.hpp"
#include "lungsc/rng.hpp"

namespace lungsc {

using nlohmann::json;

void CategoryRelationship::validate() const {
  if (static_cast<int64_t>(matrix.size()) != n_target * n_source)
    throw ShapeMismatch("relationship matrix size mismatch");
  for (int64_t t = 0; t < n_target; ++t) {
    double sum = 0.0;
    for (int64_t s = 0; s < n_source; ++s) {
      const double v = matrix[static_cast<size_t>(t * n_source + s)];
      if (v < 0.0) throw ShapeMismatch("relationship entry below zero");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw ShapeMismatch("relationship row " + std::to_string(t) + " sums to " +
                          std::to_string(sum));
  }
}

void CategoryRelationship::save(const std::string& path, const std::string& config_hash) const {
  json j;
  j["n_target"] = n_target;
  j["n_source"] = n_source;
  j["method"] = method == Method::direct ? "direct" : "reverse";
  j["calibration_temperature"] = calibration_temperature;
  j["matrix"] = matrix;
  if (!target_given_source.empty()) j["target_given_source"] = target_given_source;
  j["config_hash"] = config_hash;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << j.dump(2) << "\n";
}

CategoryRelationship CategoryRelationship::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  json j;
  f >> j;
  CategoryRelationship rel;
  rel.n_target = j.at("n_target").get<int64_t>();
  rel.n_source = j.at("n_source").get<int64_t>();
  rel.method = j.at("method").get<std::string>() == "reverse" ? Method::reverse : Method::direct;
  rel.calibration_temperature = j.at("calibration_temperature").get<double>();
  rel.matrix = j.at("matrix").get<std::vector<double>>();
  if (j.contains("target_given_source"))
    rel.target_given_source = j.at("target_given_source").get<std::vector<double>>();
  rel.validate();
  return rel;
}

namespace {

// log(sum(exp(logits / T)))
double log_sum_exp_scaled(std::span<const double> logits, double inv_t) {
  double mx = -1e300;
  for (double v : logits) mx = std::max(mx, v * inv_t);
  double acc = 0.0;
  for (double v : logits) acc += std::exp(v * inv_t - mx);
  return mx + std::log(acc);
}

double nll_at_temperature(const std::vector<std::vector<double>>& logits,
                          const std::vector<int>& labels, double t) {
  const double inv_t = 1.0 / t;
  double nll = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    nll += log_sum_exp_scaled(logits[i], inv_t) - logits[i][static_cast<size_t>(labels[i])] * inv_t;
  }
  return nll / static_cast<double>(logits.size());
}

}  // namespace

double calibrate_temperature(const std::vector<std::vector<double>>& logits,
                             const std::vector<int>& labels) {
  if (logits.empty() || logits.size() != labels.size())
    throw EmptyValidation("calibration needs matching, non-empty logits and labels");
  std::set<int> classes(labels.begin(), labels.end());
  if (classes.size() < 2)
    throw DegenerateValidation("calibration data covers a single class");

  // golden-section on log T over a generous bracket
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(0.05), hi = std::log(20.0);
  double x1 = hi - phi * (hi - lo);
  double x2 = lo + phi * (hi - lo);
  double f1 = nll_at_temperature(logits, labels, std::exp(x1));
  double f2 = nll_at_temperature(logits, labels, std::exp(x2));
  for (int it = 0; it < 200; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = nll_at_temperature(logits, labels, std::exp(x1));
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = nll_at_temperature(logits, labels, std::exp(x2));
    }
  }
  return std::exp((lo + hi) / 2.0);
}

CategoryRelationship relationship_direct(const std::vector<std::vector<double>>& source_probs,
                                         const std::vector<int>& target_labels,
                                         int64_t n_target) {
  if (source_probs.empty() || source_probs.size() != target_labels.size())
    throw MissingClassSamples("need matching, non-empty probabilities and labels");
  const int64_t n_source = static_cast<int64_t>(source_probs.front().size());

  CategoryRelationship rel;
  rel.method = CategoryRelationship::Method::direct;
  rel.n_target = n_target;
  rel.n_source = n_source;
  rel.matrix.assign(static_cast<size_t>(n_target * n_source), 0.0);

  std::vector<int64_t> counts(static_cast<size_t>(n_target), 0);
  for (size_t i = 0; i < source_probs.size(); ++i) {
    const int y = target_labels[i];
    if (y < 0 || y >= n_target) throw MissingClassSamples("label out of range");
    if (static_cast<int64_t>(source_probs[i].size()) != n_source)
      throw ShapeMismatch("source probability vectors of unequal length");
    ++counts[static_cast<size_t>(y)];
    for (int64_t s = 0; s < n_source; ++s)
      rel.matrix[static_cast<size_t>(y * n_source + s)] += source_probs[i][static_cast<size_t>(s)];
  }
  for (int64_t t = 0; t < n_target; ++t) {
    if (counts[static_cast<size_t>(t)] == 0)
      throw MissingClassSamples("target class " + std::to_string(t) + " has no samples");
    for (int64_t s = 0; s < n_source; ++s)
      rel.matrix[static_cast<size_t>(t * n_source + s)] /=
          static_cast<double>(counts[static_cast<size_t>(t)]);
  }
  // guard against inputs that are not quite distributions
  for (int64_t t = 0; t < n_target; ++t) {
    double sum = 0.0;
    for (int64_t s = 0; s < n_source; ++s) sum += rel.matrix[static_cast<size_t>(t * n_source + s)];
    if (sum > 0)
      for (int64_t s = 0; s < n_source; ++s) rel.matrix[static_cast<size_t>(t * n_source + s)] /= sum;
  }
  rel.validate();
  return rel;
}

std::vector<double> bayes_invert(std::span<const double> p_t_given_s, int64_t n_target,
                                 int64_t n_source, std::span<const double> prior) {
  if (static_cast<int64_t>(p_t_given_s.size()) != n_target * n_source ||
      static_cast<int64_t>(prior.size()) != n_source)
    throw ShapeMismatch("bayes_invert shape mismatch");
  std::vector<double> out(static_cast<size_t>(n_target * n_source), 0.0);
  for (int64_t t = 0; t < n_target; ++t) {
    double z = 0.0;
    for (int64_t s = 0; s < n_source; ++s) {
      const double v = p_t_given_s[static_cast<size_t>(t * n_source + s)] * prior[static_cast<size_t>(s)];
      out[static_cast<size_t>(t * n_source + s)] = v;
      z += v;
    }
    if (z <= 0.0) throw SingularFit("p(y_t=" + std::to_string(t) + ") is zero under the prior");
    for (int64_t s = 0; s < n_source; ++s) out[static_cast<size_t>(t * n_source + s)] /= z;
  }
  return out;
}

CategoryRelationship relationship_reverse(const std::vector<std::vector<double>>& source_probs,
                                          const std::vector<int>& target_labels,
                                          int64_t n_target, std::span<const double> source_prior,
                                          uint64_t seed) {
  if (source_probs.empty() || source_probs.size() != target_labels.size())
    throw MissingClassSamples("need matching, non-empty probabilities and labels");
  const int64_t n_source = static_cast<int64_t>(source_probs.front().size());
  if (static_cast<int64_t>(source_prior.size()) != n_source)
    throw ShapeMismatch("prior length != n_source");

  // per-class holdout (~20%, at least one when the class has >= 2 samples)
  std::vector<std::vector<size_t>> by_class(static_cast<size_t>(n_target));
  for (size_t i = 0; i < target_labels.size(); ++i) {
    const int y = target_labels[i];
    if (y < 0 || y >= n_target) throw MissingClassSamples("label out of range");
    by_class[static_cast<size_t>(y)].push_back(i);
  }
  std::vector<size_t> fit_idx, holdout_idx;
  Rng rng = Rng::child(seed, 0x5e7ULL);
  for (int64_t t = 0; t < n_target; ++t) {
    auto& idx = by_class[static_cast<size_t>(t)];
    if (idx.empty())
      throw MissingClassSamples("target class " + std::to_string(t) + " has no samples");
    rng.shuffle(idx);
    size_t hold = idx.size() >= 2 ? std::max<size_t>(1, idx.size() / 5) : 0;
    for (size_t i = 0; i < idx.size(); ++i)
      (i < hold ? holdout_idx : fit_idx).push_back(idx[i]);
  }

  const int64_t n_fit = static_cast<int64_t>(fit_idx.size());
  using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  MatRM X(n_fit, n_source);
  std::vector<int> y_fit(static_cast<size_t>(n_fit));
  for (int64_t i = 0; i < n_fit; ++i) {
    for (int64_t s = 0; s < n_source; ++s) X(i, s) = source_probs[fit_idx[static_cast<size_t>(i)]][static_cast<size_t>(s)];
    y_fit[static_cast<size_t>(i)] = target_labels[fit_idx[static_cast<size_t>(i)]];
  }

  // multinomial logistic fit, weight decay 1e-4, full-batch GD with momentum
  const double decay = 1e-4;
  MatRM W = MatRM::Zero(n_target, n_source);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n_target);
  MatRM vW = MatRM::Zero(n_target, n_source);
  Eigen::VectorXd vb = Eigen::VectorXd::Zero(n_target);
  const double lr = 1.0;
  const double mom = 0.9;
  bool singular = false;
  for (int iter = 0; iter < 2000; ++iter) {
    MatRM logits = X * W.transpose();
    logits.rowwise() += b.transpose();
    // softmax rows
    MatRM probs = logits;
    for (int64_t i = 0; i < n_fit; ++i) {
      const double mx = probs.row(i).maxCoeff();
      probs.row(i) = (probs.row(i).array() - mx).exp();
      probs.row(i) /= probs.row(i).sum();
    }
    for (int64_t i = 0; i < n_fit; ++i) probs(i, y_fit[static_cast<size_t>(i)]) -= 1.0;
    MatRM gW = probs.transpose() * X / static_cast<double>(n_fit) + decay * W;
    Eigen::VectorXd gb = probs.colwise().sum().transpose() / static_cast<double>(n_fit);
    if (!gW.allFinite() || !gb.allFinite()) {
      singular = true;
      break;
    }
    vW = mom * vW + gW;
    vb = mom * vb + gb;
    W -= lr * vW;
    b -= lr * vb;
  }
  if (singular || !W.allFinite()) {
    warn("reverse relationship fit diverged, falling back to the direct approach");
    CategoryRelationship rel = relationship_direct(source_probs, target_labels, n_target);
    rel.method = CategoryRelationship::Method::reverse;
    return rel;
  }

  // temperature on the held-out part (fall back to T=1 when impossible)
  double temperature = 1.0;
  if (!holdout_idx.empty()) {
    std::vector<std::vector<double>> hold_logits;
    std::vector<int> hold_labels;
    for (size_t i : holdout_idx) {
      Eigen::VectorXd xi(n_source);
      for (int64_t s = 0; s < n_source; ++s) xi(s) = source_probs[i][static_cast<size_t>(s)];
      Eigen::VectorXd li = W * xi + b;
      hold_logits.emplace_back(li.data(), li.data() + li.size());
      hold_labels.push_back(target_labels[i]);
    }
    try {
      temperature = calibrate_temperature(hold_logits, hold_labels);
    } catch (const DegenerateValidation&) {
      warn("single-class holdout, keeping temperature 1");
    }
  }

  // p(y_t | y_s = s): calibrated softmax of the map at basis vectors
  std::vector<double> p_t_given_s(static_cast<size_t>(n_target * n_source));
  for (int64_t s = 0; s < n_source; ++s) {
    Eigen::VectorXd logits = W.col(s) + b;
    logits /= temperature;
    const double mx = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - mx).exp();
    e /= e.sum();
    for (int64_t t = 0; t < n_target; ++t) p_t_given_s[static_cast<size_t>(t * n_source + s)] = e(t);
  }

  CategoryRelationship rel;
  rel.method = CategoryRelationship::Method::reverse;
  rel.n_target = n_target;
  rel.n_source = n_source;
  rel.calibration_temperature = temperature;
  rel.target_given_source = p_t_given_s;
  rel.matrix = bayes_invert(p_t_given_s, n_target, n_source, source_prior);
  rel.validate();
  return rel;
}

double cross_entropy(std::span<const double> logits, int label) {
  return log_sum_exp_scaled(logits, 1.0) - logits[static_cast<size_t>(label)];
}

double soft_cross_entropy(std::span<const double> logits, std::span<const double> q) {
  if (logits.size() != q.size()) throw ShapeMismatch("soft CE shapes differ");
  const double lse = log_sum_exp_scaled(logits, 1.0);
  double loss = 0.0;
  for (size_t s = 0; s < q.size(); ++s) loss += q[s] * (lse - logits[s]);
  return loss;
}

double loss_cotuning(std::span<const double> target_logits,
                     std::span<const double> source_logits, int y_t,
                     const CategoryRelationship& rel, double lambda) {
  const double hard = cross_entropy(target_logits, y_t);
  if (lambda == 0.0) return hard;
  if (rel.n_target == 0) throw ShapeMismatch("co-tuning loss needs a relationship");
  if (y_t < 0 || y_t >= rel.n_target) throw ShapeMismatch("label outside relationship rows");
  return hard + lambda * soft_cross_entropy(source_logits, rel.row(y_t));
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, int label) {
  std::vector<double> g(logits.size());
  double mx = -1e300;
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    g[i] = std::exp(logits[i] - mx);
    z += g[i];
  }
  for (double& v : g) v /= z;
  g[static_cast<size_t>(label)] -= 1.0;
  return g;
}

std::vector<double> soft_cross_entropy_grad(std::span<const double> logits,
                                            std::span<const double> q) {
  std::vector<double> g(logits.size());
  double mx = -1e300;
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    g[i] = std::exp(logits[i] - mx);
    z += g[i];
  }
  for (size_t i = 0; i < logits.size(); ++i) g[i] = g[i] / z - q[i];
  return g;
}

void TrainConfig::validate() const {
  if (lr_backbone <= 0 || lr_heads <= 0) throw ConfigError("learning rates must be positive");
  if (lambda < 0) throw ConfigError("lambda must be >= 0");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
}

TrainConfig TrainConfig::defaults_for(TrainMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  if (mode == TrainMode::vanilla) {
    cfg.lr_backbone = 0.001;
    cfg.lr_heads = 0.001;
  } else {
    cfg.lr_backbone = 0.001;
    cfg.lr_heads = 0.01;
  }
  return cfg;
}

namespace {

struct BatchEval {
  double loss_sum = 0.0;
  int64_t correct = 0;
  int64_t total = 0;
};

BatchEval evaluate(Model& model, const Dataset& data, int batch_size) {
  BatchEval ev;
  ModelInput input;
  int label = 0;
  std::vector<ModelInput> batch_inputs(static_cast<size_t>(batch_size));
  std::vector<int> batch_labels(static_cast<size_t>(batch_size));
  for (int64_t start = 0; start < data.size; start += batch_size) {
    const int64_t n = std::min<int64_t>(batch_size, data.size - start);
    std::vector<const ModelInput*> ptrs;
    for (int64_t i = 0; i < n; ++i) {
      data.get(start + i, input, label);
      batch_inputs[static_cast<size_t>(i)] = input;
      batch_labels[static_cast<size_t>(i)] = label;
      ptrs.push_back(&batch_inputs[static_cast<size_t>(i)]);
    }
    const Tensor x = batch_to_tensor(ptrs);
    const Tensor pooled = model.backbone->forward(x, false);
    const Tensor logits = model.target_head->forward(pooled, false);
    for (int64_t i = 0; i < n; ++i) {
      std::span<const double> row(logits.data.data() + i * logits.shape[1],
                                  static_cast<size_t>(logits.shape[1]));
      ev.loss_sum += cross_entropy(row, batch_labels[static_cast<size_t>(i)]);
      int64_t arg = 0;
      for (int64_t k = 1; k < logits.shape[1]; ++k)
        if (row[static_cast<size_t>(k)] > row[static_cast<size_t>(arg)]) arg = k;
      if (arg == batch_labels[static_cast<size_t>(i)]) ++ev.correct;
      ++ev.total;
    }
  }
  return ev;
}

}  // namespace

FitResult fit(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
              const CategoryRelationship* rel) {
  cfg.validate();
  const bool cotune = mode_uses_cotuning(cfg.mode);
  if (cotune && (!rel || !model.source_head))
    throw ShapeMismatch("co-tuning mode needs a relationship and a source head");
  if (!cotune && rel)
    warn("relationship supplied but mode is not co-tuning, ignoring it");
  if (rel && model.source_head &&
      rel->n_source != model.source_head->out_dim())
    throw ShapeMismatch("relationship has " + std::to_string(rel->n_source) +
                        " source classes, head has " +
                        std::to_string(model.source_head->out_dim()));
  if (rel && cotune && rel->n_target != model.target_head->out_dim())
    throw ShapeMismatch("relationship/target head class counts differ");

  auto params = model.params();
  nn::Sgd opt(cfg.momentum);
  const std::map<std::string, double> lr = {{"backbone", cfg.lr_backbone},
                                            {"head_target", cfg.lr_heads},
                                            {"head_source", cfg.lr_heads}};

  FitResult result;
  Rng shuffle_rng = Rng::child(cfg.seed, 0x0bafULL);
  std::vector<int64_t> order(static_cast<size_t>(train.size));
  std::iota(order.begin(), order.end(), 0);

  // best-checkpoint snapshot lives in memory
  std::vector<std::vector<double>> best_values;
  auto snapshot = [&]() {
    best_values.clear();
    for (const auto& p : params) best_values.push_back(*p.value);
  };
  auto restore = [&]() {
    for (size_t i = 0; i < params.size(); ++i) *params[i].value = best_values[i];
  };

  ModelInput input;
  int label = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t loss_count = 0;

    for (int64_t start = 0; start < train.size; start += cfg.batch_size) {
      const int64_t n = std::min<int64_t>(cfg.batch_size, train.size - start);
      if (n < 2) {
        warn("dropping trailing batch of size 1");
        break;
      }
      std::vector<ModelInput> inputs(static_cast<size_t>(n));
      std::vector<int> labels(static_cast<size_t>(n));
      std::vector<const ModelInput*> ptrs;
      for (int64_t i = 0; i < n; ++i) {
        train.get(order[static_cast<size_t>(start + i)], input, label);
        inputs[static_cast<size_t>(i)] = input;
        labels[static_cast<size_t>(i)] = label;
        ptrs.push_back(&inputs[static_cast<size_t>(i)]);
      }

      nn::Sgd::zero_grad(params);
      const Tensor x = batch_to_tensor(ptrs);
      const Tensor pooled = model.backbone->forward(x, true);
      const Tensor t_logits = model.target_head->forward(pooled, true);
      Tensor s_logits;
      if (cotune) s_logits = model.source_head->forward(pooled, true);

      double batch_loss = 0.0;
      Tensor dt(t_logits.shape);
      Tensor ds;
      if (cotune) ds = Tensor(s_logits.shape);
      const double inv_n = 1.0 / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) {
        std::span<const double> trow(t_logits.data.data() + i * t_logits.shape[1],
                                     static_cast<size_t>(t_logits.shape[1]));
        const int y = labels[static_cast<size_t>(i)];
        double li = cross_entropy(trow, y);
        auto tg = cross_entropy_grad(trow, y);
        for (int64_t k = 0; k < t_logits.shape[1]; ++k)
          dt.data[static_cast<size_t>(i * t_logits.shape[1] + k)] = tg[static_cast<size_t>(k)] * inv_n;
        if (cotune && cfg.lambda != 0.0) {
          std::span<const double> srow(s_logits.data.data() + i * s_logits.shape[1],
                                       static_cast<size_t>(s_logits.shape[1]));
          li += cfg.lambda * soft_cross_entropy(srow, rel->row(y));
          auto sg = soft_cross_entropy_grad(srow, rel->row(y));
          for (int64_t k = 0; k < s_logits.shape[1]; ++k)
            ds.data[static_cast<size_t>(i * s_logits.shape[1] + k)] =
                cfg.lambda * sg[static_cast<size_t>(k)] * inv_n;
        }
        batch_loss += li * inv_n;
      }
      if (!std::isfinite(batch_loss))
        throw DivergenceDetected("non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(start / cfg.batch_size));

      Tensor dpooled = model.target_head->backward(dt);
      if (cotune && cfg.lambda != 0.0) {
        const Tensor dpooled_s = model.source_head->backward(ds);
        for (size_t i = 0; i < dpooled.data.size(); ++i) dpooled.data[i] += dpooled_s.data[i];
      }
      model.backbone->backward(dpooled);
      opt.step(params, lr);

      loss_sum += batch_loss;
      ++loss_count;
    }

    const BatchEval ev = evaluate(model, val, cfg.batch_size);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    stats.val_loss = ev.total ? ev.loss_sum / static_cast<double>(ev.total) : 0.0;
    stats.val_accuracy = ev.total ? static_cast<double>(ev.correct) / static_cast<double>(ev.total) : 0.0;
    result.history.push_back(stats);

    if (result.best_epoch < 0 || stats.val_accuracy > result.best_val_accuracy) {
      result.best_epoch = epoch;
      result.best_val_accuracy = stats.val_accuracy;
      snapshot();
    }
  }
  if (!best_values.empty()) restore();
  return result;
}

std::vector<std::vector<double>> predict_proba(Model& model, const Dataset& data,
                                               int batch_size) {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(data.size));
  ModelInput input;
  int label = 0;
  for (int64_t start = 0; start < data.size; start += batch_size) {
    const int64_t n = std::min<int64_t>(batch_size, data.size - start);
    std::vector<ModelInput> inputs(static_cast<size_t>(n));
    std::vector<const ModelInput*> ptrs;
    for (int64_t i = 0; i < n; ++i) {
      data.get(start + i, input, label);
      inputs[static_cast<size_t>(i)] = input;
      ptrs.push_back(&inputs[static_cast<size_t>(i)]);
    }
    const Tensor x = batch_to_tensor(ptrs);
    const Tensor pooled = model.backbone->forward(x, false);
    const Tensor logits = model.target_head->forward(pooled, false);
    for (int64_t i = 0; i < n; ++i) {
      std::span<const double> row(logits.data.data() + i * logits.shape[1],
                                  static_cast<size_t>(logits.shape[1]));
      std::vector<double> p(row.size());
      double mx = -1e300;
      for (double v : row) mx = std::max(mx, v);
      double z = 0.0;
      for (size_t k = 0; k < row.size(); ++k) {
        p[k] = std::exp(row[k] - mx);
        z += p[k];
      }
      for (double& v : p) v /= z;
      out.push_back(std::move(p));
    }
  }
  return out;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << "epoch,train_loss,val_loss,val_accuracy\n";
  f.precision(12);
  for (const auto& h : history)
    f << h.epoch << ',' << h.train_loss << ',' << h.val_loss << ',' << h.val_accuracy << "\n";
}

}  // namespace lungsc
