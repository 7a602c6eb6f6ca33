#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lungsc/backbone.hpp"
#include "lungsc/tensor.hpp"

namespace lungsc {

// Row-stochastic p(y_s | y_t): row t is the distribution over source
// categories for target label t.
struct CategoryRelationship {
  std::vector<double> matrix;  // n_target x n_source row-major
  int64_t n_target = 0;
  int64_t n_source = 0;
  enum class Method { direct, reverse } method = Method::direct;
  double calibration_temperature = 1.0;

  // reverse approach only: the fitted p(y_t | y_s) table (column s sums
  // to 1), kept for audit and for checking the Bayes inversion.
  std::vector<double> target_given_source;

  std::span<const double> row(int64_t t) const {
    return {matrix.data() + t * n_source, static_cast<size_t>(n_source)};
  }
  void validate() const;  // rows sum to 1 within 1e-6, entries >= 0

  void save(const std::string& path, const std::string& config_hash) const;
  static CategoryRelationship load(const std::string& path);
};

// Single positive temperature minimizing the NLL of softmax(logits / T)
// against the labels; bracketed golden-section search on log T.
double calibrate_temperature(const std::vector<std::vector<double>>& logits,
                             const std::vector<int>& labels);

// Row y = mean of source probability vectors over samples with label y.
CategoryRelationship relationship_direct(const std::vector<std::vector<double>>& source_probs,
                                         const std::vector<int>& target_labels,
                                         int64_t n_target);

// p(y_s|y_t) from p(y_t|y_s) and a source prior via Bayes' rule.
// p_t_given_s is n_target x n_source row-major with columns summing to 1.
std::vector<double> bayes_invert(std::span<const double> p_t_given_s, int64_t n_target,
                                 int64_t n_source, std::span<const double> prior);

// Fits a calibrated multinomial-logistic map source_probs -> target labels
// on held-out data, reads p(y_t|y_s) off basis vectors, then Bayes-inverts
// with the prior. Falls back to the direct approach on a singular fit.
CategoryRelationship relationship_reverse(const std::vector<std::vector<double>>& source_probs,
                                          const std::vector<int>& target_labels,
                                          int64_t n_target, std::span<const double> source_prior,
                                          uint64_t seed);

// softmax cross-entropy against a hard label
double cross_entropy(std::span<const double> logits, int label);
// soft-label cross-entropy: -sum_s q_s log softmax(logits)_s
double soft_cross_entropy(std::span<const double> logits, std::span<const double> q);

// CE(target_logits, y) + lambda * SoftCE(source_logits, rel.row(y)).
// lambda == 0 skips the source term entirely, so the reduction to the
// vanilla objective is bit-exact.
double loss_cotuning(std::span<const double> target_logits,
                     std::span<const double> source_logits, int y_t,
                     const CategoryRelationship& rel, double lambda);

// d/dlogits of the hard and soft cross-entropies (softmax - target).
std::vector<double> cross_entropy_grad(std::span<const double> logits, int label);
std::vector<double> soft_cross_entropy_grad(std::span<const double> logits,
                                            std::span<const double> q);

struct TrainConfig {
  TrainMode mode = TrainMode::vanilla;
  double lambda = 1.0;
  double lr_backbone = 0.001;
  double lr_heads = 0.001;  // 0.01 in co-tuning / stochnorm modes
  double momentum = 0.9;
  int batch_size = 32;
  int epochs = 150;
  uint64_t seed = 0;

  void validate() const;
  static TrainConfig defaults_for(TrainMode mode);
};

// Index-addressable training data; get() fills one example.
struct Dataset {
  int64_t size = 0;
  std::function<void(int64_t idx, ModelInput& x, int& label)> get;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FitResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
};

// SGD-with-momentum fine-tuning. Weights update after every mini-batch;
// the best checkpoint by validation accuracy is kept in the model (training
// ends with the best parameters restored). Non-finite loss raises
// DivergenceDetected.
FitResult fit(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
              const CategoryRelationship* rel);

// Eval-mode class probabilities from the target head (G never participates).
std::vector<std::vector<double>> predict_proba(Model& model, const Dataset& data,
                                               int batch_size = 32);

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace lungsc
