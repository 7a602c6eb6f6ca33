#include "lungsc/metrics.hpp"

#include <algorithm>

#include "lungsc/error.hpp"

namespace lungsc {

MetricsReport compute_metrics(std::span<const int> preds, std::span<const int> labels,
                              Task task) {
  if (preds.size() != labels.size())
    throw LengthMismatch(std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
  const int n = task_num_classes(task);
  MetricsReport rep;
  rep.task = task;
  rep.n_classes = n;
  rep.n_units = static_cast<int64_t>(preds.size());
  rep.confusion.assign(static_cast<size_t>(n) * n, 0);

  for (size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n || preds[i] < 0 || preds[i] >= n)
      throw LengthMismatch("label/prediction outside the task's class range");
    ++rep.confusion[static_cast<size_t>(labels[i] * n + preds[i])];
  }

  // class 0 is the normal/healthy class in every task
  int64_t normal_total = 0, normal_correct = 0;
  int64_t abnormal_total = 0, abnormal_correct = 0;
  for (int t = 0; t < n; ++t) {
    int64_t row_total = 0;
    for (int p = 0; p < n; ++p) row_total += rep.cm(t, p);
    if (t == 0) {
      normal_total = row_total;
      normal_correct = rep.cm(0, 0);
    } else {
      abnormal_total += row_total;
      abnormal_correct += rep.cm(t, t);  // exact-class credit only
    }
  }
  rep.SP = normal_total > 0 ? static_cast<double>(normal_correct) / static_cast<double>(normal_total) : 0.0;
  rep.SE = abnormal_total > 0 ? static_cast<double>(abnormal_correct) / static_cast<double>(abnormal_total) : 0.0;
  rep.AS = (rep.SE + rep.SP) / 2.0;
  rep.HS = (rep.SE + rep.SP) > 0 ? 2.0 * rep.SE * rep.SP / (rep.SE + rep.SP) : 0.0;

  if (task == Task::crackle2) {
    const int64_t tp = rep.cm(1, 1);
    const int64_t fp = rep.cm(0, 1);
    const int64_t fn = rep.cm(1, 0);
    const double prec = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    rep.precision_pos = prec;
    rep.sensitivity_pos = rec;
    rep.f1 = (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  return rep;
}

int majority_vote(std::span<const int> segment_predictions,
                  const std::vector<std::vector<double>>& tiebreak_probs) {
  if (segment_predictions.empty()) throw EmptyPredictions("no segment predictions to vote on");
  int max_label = 0;
  for (int p : segment_predictions) max_label = std::max(max_label, p);
  std::vector<int64_t> counts(static_cast<size_t>(max_label) + 1, 0);
  for (int p : segment_predictions) {
    if (p < 0) throw EmptyPredictions("negative label in vote");
    ++counts[static_cast<size_t>(p)];
  }
  int64_t best = *std::max_element(counts.begin(), counts.end());
  std::vector<int> tied;
  for (int l = 0; l <= max_label; ++l)
    if (counts[static_cast<size_t>(l)] == best) tied.push_back(l);
  if (tied.size() == 1) return tied.front();

  // mean posterior among the tied labels decides; ties beyond that go to
  // the smallest label so the result stays deterministic
  if (tiebreak_probs.size() != segment_predictions.size())
    throw LengthMismatch("tie-break probabilities do not match predictions");
  int winner = tied.front();
  double best_mean = -1.0;
  for (int l : tied) {
    double acc = 0.0;
    for (const auto& p : tiebreak_probs) {
      if (l >= static_cast<int>(p.size()))
        throw LengthMismatch("probability vector too short for label " + std::to_string(l));
      acc += p[static_cast<size_t>(l)];
    }
    const double mean = acc / static_cast<double>(tiebreak_probs.size());
    if (mean > best_mean + 1e-15) {
      best_mean = mean;
      winner = l;
    }
  }
  return winner;
}

}  // namespace lungsc
