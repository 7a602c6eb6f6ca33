#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungsc/ingest.hpp"

namespace lungsc {

struct MetricsReport {
  Task task = Task::alsc4;
  int n_classes = 0;
  std::vector<int64_t> confusion;  // n x n row-major, rows = truth, cols = prediction
  double SE = 0.0;  // correctly classified abnormal (exact class) / total abnormal
  double SP = 0.0;  // correct normal / total normal
  double AS = 0.0;  // (SE + SP) / 2
  double HS = 0.0;  // 2 SE SP / (SE + SP)
  std::optional<double> precision_pos;  // P+ for crackle detection
  std::optional<double> sensitivity_pos;
  std::optional<double> f1;
  int64_t n_units = 0;
  int fold = -1;
  uint64_t run_seed = 0;

  int64_t cm(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth * n_classes + pred)];
  }
};

MetricsReport compute_metrics(std::span<const int> preds, std::span<const int> labels,
                              Task task);

// Most frequent label; ties go to the tied label with the highest mean
// posterior; remaining ties to the smallest label.
int majority_vote(std::span<const int> segment_predictions,
                  const std::vector<std::vector<double>>& tiebreak_probs);

}  // namespace lungsc
