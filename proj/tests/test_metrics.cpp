#include <doctest.h>

#include <algorithm>
#include <vector>

#include "lungsc/error.hpp"
#include "lungsc/metrics.hpp"
#include "lungsc/rng.hpp"

using namespace lungsc;

namespace {

// brute-force counting oracle
struct Counts {
  int64_t normal_total = 0, normal_correct = 0;
  int64_t abnormal_total = 0, abnormal_exact = 0;
};

Counts count_oracle(const std::vector<int>& preds, const std::vector<int>& labels) {
  Counts c;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == 0) {
      ++c.normal_total;
      if (preds[i] == 0) ++c.normal_correct;
    } else {
      ++c.abnormal_total;
      if (preds[i] == labels[i]) ++c.abnormal_exact;
    }
  }
  return c;
}

}  // namespace

TEST_CASE("perfect predictions score 1 everywhere") {
  const std::vector<int> labels = {0, 1, 2, 3, 0, 1, 2, 3};
  const auto rep = compute_metrics(labels, labels, Task::alsc4);
  CHECK(rep.SE == 1.0);
  CHECK(rep.SP == 1.0);
  CHECK(rep.AS == 1.0);
  CHECK(rep.HS == 1.0);
}

TEST_CASE("AS identity from the published operating point") {
  // SP 79.34, SE 37.24 -> AS 58.29
  const double SP = 0.7934, SE = 0.3724;
  CHECK(std::abs((SP + SE) / 2.0 - 0.5829) < 1e-12);
}

TEST_CASE("AS and HS identities hold on every emitted report") {
  Rng rng(1);
  for (Task task : {Task::alsc4, Task::alsc2, Task::rdc3, Task::rdc2, Task::crackle2}) {
    const int n = task_num_classes(task);
    std::vector<int> preds(200), labels(200);
    for (int i = 0; i < 200; ++i) {
      preds[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n)));
      labels[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n)));
    }
    const auto rep = compute_metrics(preds, labels, task);
    CHECK(rep.AS == (rep.SE + rep.SP) / 2.0);
    if (rep.SE + rep.SP > 0)
      CHECK(rep.HS == doctest::Approx(2.0 * rep.SE * rep.SP / (rep.SE + rep.SP)).epsilon(1e-15));
    // confusion sums to n_units
    int64_t total = 0;
    for (int64_t v : rep.confusion) total += v;
    CHECK(total == rep.n_units);
  }
}

TEST_CASE("hand-built 10-sample confusions reproduce brute-force counts for all five tasks") {
  Rng rng(2);
  for (Task task : {Task::alsc4, Task::alsc2, Task::rdc3, Task::rdc2, Task::crackle2}) {
    const int n = task_num_classes(task);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<int> preds(10), labels(10);
      for (int i = 0; i < 10; ++i) {
        preds[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n)));
        labels[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n)));
      }
      const auto rep = compute_metrics(preds, labels, task);
      const Counts c = count_oracle(preds, labels);
      const double SP = c.normal_total ? static_cast<double>(c.normal_correct) / c.normal_total : 0.0;
      const double SE = c.abnormal_total ? static_cast<double>(c.abnormal_exact) / c.abnormal_total : 0.0;
      CHECK(rep.SP == SP);
      CHECK(rep.SE == SE);
    }
  }
}

TEST_CASE("multiclass SE gives credit only for the exact abnormal class") {
  // truth: crackle(1), prediction: wheeze(2) -- abnormal but wrong class
  const std::vector<int> labels = {1, 2, 0};
  const std::vector<int> preds = {2, 2, 0};
  const auto rep = compute_metrics(preds, labels, Task::alsc4);
  CHECK(rep.SE == doctest::Approx(0.5));  // only the wheeze counted
  CHECK(rep.SP == 1.0);
}

TEST_CASE("crackle2 reports precision, recall and F1") {
  // tp=2 fp=1 fn=1 tn=2
  const std::vector<int> labels = {1, 1, 1, 0, 0, 0};
  const std::vector<int> preds = {1, 1, 0, 1, 0, 0};
  const auto rep = compute_metrics(preds, labels, Task::crackle2);
  REQUIRE(rep.precision_pos.has_value());
  CHECK(*rep.precision_pos == doctest::Approx(2.0 / 3.0));
  CHECK(*rep.sensitivity_pos == doctest::Approx(2.0 / 3.0));
  CHECK(*rep.f1 == doctest::Approx(2.0 / 3.0));
  // the other tasks do not report them
  const auto rep2 = compute_metrics(preds, labels, Task::alsc2);
  CHECK_FALSE(rep2.precision_pos.has_value());
}

TEST_CASE("metrics are permutation invariant") {
  Rng rng(3);
  std::vector<int> preds(50), labels(50);
  for (int i = 0; i < 50; ++i) {
    preds[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_index(4));
    labels[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_index(4));
  }
  const auto a = compute_metrics(preds, labels, Task::alsc4);
  std::vector<size_t> order(50);
  for (size_t i = 0; i < 50; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> preds2(50), labels2(50);
  for (size_t i = 0; i < 50; ++i) {
    preds2[i] = preds[order[i]];
    labels2[i] = labels[order[i]];
  }
  const auto b = compute_metrics(preds2, labels2, Task::alsc4);
  CHECK(a.confusion == b.confusion);
  CHECK(a.SE == b.SE);
  CHECK(a.SP == b.SP);
}

TEST_CASE("length mismatch raises") {
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{0, 1}, std::vector<int>{0}, Task::alsc2),
                  LengthMismatch);
}

TEST_CASE("majority vote basics") {
  const std::vector<std::vector<double>> probs3(3, {0.5, 0.5});
  CHECK(majority_vote(std::vector<int>{0, 0, 1}, probs3) == 0);
  const std::vector<std::vector<double>> probs1(1, {0.2, 0.8});
  CHECK(majority_vote(std::vector<int>{1}, probs1) == 1);
}

TEST_CASE("majority vote over k identical labels returns that label") {
  for (int k = 1; k <= 7; ++k) {
    std::vector<int> preds(static_cast<size_t>(k), 2);
    std::vector<std::vector<double>> probs(static_cast<size_t>(k), {0.1, 0.2, 0.7});
    CHECK(majority_vote(preds, probs) == 2);
  }
}

TEST_CASE("ties break by mean posterior among tied labels") {
  // [0, 1] tie; class 1 has mean prob 0.6 vs 0.55 for class 0
  const std::vector<int> preds = {0, 1};
  const std::vector<std::vector<double>> probs = {{0.7, 0.5}, {0.4, 0.7}};
  // mean prob class 0 = 0.55, class 1 = 0.6
  CHECK(majority_vote(preds, probs) == 1);
}

TEST_CASE("fully tied votes fall back to the smallest label") {
  const std::vector<int> preds = {0, 1};
  const std::vector<std::vector<double>> probs = {{0.5, 0.5}, {0.5, 0.5}};
  CHECK(majority_vote(preds, probs) == 0);
}

TEST_CASE("empty vote raises") {
  CHECK_THROWS_AS(majority_vote(std::vector<int>{}, {}), EmptyPredictions);
}
