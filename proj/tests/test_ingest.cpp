#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "lungsc/error.hpp"
#include "lungsc/ingest.hpp"
#include "lungsc/log.hpp"

using namespace lungsc;

TEST_CASE("parse ICBHI filename") {
  const auto meta = parse_recording_name("101_1b1_Al_sc_Meditron.wav");
  CHECK(meta.patient_id == "101");
  CHECK(meta.recording_index == "1b1");
  CHECK(meta.chest_location == "Al");
  CHECK(meta.acquisition_mode == AcquisitionMode::single_channel);
  CHECK(meta.device.kind == DeviceKind::Meditron);
  CHECK(meta.device.token == "Meditron");
  CHECK(meta.stem() == "101_1b1_Al_sc_Meditron");
}

TEST_CASE("parse LittC2SE device") {
  const auto meta = parse_recording_name("226_1b1_Pl_sc_LittC2SE.wav");
  CHECK(meta.device.kind == DeviceKind::LittC2SE);
  CHECK(meta.patient_id == "226");
}

TEST_CASE("too few fields is malformed") {
  CHECK_THROWS_AS(parse_recording_name("x.wav"), MalformedName);
  CHECK_THROWS_AS(parse_recording_name("a_b_c_d.wav"), MalformedName);
}

TEST_CASE("unsupported extension is malformed") {
  CHECK_THROWS_AS(parse_recording_name("101_1b1_Al_sc_Meditron.mp3"), MalformedName);
}

TEST_CASE("unknown device tokens map to other with the token preserved") {
  const auto meta = parse_recording_name("42_1a1_Tc_mc_SomeNewDevice.wav");
  CHECK(meta.device.kind == DeviceKind::other);
  CHECK(meta.device.token == "SomeNewDevice");
  CHECK(meta.acquisition_mode == AcquisitionMode::multi_channel);
}

TEST_CASE("annotation parsing: single normal cycle") {
  const auto cycles = parse_annotation("0.036 0.579 0 0\n");
  REQUIRE(cycles.size() == 1);
  CHECK(cycles[0].begin_s == doctest::Approx(0.036));
  CHECK(cycles[0].end_s == doctest::Approx(0.579));
  CHECK_FALSE(cycles[0].crackle);
  CHECK_FALSE(cycles[0].wheeze);
}

TEST_CASE("annotation parsing: end before begin is malformed") {
  CHECK_THROWS_AS(parse_annotation("1.0 0.5 0 1\n"), MalformedAnnotation);
}

TEST_CASE("annotation parsing: non-numeric column is malformed") {
  CHECK_THROWS_AS(parse_annotation("0.0 1.0 x 0\n"), MalformedAnnotation);
}

TEST_CASE("annotation parsing preserves file order") {
  std::string text;
  for (int i = 0; i < 10; ++i)
    text += std::to_string(i) + ".0 " + std::to_string(i) + ".5 " + std::to_string(i % 2) + " 0\n";
  const auto cycles = parse_annotation(text);
  REQUIRE(cycles.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(cycles[static_cast<size_t>(i)].begin_s == doctest::Approx(i));
    CHECK(cycles[static_cast<size_t>(i)].crackle == (i % 2 == 1));
  }
}

TEST_CASE("overlapping cycles warn but parse") {
  int warnings = 0;
  set_warn_sink([&](const std::string&) { ++warnings; });
  const auto cycles = parse_annotation("0.0 2.0 0 0\n1.5 3.5 1 0\n");
  set_warn_sink(nullptr);
  CHECK(cycles.size() == 2);
  CHECK(warnings >= 1);
}

TEST_CASE("serialize then parse is identity") {
  std::vector<CycleAnnotation> cycles = {
      {0.036, 0.579, false, false}, {0.579, 2.45, true, false}, {2.45, 5.0, true, true}};
  const auto back = parse_annotation(serialize_annotations(cycles));
  REQUIRE(back.size() == cycles.size());
  for (size_t i = 0; i < cycles.size(); ++i) {
    CHECK(back[i].begin_s == cycles[i].begin_s);
    CHECK(back[i].end_s == cycles[i].end_s);
    CHECK(back[i].crackle == cycles[i].crackle);
    CHECK(back[i].wheeze == cycles[i].wheeze);
  }
}

TEST_CASE("cycle_label covers all tasks and flag combinations") {
  CHECK(cycle_label(false, false, Task::alsc4).label == 0);
  CHECK(cycle_label(true, false, Task::alsc4).label == 1);
  CHECK(cycle_label(false, true, Task::alsc4).label == 2);
  CHECK(cycle_label(true, true, Task::alsc4).label == 3);

  CHECK(cycle_label(false, false, Task::alsc2).label == 0);
  CHECK(cycle_label(true, false, Task::alsc2).label == 1);
  CHECK(cycle_label(false, true, Task::alsc2).label == 1);
  CHECK(cycle_label(true, true, Task::alsc2).label == 1);

  CHECK(cycle_label(true, false, Task::crackle2).label == 1);
  CHECK(cycle_label(true, true, Task::crackle2).label == 1);
  CHECK(cycle_label(false, true, Task::crackle2).label == 0);
}

TEST_CASE("cycle_label is surjective onto each task's label set") {
  for (Task task : {Task::alsc4, Task::alsc2, Task::crackle2}) {
    std::set<int> seen;
    for (bool c : {false, true})
      for (bool w : {false, true}) seen.insert(cycle_label(c, w, task).label);
    CHECK(static_cast<int>(seen.size()) == (task == Task::alsc4 ? 4 : 2));
    for (int l : seen) {
      CHECK(l >= 0);
      CHECK(l < task_num_classes(task));
    }
  }
}

TEST_CASE("cycle_label rejects recording-level tasks") {
  CHECK_THROWS_AS(cycle_label(true, false, Task::rdc3), UnsupportedTask);
  CHECK_THROWS_AS(cycle_label(true, false, Task::rdc2), UnsupportedTask);
}

TEST_CASE("diagnosis_label maps the eight-token vocabulary") {
  CHECK(diagnosis_label("COPD", Task::rdc3).label == 1);
  CHECK(diagnosis_label("Bronchiectasis", Task::rdc3).label == 1);
  CHECK(diagnosis_label("Asthma", Task::rdc3).label == 1);
  CHECK(diagnosis_label("URTI", Task::rdc3).label == 2);
  CHECK(diagnosis_label("LRTI", Task::rdc3).label == 2);
  CHECK(diagnosis_label("Pneumonia", Task::rdc3).label == 2);
  CHECK(diagnosis_label("Bronchiolitis", Task::rdc3).label == 2);
  CHECK(diagnosis_label("Healthy", Task::rdc3).label == 0);

  CHECK(diagnosis_label("Healthy", Task::rdc2).label == 0);
  CHECK(diagnosis_label("COPD", Task::rdc2).label == 1);
  CHECK(diagnosis_label("URTI", Task::rdc2).label == 1);
}

TEST_CASE("unknown diagnosis raises") {
  CHECK_THROWS_AS(diagnosis_label("Influenza", Task::rdc3), UnknownDiagnosis);
}

TEST_CASE("diagnosis_label rejects cycle tasks") {
  CHECK_THROWS_AS(diagnosis_label("COPD", Task::alsc4), UnsupportedTask);
}

namespace {

std::vector<SplitUnit> synth_units(int patients, int per_patient) {
  std::vector<SplitUnit> units;
  for (int p = 0; p < patients; ++p)
    for (int r = 0; r < per_patient; ++r)
      units.push_back({"p" + std::to_string(p) + "_rec" + std::to_string(r),
                       "p" + std::to_string(p)});
  return units;
}

}  // namespace

TEST_CASE("kfold split is patient disjoint with balanced folds") {
  const auto units = synth_units(23, 3);
  const auto plan = build_split(units, SplitScheme::kfold, 7, 0.2, 42);
  // patient-level fold sizes differ by at most one
  std::map<int, std::set<std::string>> patients_per_fold;
  for (const auto& u : units)
    patients_per_fold[plan.fold_assignments.at(u.unit_id)].insert(u.patient_id);
  size_t lo = 1000, hi = 0;
  for (const auto& [fold, ps] : patients_per_fold) {
    lo = std::min(lo, ps.size());
    hi = std::max(hi, ps.size());
  }
  CHECK(hi - lo <= 1);

  for (int fold = 0; fold < 7; ++fold) {
    std::set<std::string> train_p, val_p, test_p;
    for (const auto& u : units) {
      switch (plan.role(u.unit_id, fold)) {
        case SplitRole::train: train_p.insert(u.patient_id); break;
        case SplitRole::validation: val_p.insert(u.patient_id); break;
        case SplitRole::test: test_p.insert(u.patient_id); break;
      }
    }
    for (const auto& p : test_p) {
      CHECK(train_p.count(p) == 0);
      CHECK(val_p.count(p) == 0);
    }
    for (const auto& p : val_p) CHECK(train_p.count(p) == 0);
    CHECK(!val_p.empty());
  }
}

TEST_CASE("stratified kfold places each minority patient in exactly one test fold") {
  // 16 healthy + 7 IPF patients over 7 folds: each IPF patient tests once
  std::vector<SplitUnit> units;
  std::map<std::string, std::string> strata;
  for (int p = 0; p < 16; ++p) {
    const std::string id = "h" + std::to_string(p);
    units.push_back({id + "_rec", id});
    strata[id] = "healthy";
  }
  for (int p = 0; p < 7; ++p) {
    const std::string id = "ipf" + std::to_string(p);
    units.push_back({id + "_rec", id});
    strata[id] = "IPF";
  }
  const auto plan = build_split(units, SplitScheme::kfold, 7, 0.2, 11, strata);
  std::map<int, int> ipf_per_fold;
  for (const auto& u : units)
    if (strata.at(u.patient_id) == "IPF") ++ipf_per_fold[plan.fold_assignments.at(u.unit_id)];
  CHECK(ipf_per_fold.size() == 7);
  for (const auto& [fold, count] : ipf_per_fold) CHECK(count == 1);
}

TEST_CASE("split is deterministic under a fixed seed") {
  const auto units = synth_units(12, 2);
  const auto a = build_split(units, SplitScheme::kfold, 4, 0.2, 99);
  const auto b = build_split(units, SplitScheme::kfold, 4, 0.2, 99);
  CHECK(a.fold_assignments == b.fold_assignments);
  CHECK(a.validation_folds == b.validation_folds);
  const auto c = build_split(units, SplitScheme::kfold, 4, 0.2, 100);
  CHECK(a.fold_assignments != c.fold_assignments);
}

TEST_CASE("degenerate splits raise InsufficientPatients") {
  CHECK_THROWS_AS(build_split(synth_units(1, 5), SplitScheme::kfold, 5, 0.2, 1),
                  InsufficientPatients);
  CHECK_THROWS_AS(build_split({}, SplitScheme::kfold, 2, 0.2, 1), InsufficientPatients);
}

TEST_CASE("official split requires the split file") {
  CHECK_THROWS_AS(
      build_split(synth_units(4, 1), SplitScheme::official_6040, 1, 0.2, 1, {}, ""),
      SplitFileMissing);
}

TEST_CASE("official split reads the file and checks patient disjointness") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "lungsc_split_test";
  fs::create_directories(dir);
  const auto units = synth_units(4, 2);
  {
    std::ofstream f(dir / "split.txt");
    f << "p0_rec0\ttrain\np0_rec1\ttrain\np1_rec0\ttest\np1_rec1\ttest\n"
      << "p2_rec0\ttrain\np2_rec1\ttrain\np3_rec0\ttest\np3_rec1\ttest\n";
  }
  const auto plan = build_split(units, SplitScheme::official_6040, 1, 0.3, 5, {},
                                (dir / "split.txt").string());
  CHECK(plan.role("p1_rec0", 0) == SplitRole::test);
  CHECK(plan.role("p3_rec1", 0) == SplitRole::test);
  const auto role0 = plan.role("p0_rec0", 0);
  CHECK(role0 != SplitRole::test);

  {
    std::ofstream f(dir / "bad.txt");
    f << "p0_rec0\ttrain\np0_rec1\ttest\np1_rec0\ttest\np1_rec1\ttest\n"
      << "p2_rec0\ttrain\np2_rec1\ttrain\np3_rec0\ttrain\np3_rec1\ttest\n";
  }
  CHECK_THROWS_AS(build_split(units, SplitScheme::official_6040, 1, 0.3, 5, {},
                              (dir / "bad.txt").string()),
                  ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("manifest round trip") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "lungsc_manifest_test.csv";
  std::vector<ManifestRow> rows(2);
  rows[0] = {"u1", "cycle", "/tmp/a.wav", "p1", "devA", 0.1, 2.3, 1, 0, "orig", ""};
  rows[1] = {"u1~vtlp", "cycle", "/tmp/a.wav", "p1", "devA", 0.1, 2.3, 1, 0,
             "vtlp(1.05;3400)", "u1"};
  write_manifest(path.string(), rows);
  const auto back = read_manifest(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].unit_id == "u1");
  CHECK(back[0].begin_s == 0.1);
  CHECK(back[1].provenance == "vtlp(1.05;3400)");
  CHECK(back[1].source_id == "u1");
  fs::remove(path);
}

TEST_CASE("diagnosis table accepts tabs and commas") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "lungsc_diag_test.txt";
  {
    std::ofstream f(path);
    f << "101\tURTI\n102,Healthy\n103\tCOPD\n";
  }
  const auto table = read_diagnosis_table(path.string());
  CHECK(table.at("101") == "URTI");
  CHECK(table.at("102") == "Healthy");
  CHECK(table.at("103") == "COPD");
  fs::remove(path);
}
