#include "lungsc/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lungsc/error.hpp"
#include "lungsc/log.hpp"
#include "lungsc/rng.hpp"

namespace fs = std::filesystem;

namespace lungsc {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  try {
    size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

// minimal CSV field split with double-quote support
std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Device device_from_token(const std::string& token) {
  const std::string t = lower(token);
  if (t == "akgc417l") return {DeviceKind::AKGC417L, "AKGC417L"};
  if (t == "meditron") return {DeviceKind::Meditron, "Meditron"};
  if (t == "litt3200") return {DeviceKind::Litt3200, "Litt3200"};
  if (t == "littc2se") return {DeviceKind::LittC2SE, "LittC2SE"};
  return {DeviceKind::other, token};
}

std::string RecordingMeta::stem() const {
  const char* mode = acquisition_mode == AcquisitionMode::single_channel ? "sc" : "mc";
  return patient_id + "_" + recording_index + "_" + chest_location + "_" + mode + "_" +
         device.token;
}

Task task_from_string(const std::string& s) {
  if (s == "alsc4") return Task::alsc4;
  if (s == "alsc2") return Task::alsc2;
  if (s == "rdc3") return Task::rdc3;
  if (s == "rdc2") return Task::rdc2;
  if (s == "crackle2") return Task::crackle2;
  throw ConfigError("unknown task '" + s + "'");
}

std::string to_string(Task t) {
  switch (t) {
    case Task::alsc4: return "alsc4";
    case Task::alsc2: return "alsc2";
    case Task::rdc3: return "rdc3";
    case Task::rdc2: return "rdc2";
    case Task::crackle2: return "crackle2";
  }
  return "?";
}

int task_num_classes(Task t) {
  switch (t) {
    case Task::alsc4: return 4;
    case Task::alsc2: return 2;
    case Task::rdc3: return 3;
    case Task::rdc2: return 2;
    case Task::crackle2: return 2;
  }
  return 0;
}

std::vector<std::string> task_class_names(Task t) {
  switch (t) {
    case Task::alsc4: return {"normal", "crackle", "wheeze", "both"};
    case Task::alsc2: return {"normal", "abnormal"};
    case Task::rdc3: return {"healthy", "chronic", "non_chronic"};
    case Task::rdc2: return {"healthy", "unhealthy"};
    case Task::crackle2: return {"normal", "crackle"};
  }
  return {};
}

RecordingMeta parse_recording_name(const std::string& filename) {
  const fs::path p(filename);
  const std::string ext = lower(p.extension().string());
  if (ext != ".wav")
    throw MalformedName("'" + filename + "': unsupported extension '" + ext + "'");
  const std::string stem = p.stem().string();
  std::vector<std::string> fields = split_on(stem, '_');
  if (fields.size() < 5)
    throw MalformedName("'" + filename + "' has " + std::to_string(fields.size()) +
                        " fields, need at least 5");

  RecordingMeta meta;
  meta.patient_id = fields[0];
  meta.recording_index = fields[1];
  meta.chest_location = fields[2];
  const std::string mode = lower(fields[3]);
  if (mode == "sc") {
    meta.acquisition_mode = AcquisitionMode::single_channel;
  } else if (mode == "mc") {
    meta.acquisition_mode = AcquisitionMode::multi_channel;
  } else {
    warn("'" + filename + "': unknown acquisition mode '" + fields[3] +
         "', assuming single channel");
    meta.acquisition_mode = AcquisitionMode::single_channel;
  }
  // anything past the fourth separator belongs to the device token
  std::string device_token = fields[4];
  for (size_t i = 5; i < fields.size(); ++i) device_token += "_" + fields[i];
  meta.device = device_from_token(device_token);
  meta.path = filename;
  return meta;
}

std::vector<CycleAnnotation> parse_annotation(const std::string& text) {
  std::vector<CycleAnnotation> cycles;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<std::string> cols;
    std::string tok;
    while (ls >> tok) cols.push_back(tok);
    if (cols.empty()) continue;
    if (cols.size() != 4)
      throw MalformedAnnotation("line " + std::to_string(lineno) + ": expected 4 columns, got " +
                                std::to_string(cols.size()));
    double begin, end, crackle, wheeze;
    if (!parse_double(cols[0], begin) || !parse_double(cols[1], end) ||
        !parse_double(cols[2], crackle) || !parse_double(cols[3], wheeze))
      throw MalformedAnnotation("line " + std::to_string(lineno) + ": non-numeric column");
    if (end <= begin)
      throw MalformedAnnotation("line " + std::to_string(lineno) + ": end " + cols[1] +
                                " <= begin " + cols[0]);
    if (begin < 0)
      throw MalformedAnnotation("line " + std::to_string(lineno) + ": negative begin");
    if ((crackle != 0 && crackle != 1) || (wheeze != 0 && wheeze != 1))
      throw MalformedAnnotation("line " + std::to_string(lineno) + ": flags must be 0 or 1");

    CycleAnnotation c;
    c.begin_s = begin;
    c.end_s = end;
    c.crackle = crackle != 0;
    c.wheeze = wheeze != 0;
    const double dur = end - begin;
    if (dur < 0.2 || dur > 16.0)
      warn("line " + std::to_string(lineno) + ": cycle duration " + std::to_string(dur) +
           "s outside the typical [0.2, 16]s range");
    if (!cycles.empty() && begin < cycles.back().end_s)
      warn("line " + std::to_string(lineno) + ": cycle overlaps the previous one");
    cycles.push_back(c);
  }
  return cycles;
}

std::string serialize_annotations(const std::vector<CycleAnnotation>& cycles) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& c : cycles)
    out << c.begin_s << "\t" << c.end_s << "\t" << (c.crackle ? 1 : 0) << "\t"
        << (c.wheeze ? 1 : 0) << "\n";
  return out.str();
}

TaskLabel cycle_label(bool crackle, bool wheeze, Task task) {
  switch (task) {
    case Task::alsc4:
      return {task, crackle ? (wheeze ? 3 : 1) : (wheeze ? 2 : 0)};
    case Task::alsc2:
      return {task, (crackle || wheeze) ? 1 : 0};
    case Task::crackle2:
      return {task, crackle ? 1 : 0};
    default:
      throw UnsupportedTask("cycle_label is undefined for " + to_string(task) +
                            " (labels recordings, not cycles)");
  }
}

TaskLabel diagnosis_label(const std::string& diagnosis, Task task) {
  if (task != Task::rdc3 && task != Task::rdc2)
    throw UnsupportedTask("diagnosis_label is undefined for " + to_string(task));
  static const std::map<std::string, bool> kChronic = {
      {"copd", true},          {"bronchiectasis", true}, {"asthma", true},
      {"urti", false},         {"lrti", false},          {"pneumonia", false},
      {"bronchiolitis", false}};
  const std::string d = lower(diagnosis);
  if (d == "healthy") return {task, 0};
  auto it = kChronic.find(d);
  if (it == kChronic.end()) throw UnknownDiagnosis("'" + diagnosis + "'");
  if (task == Task::rdc2) return {task, 1};
  return {task, it->second ? 1 : 2};
}

std::map<std::string, std::string> read_diagnosis_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open diagnosis table '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    // tab- or comma-separated
    size_t sep = line.find('\t');
    if (sep == std::string::npos) sep = line.find(',');
    if (sep == std::string::npos) {
      warn("diagnosis table: skipping line '" + line + "'");
      continue;
    }
    std::string patient = line.substr(0, sep);
    std::string diag = line.substr(sep + 1);
    while (!diag.empty() && (diag.back() == '\r' || diag.back() == ' ')) diag.pop_back();
    out[patient] = diag;
  }
  return out;
}

SplitRole SplitPlan::role(const std::string& unit_id, int fold) const {
  auto it = fold_assignments.find(unit_id);
  if (it == fold_assignments.end())
    throw LengthMismatch("unit '" + unit_id + "' is not in the split plan");
  if (it->second == fold) return SplitRole::test;
  auto v = validation_folds.find(unit_id);
  if (v != validation_folds.end() && v->second.count(fold)) return SplitRole::validation;
  return SplitRole::train;
}

std::vector<std::string> SplitPlan::units(SplitRole r, int fold) const {
  std::vector<std::string> out;
  for (const auto& [unit, f] : fold_assignments)
    if (role(unit, fold) == r) out.push_back(unit);
  return out;
}

namespace {

// Carve validation patients out of each fold's training side. Patients are
// taken in seeded order until the validation share of units reaches the
// requested fraction.
void assign_validation(SplitPlan& plan,
                       const std::map<std::string, std::vector<std::string>>& units_by_patient,
                       int fold, uint64_t seed, double fraction) {
  std::vector<std::string> train_patients;
  size_t train_units = 0;
  for (const auto& [patient, units] : units_by_patient) {
    bool in_test = false;
    for (const auto& u : units)
      if (plan.fold_assignments.at(u) == fold) in_test = true;
    if (!in_test) {
      train_patients.push_back(patient);
      train_units += units.size();
    }
  }
  if (train_patients.size() < 2)
    throw InsufficientPatients("fold " + std::to_string(fold) +
                               ": need at least 2 training patients to carve validation");
  Rng rng = Rng::child(seed, 0x5a11d + static_cast<uint64_t>(fold));
  rng.shuffle(train_patients);
  size_t val_units = 0;
  const size_t want = static_cast<size_t>(std::llround(fraction * static_cast<double>(train_units)));
  for (const auto& patient : train_patients) {
    if (val_units >= std::max<size_t>(want, 1)) break;
    // never drain training completely
    if (val_units + units_by_patient.at(patient).size() >= train_units) break;
    for (const auto& u : units_by_patient.at(patient)) {
      plan.validation_folds[u].insert(fold);
      ++val_units;
    }
  }
}

}  // namespace

SplitPlan build_split(const std::vector<SplitUnit>& units, SplitScheme scheme, int k,
                      double validation_fraction, uint64_t seed,
                      const std::map<std::string, std::string>& strata,
                      const std::string& split_file) {
  if (units.empty()) throw InsufficientPatients("no units to split");
  if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
    throw ConfigError("validation_fraction must be in (0, 1)");

  std::map<std::string, std::vector<std::string>> units_by_patient;
  for (const auto& u : units) units_by_patient[u.patient_id].push_back(u.unit_id);

  SplitPlan plan;
  plan.scheme = scheme;
  plan.validation_fraction = validation_fraction;
  plan.seed = seed;

  if (scheme == SplitScheme::official_6040) {
    plan.k = 1;
    if (split_file.empty() || !fs::exists(split_file))
      throw SplitFileMissing("official split requires a split file ('" + split_file + "')");
    std::ifstream f(split_file);
    std::map<std::string, std::string> assignment;
    std::string line;
    while (std::getline(f, line)) {
      std::istringstream ls(line);
      std::string unit, role;
      if (!(ls >> unit >> role)) continue;
      assignment[unit] = lower(role);
    }
    for (const auto& u : units) {
      auto it = assignment.find(u.unit_id);
      if (it == assignment.end()) {
        warn("unit '" + u.unit_id + "' missing from split file, assigning to train");
        plan.fold_assignments[u.unit_id] = -1;
      } else {
        plan.fold_assignments[u.unit_id] = (it->second == "test") ? 0 : -1;
      }
    }
    // patient disjointness of the supplied file is asserted, not assumed
    std::map<std::string, int> patient_side;
    for (const auto& u : units) {
      const int side = plan.fold_assignments[u.unit_id] == 0 ? 0 : 1;
      auto [it, inserted] = patient_side.try_emplace(u.patient_id, side);
      if (!inserted && it->second != side)
        throw ConfigError("split file places patient '" + u.patient_id +
                          "' on both sides of the split");
    }
    assign_validation(plan, units_by_patient, 0, seed, validation_fraction);
    return plan;
  }

  if (scheme == SplitScheme::leave_manifest)
    throw ConfigError("leave_manifest splits come from the manifest's fold column");

  // kfold
  if (k < 2) throw ConfigError("kfold needs k >= 2");
  if (static_cast<size_t>(k) > units_by_patient.size())
    throw InsufficientPatients("k=" + std::to_string(k) + " folds but only " +
                               std::to_string(units_by_patient.size()) + " patients");
  plan.k = k;

  // Group patients by stratum, shuffle within each group, then deal them
  // onto folds with one cursor running across groups. Totals stay within
  // one patient of each other and each stratum spreads over the folds.
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& [patient, _] : units_by_patient) {
    auto it = strata.find(patient);
    groups[it == strata.end() ? "" : it->second].push_back(patient);
  }
  Rng rng(splitmix64(seed));
  int cursor = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(k)));
  for (auto& [stratum, patients] : groups) {
    rng.shuffle(patients);
    for (const auto& patient : patients) {
      const int fold = cursor % k;
      cursor = (cursor + 1) % k;
      for (const auto& u : units_by_patient.at(patient)) plan.fold_assignments[u] = fold;
    }
  }
  for (int fold = 0; fold < k; ++fold)
    assign_validation(plan, units_by_patient, fold, seed, validation_fraction);
  return plan;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest '" + path + "'");
  f << "unit_id,kind,path,patient_id,device,begin_s,end_s,label,fold,provenance,source_id\n";
  f.precision(17);
  for (const auto& r : rows) {
    f << r.unit_id << ',' << r.kind << ',' << r.path << ',' << r.patient_id << ',' << r.device
      << ',' << r.begin_s << ',' << r.end_s << ',' << r.label << ',' << r.fold << ','
      << r.provenance << ',' << r.source_id << "\n";
  }
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest '" + path + "'");
  std::vector<ManifestRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("unit_id,", 0) == 0) continue;
    }
    auto fields = csv_fields(line);
    if (fields.size() != 11) throw IoError("manifest row with " + std::to_string(fields.size()) +
                                           " fields: '" + line + "'");
    ManifestRow r;
    r.unit_id = fields[0];
    r.kind = fields[1];
    r.path = fields[2];
    r.patient_id = fields[3];
    r.device = fields[4];
    if (!parse_double(fields[5], r.begin_s) || !parse_double(fields[6], r.end_s))
      throw IoError("manifest row has non-numeric begin/end: '" + line + "'");
    r.label = std::stoi(fields[7]);
    r.fold = std::stoi(fields[8]);
    r.provenance = fields[9];
    r.source_id = fields[10];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<GenericManifestEntry> read_generic_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest '" + path + "'");
  std::vector<GenericManifestEntry> out;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("path,", 0) == 0) continue;
    }
    auto fields = csv_fields(line);
    if (fields.size() < 5)
      throw IoError("generic manifest row needs 5 fields (path,patient,device,diagnosis,cycle_file): '" +
                    line + "'");
    out.push_back({fields[0], fields[1], fields[2], fields[3], fields[4]});
  }
  return out;
}

std::vector<IngestedRecording> scan_icbhi_dir(
    const std::string& dir, const std::map<std::string, std::string>& diagnosis) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<fs::path> wavs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && lower(e.path().extension().string()) == ".wav")
      wavs.push_back(e.path());
  std::sort(wavs.begin(), wavs.end());

  std::vector<IngestedRecording> out;
  for (const auto& wav : wavs) {
    IngestedRecording rec;
    rec.meta = parse_recording_name(wav.filename().string());
    rec.meta.path = wav.string();
    auto d = diagnosis.find(rec.meta.patient_id);
    if (d != diagnosis.end()) rec.meta.diagnosis = d->second;

    fs::path ann = wav;
    ann.replace_extension(".txt");
    if (fs::exists(ann)) {
      std::ifstream f(ann);
      std::stringstream ss;
      ss << f.rdbuf();
      rec.cycles = parse_annotation(ss.str());
    } else {
      warn("no annotation file for '" + wav.string() + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<IngestedRecording> load_generic_corpus(const std::string& manifest_path) {
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<IngestedRecording> out;
  for (const auto& e : read_generic_manifest(manifest_path)) {
    IngestedRecording rec;
    fs::path wav(e.path);
    if (wav.is_relative()) wav = base / wav;
    rec.meta.patient_id = e.patient_id;
    rec.meta.device = device_from_token(e.device);
    rec.meta.diagnosis = e.diagnosis;
    rec.meta.path = wav.string();
    rec.meta.recording_index = wav.stem().string();
    rec.meta.chest_location = "NA";
    if (!e.cycle_file.empty()) {
      fs::path ann(e.cycle_file);
      if (ann.is_relative()) ann = base / ann;
      std::ifstream f(ann);
      if (!f) throw IoError("cannot open cycle file '" + ann.string() + "'");
      std::stringstream ss;
      ss << f.rdbuf();
      rec.cycles = parse_annotation(ss.str());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace lungsc
