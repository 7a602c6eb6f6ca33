#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace lungsc {

enum class DeviceKind { AKGC417L, Meditron, Litt3200, LittC2SE, other };

struct Device {
  DeviceKind kind = DeviceKind::other;
  std::string token;  // canonical name, or the raw token for `other`

  bool operator==(const Device&) const = default;
};

Device device_from_token(const std::string& token);

enum class AcquisitionMode { single_channel, multi_channel };

struct RecordingMeta {
  std::string patient_id;
  std::string recording_index;
  std::string chest_location;
  AcquisitionMode acquisition_mode = AcquisitionMode::single_channel;
  Device device;
  int sample_rate_hz = 0;   // filled once the audio is opened
  double duration_s = 0.0;  // idem
  std::string diagnosis;    // filled from the diagnosis table
  std::string path;

  std::string stem() const;  // "<patient>_<recindex>_<location>_<mode>_<device>"
};

struct CycleAnnotation {
  double begin_s = 0.0;
  double end_s = 0.0;
  bool crackle = false;
  bool wheeze = false;
};

enum class Task { alsc4, alsc2, rdc3, rdc2, crackle2 };

Task task_from_string(const std::string& s);
std::string to_string(Task t);
int task_num_classes(Task t);
std::vector<std::string> task_class_names(Task t);

struct TaskLabel {
  Task task = Task::alsc4;
  int label = 0;
};

// ICBHI filename convention: patient_recindex_location_mode_device.wav
RecordingMeta parse_recording_name(const std::string& filename);

// Four whitespace-separated columns per line: begin end crackle wheeze.
std::vector<CycleAnnotation> parse_annotation(const std::string& text);
std::string serialize_annotations(const std::vector<CycleAnnotation>& cycles);

TaskLabel cycle_label(bool crackle, bool wheeze, Task task);
TaskLabel diagnosis_label(const std::string& diagnosis, Task task);

// patient_id <tab-or-comma> diagnosis, one per line
std::map<std::string, std::string> read_diagnosis_table(const std::string& path);

enum class SplitScheme { official_6040, kfold, leave_manifest };

struct SplitUnit {
  std::string unit_id;
  std::string patient_id;
};

enum class SplitRole { train, validation, test };

struct SplitPlan {
  SplitScheme scheme = SplitScheme::kfold;
  int k = 1;
  double validation_fraction = 0.2;
  uint64_t seed = 0;
  std::map<std::string, int> fold_assignments;             // unit -> test fold
  std::map<std::string, std::set<int>> validation_folds;   // unit -> folds it validates in

  SplitRole role(const std::string& unit_id, int fold) const;
  std::vector<std::string> units(SplitRole role, int fold) const;
};

// Patient-disjoint splits. official_6040 requires split_file (lines of
// "<unit_id> <train|test>"); kfold stratifies patients by strata (usually
// the diagnosis) and assigns them round-robin under the seed. Validation
// patients are carved from each fold's training side until the validation
// unit share reaches validation_fraction.
SplitPlan build_split(const std::vector<SplitUnit>& units, SplitScheme scheme, int k,
                      double validation_fraction, uint64_t seed,
                      const std::map<std::string, std::string>& strata = {},
                      const std::string& split_file = "");

// Manifest row: one per unit (cycle or recording), the normalized exchange
// format every later stage consumes.
struct ManifestRow {
  std::string unit_id;     // e.g. "101_1b1_Al_sc_Meditron#3" for cycle 3
  std::string kind;        // "cycle" | "recording"
  std::string path;        // audio file
  std::string patient_id;
  std::string device;      // device token
  double begin_s = 0.0;
  double end_s = 0.0;
  int label = -1;
  int fold = -1;
  std::string provenance;  // "orig" or augmentation op chain
  std::string source_id;   // unit this row was augmented from ("" for orig)
};

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::string& path);

// Generic corpus manifest (CSV): path,patient,device,diagnosis,cycle_file.
struct GenericManifestEntry {
  std::string path;
  std::string patient_id;
  std::string device;
  std::string diagnosis;
  std::string cycle_file;
};
std::vector<GenericManifestEntry> read_generic_manifest(const std::string& path);

// Scans a directory of ICBHI-style wav/txt pairs.
struct IngestedRecording {
  RecordingMeta meta;
  std::vector<CycleAnnotation> cycles;
};
std::vector<IngestedRecording> scan_icbhi_dir(const std::string& dir,
                                              const std::map<std::string, std::string>& diagnosis);
std::vector<IngestedRecording> load_generic_corpus(const std::string& manifest_path);

}  // namespace lungsc
