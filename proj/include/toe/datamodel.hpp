#pragma once

// Instances, cohorts, evidence masks and search traces, plus their on-disk
// JSON-lines forms.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "toe/numerics.hpp"

namespace toe {

using Json = nlohmann::ordered_json;

inline constexpr int kCohortFormatVersion = 1;

struct Dims {
  int T = 24;
  int D = 8;
  int M_max = 20;
  int E_dim = 16;
  int D_cxr = 4;
  int D_ecg = 4;

  bool operator==(const Dims&) const = default;
};

enum class Split { train, val, test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

enum class Modality : std::uint8_t { ts = 0, note = 1 };

/// One searchable evidence unit: an hour of the time series or a note chunk.
/// Ordered by modality (ts first) then index.
struct UnitRef {
  Modality modality = Modality::ts;
  int index = 0;

  std::string tag() const;
  static UnitRef parse(const std::string& tag);
  auto operator<=>(const UnitRef&) const = default;
};

/// Selection masks over the two searchable streams.
struct MaskPair {
  Mask ts;
  Mask note;

  static MaskPair empty(const Dims& dims);
  static MaskPair full(const Dims& dims, const Mask& presence);

  int size() const;  // evidence size K
  bool contains(UnitRef u) const;
  void set(UnitRef u, bool on = true);
  /// Selected units in (modality, index) order.
  std::vector<UnitRef> units() const;

  bool operator==(const MaskPair& o) const { return ts == o.ts && note == o.note; }
};

struct ContextBlock {
  Vector cxr;
  bool has_cxr = false;
  Vector ecg;
  bool has_ecg = false;
};

struct Instance {
  std::string id;
  Split split = Split::train;
  int label = 0;
  Matrix ts;        // T x D hourly features
  Matrix note_emb;  // M_max x E_dim cached chunk embeddings
  Mask presence;    // M_max
  ContextBlock context;
  std::optional<MaskPair> ground_truth;

  int valid_units() const { return static_cast<int>(ts.rows()) + static_cast<int>(presence.cast<int>().sum()); }
};

struct Cohort {
  Dims dims;
  std::vector<Instance> instances;
  /// Free-form provenance carried in the file header (generator config,
  /// injected spurious feature, ...).
  Json meta = Json::object();

  std::vector<const Instance*> split(Split s) const;
};

/// Complement of a selection: every hour, and only the present note chunks.
MaskPair complement(const MaskPair& mask, const Mask& presence);

/// Throws ValidationError naming the instance and field on any violation.
void validate_instance(const Instance& inst, const Dims& dims);
void validate_mask(const MaskPair& mask, const Instance& inst, const std::string& what);

Cohort load_cohort(const std::filesystem::path& path);
void save_cohort(const Cohort& cohort, const std::filesystem::path& path);
std::string cohort_to_string(const Cohort& cohort);
Cohort cohort_from_string(const std::string& text);

enum class Termination { thresholds_met, budget_exhausted };
const char* to_string(Termination t);
Termination termination_from_string(const std::string& s);

struct TraceStep {
  UnitRef unit;
  Real C = 0;
  Real S = 0;
  int K = 0;
  Real score = 0;
  Real p = 0;
};

/// Auditable record of one beam search: the construction path of the
/// returned state, one step per added unit.
struct Trace {
  std::string id;
  Real p_full = 0;
  int y_hat_full = 0;
  std::vector<TraceStep> steps;
  MaskPair final_mask;
  Termination termination = Termination::budget_exhausted;
  int candidate_count = 0;
};

Json trace_to_json(const Trace& t);
Trace trace_from_json(const Json& j);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace toe
