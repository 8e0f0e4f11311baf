#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qfl/data.hpp"
#include "qfl/federation.hpp"

namespace qfl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitSecurity = 3;
inline constexpr int kExitIo = 4;

enum class PartitionMode { Iid, LabelSkew };

// Fully resolved experiment description. Everything an experiment does is
// a pure function of this struct.
struct ExperimentConfig {
  std::uint64_t master_seed = 42;
  std::size_t num_clients = 4;

  // data
  std::size_t samples_per_class = 100;
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  double noise_sigma = 0.1;
  PartitionMode partition = PartitionMode::Iid;
  double skew = 0.0;
  double test_fraction = 0.2;

  std::optional<Architecture> architecture;  // absent = default for the image size

  TrainingOptions training;
  QkdSettings qkd;
  TransportMode transport = TransportMode::Encrypted;
  AttackScenario attack;
  AggregationMode aggregation;
  bool parallel_clients = false;

  Architecture resolved_architecture() const;
};

// Parses and validates a JSON config document. Unknown fields are rejected
// by name; out-of-range values are rejected with the permitted range.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Canonical echo of a resolved config; parse(dump(cfg)) is the identity.
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

// Deterministic data pipeline and federation setup for a config.
FederationConfig build_federation_config(const ExperimentConfig& cfg);

nlohmann::ordered_json round_record_to_json(const RoundRecord& rec);

// JSON-lines metrics, one object per round.
void emit_metrics(const std::vector<RoundRecord>& records, const std::string& path);

// Metrics content with volatile (timing) fields stripped, for byte-exact
// determinism comparisons.
std::string canonical_metrics_content(const std::string& metrics_path);
nlohmann::ordered_json strip_volatile_fields(nlohmann::ordered_json j);

struct ExperimentOutcome {
  TrainingResult training;
  int exit_code = kExitOk;
  std::string metrics_path;
  std::string summary_path;
  std::string weights_path;
};

// Runs one experiment and writes metrics.jsonl, summary.json and the final
// weights under out_dir.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct ComparisonRow {
  std::string label;
  double accuracy = 0.0;
  double loss = 0.0;
};

// Two-column performance table (4 decimal places), one row per model.
std::string render_comparison_table(const std::vector<ComparisonRow>& rows);

struct ComparisonOutcome {
  TrainingResult baseline;
  TrainingResult encrypted;
  bool accuracy_parity = false;
  bool loss_parity = false;
  bool weights_identical = false;  // bitwise, every round
  int exit_code = kExitOk;
  std::string report_path;
  std::string table;
};

// Runs the plaintext baseline and the encrypted pipeline with identical
// seeds and data, writes both metric streams plus comparison.json, and
// checks the transport-transparency parity. A parity violation is flagged
// in the report and the exit code.
ComparisonOutcome compare_baseline_encrypted(const ExperimentConfig& cfg,
                                             const std::string& out_dir);

// Standalone key-exchange sweep over the cross product of the given
// channel parameters; one JSON record per combination.
std::vector<nlohmann::ordered_json> probe_qkd(const std::vector<double>& gammas,
                                              const std::vector<double>& lengths_km,
                                              const std::vector<double>& eve_rates,
                                              std::size_t n_qubits, const QkdPolicy& policy,
                                              std::uint64_t seed);

}  // namespace qfl
