#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qfl/crypto.hpp"
#include "qfl/data.hpp"
#include "qfl/model.hpp"
#include "qfl/qkd.hpp"

namespace qfl {

enum class TransportMode { Plaintext, Encrypted };
enum class AggregationRule { DirectWeighted, IncrementalDelta };
enum class Normalization { TotalSamples, ClientCount };

const char* transport_mode_name(TransportMode mode);
const char* aggregation_rule_name(AggregationRule rule);
const char* normalization_name(Normalization norm);

struct AggregationMode {
  AggregationRule rule = AggregationRule::DirectWeighted;
  Normalization normalization = Normalization::TotalSamples;
};

struct TrainingOptions {
  std::size_t rounds = 10;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  double lr = 0.05;
  double early_stop_epsilon = 0.0;  // 0 disables early stopping
  std::size_t early_stop_patience = 3;
  bool fail_fast = false;
};

struct AttackScenario {
  enum class Kind { None, Eavesdrop, Tamper };
  Kind kind = Kind::None;
  std::vector<std::size_t> target_clients;  // empty = every client
  double eve_rate = 1.0;                    // Eavesdrop only

  bool targets(std::size_t client_id) const;
};

struct QkdSettings {
  std::size_t n_qubits = 4096;
  QuantumChannelConfig channel;                 // shared by all links
  std::vector<QuantumChannelConfig> per_link;   // optional per-client override
  QkdPolicy policy;
  bool strict_otp = false;

  const QuantumChannelConfig& link_channel(std::size_t client_id) const;
};

// One participating healthcare node: its shard plus its current view of
// the global model. shard_reads counts batch materializations so tests can
// assert that server-side phases never touch sample data.
struct ClientState {
  std::size_t client_id = 0;
  Dataset shard;
  ModelParameters local_view;
  std::uint64_t shard_reads = 0;
};

struct ServerState {
  ModelParameters global_weights;
  std::size_t round = 0;
  std::vector<std::size_t> client_ids;
};

// Key material for one client-server link in one round. Upload and
// download keys come from disjoint bit ranges of the same session(s).
struct LinkKeys {
  QkdKey upload;
  QkdKey download;
  double qber = 0.0;
  double success_probability = 0.0;
  std::size_t key_bits_used = 0;
  std::size_t sessions_run = 0;
  bool aborted = false;
  std::string abort_reason;
};

struct ClientRoundRecord {
  std::size_t client_id = 0;
  std::size_t n_samples = 0;
  double local_loss = 0.0;
  double qber = 0.0;
  double success_probability = 0.0;
  std::size_t key_bits_used = 0;
  bool aborted = false;
  std::string abort_reason;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<ClientRoundRecord> clients;
  double accuracy = 0.0;
  double loss = 0.0;
  std::string aggregation;
  std::string transport;
  bool round_failed = false;  // zero surviving updates
  double wall_time_ms = 0.0;
};

// Observer for every byte sequence that crosses a link.
struct LinkFrame {
  std::size_t round = 0;
  std::size_t client_id = 0;
  enum class Direction { Upload, Download } direction = Direction::Upload;
  std::vector<std::uint8_t> bytes;
};
using LinkTap = std::function<void(const LinkFrame&)>;

struct FederationConfig {
  Architecture arch;
  Partition partition;
  Dataset test_set;
  TrainingOptions training;
  QkdSettings qkd;
  TransportMode transport = TransportMode::Encrypted;
  AttackScenario attack;
  AggregationMode aggregation;
  std::uint64_t master_seed = 0;
  bool parallel_clients = false;
  LinkTap link_tap;  // optional
};

struct TrainingResult {
  std::vector<RoundRecord> records;
  ModelParameters global_weights;
  bool security_abort = false;   // any QKD or tamper abort occurred
  bool stopped_early = false;
};

// Seed-stream derivation used by the round loop, exposed so external
// harnesses can reproduce a client's exact trajectory.
std::uint64_t federation_init_seed(std::uint64_t master_seed);
std::uint64_t federation_round_seed(std::uint64_t master_seed, std::size_t client_id,
                                    std::size_t round);
std::uint64_t federation_link_seed(std::uint64_t master_seed, std::size_t client_id,
                                   std::size_t round);

// Mini-batch SGD over the client's shard, starting from the given global
// weights. Deterministic per round_seed. Increments state.shard_reads once
// per materialized batch.
ModelParameters client_local_train(ClientState& state, const ModelParameters& global_weights,
                                   const Architecture& arch, const TrainingOptions& training,
                                   std::uint64_t round_seed);

// Encrypts local weights for upload. Raw shard data never enters here.
Ciphertext client_package_update(const ModelParameters& local_weights, const QkdKey& link_key,
                                 bool strict_otp = false);

struct ClientUpdate {
  std::size_t client_id = 0;
  std::size_t n_samples = 0;
  ModelParameters weights;
};

// Weighted average of client weights. TotalSamples uses coefficients
// N_i / sum_j N_j; ClientCount uses N_i / (number of updates).
ModelParameters server_aggregate(const std::vector<ClientUpdate>& updates,
                                 const AggregationMode& mode);

// w + sum_i c_i * (w_i - w) with the same coefficients; identical to
// server_aggregate whenever the coefficients sum to 1.
ModelParameters server_incremental_update(const ModelParameters& global_weights,
                                          const std::vector<ClientUpdate>& updates,
                                          const AggregationMode& mode);

// One QKD session per client link (plus at most one retry session when key
// material runs short). Aborted links mark the client out of the round.
std::map<std::size_t, LinkKeys> establish_link_keys(const std::vector<std::size_t>& client_ids,
                                                    std::size_t round,
                                                    const QkdSettings& qkd,
                                                    std::uint64_t master_seed,
                                                    std::size_t payload_bytes);

// Encrypts the global model once per client with its download key.
std::map<std::size_t, Ciphertext> broadcast_global(const ModelParameters& global_weights,
                                                   const std::map<std::size_t, LinkKeys>& keys,
                                                   bool strict_otp = false);

// Tracks key ids consumed by the server within one round; keys are
// per-client per-round, so a repeat is a protocol violation.
struct RoundKeyRegistry {
  std::vector<std::uint64_t> used;
  void check_and_mark(std::uint64_t key_id);
};

// Server-side unpack of an uploaded frame: parse, enforce key uniqueness,
// verify and decrypt.
ModelParameters server_unpack_update(const std::vector<std::uint8_t>& frame_bytes,
                                     const QkdKey& upload_key, RoundKeyRegistry& registry);

// Full round loop: establish keys, train locally, upload, aggregate,
// broadcast, evaluate; repeats for the configured number of rounds or until
// the early-stop rule fires. Deterministic per master seed.
TrainingResult run_training(const FederationConfig& config);

}  // namespace qfl
