#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace qfl {

struct QuantumChannelConfig {
  double gamma = 0.05;          // attenuation coefficient per km
  double length_km = 10.0;      // channel length
  double eve_rate = 0.0;        // fraction of qubits intercepted and resent
  double noise_flip_prob = 0.0; // intrinsic bit-flip probability
};

struct QkdPolicy {
  double qber_abort_threshold = 0.11;
  double sample_fraction = 0.25;
  std::size_t min_key_bits = 256;
};

// Transcript of one prepare-and-measure key exchange session.
struct QkdSessionResult {
  std::size_t transmitted_count = 0;
  std::size_t received_count = 0;                 // after channel loss
  std::vector<std::uint8_t> sifted_bits;          // receiver side, basis-matched
  std::vector<std::uint8_t> sifted_sender_bits;   // sender side, same positions
  std::vector<std::size_t> disclosed_positions;   // sample indices into sifted_bits
  std::size_t sample_bits_disclosed = 0;
  double qber_estimate = 0.0;
  bool aborted = false;
  std::string abort_reason;
  std::vector<std::uint8_t> key;                  // empty iff aborted
  std::uint64_t session_id = 0;
};

// Test hooks for the session simulation.
struct Bb84Options {
  bool force_matching_bases = false;  // pins every basis choice to 0
};

// Channel success metric 1 - e^(-gamma * L), reported per session.
double qkd_success_probability(double gamma, double length_km);

// Simulates one session: random bit + basis per qubit, channel loss with
// survival probability e^(-gamma * L), optional intercept-resend attacker,
// receiver measurement, basis sifting, sample disclosure for the error
// estimate, and the abort decision. Deterministic per (seed, session_id).
QkdSessionResult run_bb84(std::size_t n_qubits, const QuantumChannelConfig& channel,
                          const QkdPolicy& policy, std::uint64_t seed,
                          std::uint64_t session_id = 0, const Bb84Options& options = {});

// sifted bit count / received count.
double sifted_fraction(const QkdSessionResult& result);

// First `required_bits` of the session key starting at `offset`. Disclosed
// sample bits are never part of the key. Throws KeyExhaustionError when the
// session cannot cover the request; callers should run additional sessions.
std::vector<std::uint8_t> derive_key(const QkdSessionResult& result, std::size_t required_bits,
                                     std::size_t offset = 0);

// Session transcript as a JSON record for the metrics log.
nlohmann::ordered_json session_to_json(const QkdSessionResult& result,
                                       const QuantumChannelConfig& channel);

}  // namespace qfl
