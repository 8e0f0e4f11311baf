#include "qfl/qkd.hpp"

#include <algorithm>
#include <cmath>

#include "qfl/errors.hpp"
#include "qfl/rng.hpp"

namespace qfl {

namespace {

void validate_channel(const QuantumChannelConfig& channel) {
  if (!(channel.gamma >= 0.0) || !std::isfinite(channel.gamma)) {
    throw ConfigError("gamma must be a finite non-negative real");
  }
  if (!(channel.length_km >= 0.0) || !std::isfinite(channel.length_km)) {
    throw ConfigError("length_km must be a finite non-negative real");
  }
  if (!(channel.eve_rate >= 0.0 && channel.eve_rate <= 1.0)) {
    throw ConfigError("eve_rate must lie in [0, 1]");
  }
  if (!(channel.noise_flip_prob >= 0.0 && channel.noise_flip_prob < 1.0)) {
    throw ConfigError("noise_flip_prob must lie in [0, 1)");
  }
}

void validate_policy(const QkdPolicy& policy) {
  if (!(policy.qber_abort_threshold > 0.0 && policy.qber_abort_threshold < 0.5)) {
    throw ConfigError("qber_abort_threshold must lie in (0, 0.5)");
  }
  if (!(policy.sample_fraction > 0.0 && policy.sample_fraction < 1.0)) {
    throw ConfigError("sample_fraction must lie in (0, 1)");
  }
  if (policy.min_key_bits < 1) throw ConfigError("min_key_bits must be >= 1");
}

}  // namespace

double qkd_success_probability(double gamma, double length_km) {
  if (!(gamma >= 0.0) || !(length_km >= 0.0)) {
    throw ConfigError("gamma and length_km must be non-negative");
  }
  return 1.0 - std::exp(-gamma * length_km);
}

QkdSessionResult run_bb84(std::size_t n_qubits, const QuantumChannelConfig& channel,
                          const QkdPolicy& policy, std::uint64_t seed,
                          std::uint64_t session_id, const Bb84Options& options) {
  if (n_qubits < 1) throw ConfigError("n_qubits must be >= 1");
  validate_channel(channel);
  validate_policy(policy);

  // Even a lossless, fully sifted session cannot reach min_key_bits if the
  // disclosure alone eats too much: reject before simulating.
  const std::size_t best_disclosed = static_cast<std::size_t>(
      policy.sample_fraction * static_cast<double>(n_qubits));
  if (n_qubits - best_disclosed < policy.min_key_bits) {
    throw ConfigError("n_qubits " + std::to_string(n_qubits) +
                      " cannot yield min_key_bits " + std::to_string(policy.min_key_bits) +
                      " after a " + std::to_string(policy.sample_fraction) +
                      " sample disclosure");
  }

  Rng rng(derive_seed({seed, session_id}));
  const double transmittance = std::exp(-channel.gamma * channel.length_km);

  QkdSessionResult result;
  result.transmitted_count = n_qubits;
  result.session_id = session_id;

  // Fixed per-qubit draw order: bit, basis, survival, interception,
  // [eve basis, eve bit], receiver basis, [receiver bit], noise.
  for (std::size_t q = 0; q < n_qubits; ++q) {
    const int sender_bit = rng.bit();
    const int sender_basis = options.force_matching_bases ? 0 : rng.bit();
    if (!(rng.uniform() < transmittance)) continue;  // photon lost

    int encode_basis = sender_basis;
    int encode_bit = sender_bit;
    if (rng.uniform() < channel.eve_rate) {
      const int eve_basis = options.force_matching_bases ? 0 : rng.bit();
      const int eve_bit = eve_basis == sender_basis ? sender_bit : rng.bit();
      encode_basis = eve_basis;
      encode_bit = eve_bit;
    }

    const int receiver_basis = options.force_matching_bases ? 0 : rng.bit();
    int receiver_bit = receiver_basis == encode_basis ? encode_bit : rng.bit();
    if (rng.uniform() < channel.noise_flip_prob) receiver_bit ^= 1;

    ++result.received_count;
    if (receiver_basis == sender_basis) {
      result.sifted_sender_bits.push_back(static_cast<std::uint8_t>(sender_bit));
      result.sifted_bits.push_back(static_cast<std::uint8_t>(receiver_bit));
    }
  }

  // Disclose a random sample of sifted positions for the error estimate.
  const std::size_t sifted = result.sifted_bits.size();
  const std::size_t n_disclose = static_cast<std::size_t>(
      policy.sample_fraction * static_cast<double>(sifted));
  std::vector<std::size_t> positions(sifted);
  for (std::size_t i = 0; i < sifted; ++i) positions[i] = i;
  for (std::size_t i = 0; i < n_disclose; ++i) {
    const std::size_t j = i + rng.index(sifted - i);
    std::swap(positions[i], positions[j]);
  }
  result.disclosed_positions.assign(positions.begin(), positions.begin() + n_disclose);
  std::sort(result.disclosed_positions.begin(), result.disclosed_positions.end());
  result.sample_bits_disclosed = n_disclose;

  std::size_t mismatches = 0;
  for (std::size_t pos : result.disclosed_positions) {
    if (result.sifted_bits[pos] != result.sifted_sender_bits[pos]) ++mismatches;
  }
  result.qber_estimate =
      n_disclose == 0 ? 0.0 : static_cast<double>(mismatches) / static_cast<double>(n_disclose);

  // Key = receiver's sifted bits outside the disclosed sample, in order.
  // No error correction: sessions above the threshold abort instead.
  std::vector<std::uint8_t> key;
  key.reserve(sifted - n_disclose);
  std::size_t next_disclosed = 0;
  for (std::size_t i = 0; i < sifted; ++i) {
    if (next_disclosed < result.disclosed_positions.size() &&
        result.disclosed_positions[next_disclosed] == i) {
      ++next_disclosed;
      continue;
    }
    key.push_back(result.sifted_bits[i]);
  }

  if (result.qber_estimate > policy.qber_abort_threshold) {
    result.aborted = true;
    result.abort_reason = "qber " + std::to_string(result.qber_estimate) +
                          " above threshold " + std::to_string(policy.qber_abort_threshold);
  } else if (key.size() < policy.min_key_bits) {
    result.aborted = true;
    result.abort_reason = "key material " + std::to_string(key.size()) +
                          " bits below minimum " + std::to_string(policy.min_key_bits);
  } else {
    result.key = std::move(key);
  }
  return result;
}

double sifted_fraction(const QkdSessionResult& result) {
  if (result.transmitted_count == 0) throw ConfigError("sifted_fraction: no qubits transmitted");
  if (result.received_count == 0) throw ConfigError("sifted_fraction: no qubits received");
  return static_cast<double>(result.sifted_bits.size()) /
         static_cast<double>(result.received_count);
}

std::vector<std::uint8_t> derive_key(const QkdSessionResult& result, std::size_t required_bits,
                                     std::size_t offset) {
  if (result.aborted) throw ProtocolError("derive_key: session aborted (" + result.abort_reason + ")");
  if (required_bits == 0) throw ConfigError("derive_key: required_bits must be positive");
  if (offset + required_bits > result.key.size()) {
    throw KeyExhaustionError("derive_key: need bits [" + std::to_string(offset) + ", " +
                             std::to_string(offset + required_bits) + ") but session holds " +
                             std::to_string(result.key.size()) +
                             "; run additional sessions");
  }
  return {result.key.begin() + static_cast<std::ptrdiff_t>(offset),
          result.key.begin() + static_cast<std::ptrdiff_t>(offset + required_bits)};
}

nlohmann::ordered_json session_to_json(const QkdSessionResult& result,
                                       const QuantumChannelConfig& channel) {
  nlohmann::ordered_json j;
  j["session_id"] = result.session_id;
  j["transmitted"] = result.transmitted_count;
  j["received"] = result.received_count;
  j["sifted"] = result.sifted_bits.size();
  j["disclosed"] = result.sample_bits_disclosed;
  j["qber"] = result.qber_estimate;
  j["aborted"] = result.aborted;
  j["abort_reason"] = result.abort_reason;
  j["key_bits"] = result.key.size();
  j["success_probability"] = qkd_success_probability(channel.gamma, channel.length_km);
  return j;
}

}  // namespace qfl
