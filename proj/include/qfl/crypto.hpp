#pragma once

#include <cstdint>
#include <vector>

#include "qfl/model.hpp"

namespace qfl {

// Key material issued by the QKD layer. NOT production cryptography: the
// stream cipher below is simulation-grade, chosen for bit-exact
// reproducibility and trivial invertibility.
struct QkdKey {
  std::vector<std::uint8_t> bits;  // values 0/1, at least kMinKeyBits
  std::uint64_t key_id = 0;
};

inline constexpr std::size_t kMinKeyBits = 128;

// Encrypted weight payload. The payload is exactly as long as the
// serialized plaintext; the tag is FNV-1a-64 over the plaintext bytes.
struct Ciphertext {
  std::uint64_t key_id = 0;
  std::vector<std::uint8_t> payload;
  std::uint64_t integrity_tag = 0;
};

// Canonical weight wire format:
//   "QFLW", version u16 LE (=1), tensor count u16 LE, then per tensor
//   rank u8, dims u32 LE each, values binary64 LE row-major.
std::vector<std::uint8_t> serialize_weights(const ModelParameters& weights);
ModelParameters deserialize_weights(const std::vector<std::uint8_t>& bytes);

// Byte length of the wire form; a pure function of the architecture.
std::size_t serialized_weight_size(const ModelParameters& weights);

// Deterministic keystream expansion. Key bits are packed LSB-first into
// 64-bit chunks (zero-padded, little-endian); the chunks are folded into a
// seed via s <- mix64(s ^ chunk) starting from s = 0; successive mix64
// iterates of the seed are emitted as 8 little-endian bytes each.
std::vector<std::uint8_t> keystream(const QkdKey& key, std::size_t n_bytes);

// XOR stream encryption of the serialized weights. With strict_otp the key
// must hold at least one bit per payload bit (one-time-pad discipline).
Ciphertext encrypt_weights(const ModelParameters& weights, const QkdKey& key,
                           bool strict_otp = false);

// Inverse of encrypt_weights; verifies the integrity tag before
// deserializing and throws TamperError on mismatch.
ModelParameters decrypt_weights(const Ciphertext& ct, const QkdKey& key);

// Ciphertext framing:
//   "QFLC", version u16 LE (=1), key_id u64 LE, tag u64 LE,
//   payload length u32 LE, payload bytes.
std::vector<std::uint8_t> frame_ciphertext(const Ciphertext& ct);
Ciphertext parse_ciphertext(const std::vector<std::uint8_t>& bytes);

}  // namespace qfl
