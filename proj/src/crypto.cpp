#include "qfl/crypto.hpp"

#include <algorithm>
#include <cstring>

#include "qfl/bytes.hpp"
#include "qfl/errors.hpp"
#include "qfl/hash.hpp"
#include "qfl/rng.hpp"

namespace qfl {

namespace {

constexpr char kWeightMagic[4] = {'Q', 'F', 'L', 'W'};
constexpr char kCipherMagic[4] = {'Q', 'F', 'L', 'C'};
constexpr std::uint16_t kWireVersion = 1;

void validate_weights(const ModelParameters& weights) {
  if (weights.tensors.empty()) {
    throw ConfigError("weights must hold at least one tensor");
  }
  if (weights.tensors.size() > 0xFFFF) {
    throw ConfigError("too many tensors for the wire format");
  }
  for (const Tensor& t : weights.tensors) {
    if (t.rank() == 0 || t.rank() > 0xFF) {
      throw ConfigError("tensor rank " + std::to_string(t.rank()) + " outside wire range");
    }
    for (std::size_t d : t.dims) {
      if (d > 0xFFFFFFFFULL) throw ConfigError("tensor dim exceeds u32 range");
    }
  }
}

void validate_key(const QkdKey& key) {
  if (key.bits.size() < kMinKeyBits) {
    throw KeyError("key holds " + std::to_string(key.bits.size()) + " bits, minimum is " +
                   std::to_string(kMinKeyBits));
  }
  for (std::uint8_t b : key.bits) {
    if (b > 1) throw KeyError("key bits must be 0 or 1");
  }
}

}  // namespace

std::size_t serialized_weight_size(const ModelParameters& weights) {
  std::size_t n = 4 + 2 + 2;
  for (const Tensor& t : weights.tensors) {
    n += 1 + 4 * t.rank() + 8 * t.size();
  }
  return n;
}

std::vector<std::uint8_t> serialize_weights(const ModelParameters& weights) {
  validate_weights(weights);
  std::vector<std::uint8_t> out;
  out.reserve(serialized_weight_size(weights));
  out.insert(out.end(), kWeightMagic, kWeightMagic + 4);
  append_u16(out, kWireVersion);
  append_u16(out, static_cast<std::uint16_t>(weights.tensors.size()));
  for (const Tensor& t : weights.tensors) {
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.dims) append_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values) append_f64(out, v);
  }
  return out;
}

ModelParameters deserialize_weights(const std::vector<std::uint8_t>& bytes) {
  ByteReader reader(bytes.data(), bytes.size(), "weights");
  char magic[4];
  reader.bytes(reinterpret_cast<std::uint8_t*>(magic), 4);
  if (std::memcmp(magic, kWeightMagic, 4) != 0) throw FormatError("weights: bad magic");
  const std::uint16_t version = reader.u16();
  if (version != kWireVersion) {
    throw VersionError("weights: unsupported version " + std::to_string(version));
  }
  const std::uint16_t count = reader.u16();
  if (count == 0) throw FormatError("weights: zero tensors");

  ModelParameters out;
  out.tensors.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    const std::uint8_t rank = reader.u8();
    if (rank == 0) throw FormatError("weights: tensor " + std::to_string(i) + " has rank 0");
    std::vector<std::size_t> dims(rank);
    for (std::uint8_t r = 0; r < rank; ++r) {
      dims[r] = reader.u32();
      if (dims[r] == 0) throw FormatError("weights: tensor " + std::to_string(i) + " has a zero dim");
    }
    Tensor t(std::move(dims));
    for (double& v : t.values) v = reader.f64();
    out.tensors.push_back(std::move(t));
  }
  reader.expect_end();
  return out;
}

std::vector<std::uint8_t> keystream(const QkdKey& key, std::size_t n_bytes) {
  validate_key(key);
  std::vector<std::uint8_t> out;
  out.reserve(n_bytes);

  std::uint64_t seed = 0;
  const std::size_t n_chunks = (key.bits.size() + 63) / 64;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    std::uint64_t chunk = 0;
    const std::size_t end = std::min(key.bits.size(), (c + 1) * 64);
    for (std::size_t i = c * 64; i < end; ++i) {
      chunk |= static_cast<std::uint64_t>(key.bits[i]) << (i % 64);
    }
    seed = mix64(seed ^ chunk);
  }

  while (out.size() < n_bytes) {
    seed = mix64(seed);
    for (int i = 0; i < 8 && out.size() < n_bytes; ++i) {
      out.push_back(static_cast<std::uint8_t>(seed >> (8 * i)));
    }
  }
  return out;
}

Ciphertext encrypt_weights(const ModelParameters& weights, const QkdKey& key, bool strict_otp) {
  validate_key(key);
  std::vector<std::uint8_t> plain = serialize_weights(weights);
  if (strict_otp && key.bits.size() < plain.size() * 8) {
    throw KeyError("strict OTP needs " + std::to_string(plain.size() * 8) + " key bits, have " +
                   std::to_string(key.bits.size()));
  }

  Ciphertext ct;
  ct.key_id = key.key_id;
  ct.integrity_tag = fnv1a64(plain.data(), plain.size());
  const std::vector<std::uint8_t> stream = keystream(key, plain.size());
  ct.payload.resize(plain.size());
  for (std::size_t i = 0; i < plain.size(); ++i) ct.payload[i] = plain[i] ^ stream[i];
  return ct;
}

ModelParameters decrypt_weights(const Ciphertext& ct, const QkdKey& key) {
  validate_key(key);
  if (ct.key_id != key.key_id) {
    throw ProtocolError("ciphertext key id " + std::to_string(ct.key_id) +
                        " does not match key " + std::to_string(key.key_id));
  }
  const std::vector<std::uint8_t> stream = keystream(key, ct.payload.size());
  std::vector<std::uint8_t> plain(ct.payload.size());
  for (std::size_t i = 0; i < plain.size(); ++i) plain[i] = ct.payload[i] ^ stream[i];

  if (fnv1a64(plain.data(), plain.size()) != ct.integrity_tag) {
    throw TamperError("integrity tag mismatch, payload rejected");
  }
  return deserialize_weights(plain);
}

std::vector<std::uint8_t> frame_ciphertext(const Ciphertext& ct) {
  if (ct.payload.size() > 0xFFFFFFFFULL) throw ConfigError("payload exceeds u32 framing range");
  std::vector<std::uint8_t> out;
  out.reserve(4 + 2 + 8 + 8 + 4 + ct.payload.size());
  out.insert(out.end(), kCipherMagic, kCipherMagic + 4);
  append_u16(out, kWireVersion);
  append_u64(out, ct.key_id);
  append_u64(out, ct.integrity_tag);
  append_u32(out, static_cast<std::uint32_t>(ct.payload.size()));
  out.insert(out.end(), ct.payload.begin(), ct.payload.end());
  return out;
}

Ciphertext parse_ciphertext(const std::vector<std::uint8_t>& bytes) {
  ByteReader reader(bytes.data(), bytes.size(), "ciphertext");
  char magic[4];
  reader.bytes(reinterpret_cast<std::uint8_t*>(magic), 4);
  if (std::memcmp(magic, kCipherMagic, 4) != 0) throw FormatError("ciphertext: bad magic");
  const std::uint16_t version = reader.u16();
  if (version != kWireVersion) {
    throw VersionError("ciphertext: unsupported version " + std::to_string(version));
  }
  Ciphertext ct;
  ct.key_id = reader.u64();
  ct.integrity_tag = reader.u64();
  const std::uint32_t len = reader.u32();
  ct.payload.resize(len);
  if (len > 0) reader.bytes(ct.payload.data(), len);
  reader.expect_end();
  return ct;
}

}  // namespace qfl
