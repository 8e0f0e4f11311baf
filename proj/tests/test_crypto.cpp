#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "qfl/crypto.hpp"
#include "qfl/errors.hpp"
#include "qfl/hash.hpp"
#include "qfl/rng.hpp"

using namespace qfl;

namespace {

ModelParameters random_params(std::uint64_t seed, std::size_t tensors = 2) {
  Rng rng(seed);
  ModelParameters p;
  for (std::size_t t = 0; t < tensors; ++t) {
    const std::size_t rows = 1 + rng.index(5);
    const std::size_t cols = 1 + rng.index(7);
    Tensor tensor({rows, cols});
    for (double& v : tensor.values) v = rng.uniform(-2.0, 2.0);
    p.tensors.push_back(std::move(tensor));
  }
  return p;
}

QkdKey random_key(std::uint64_t seed, std::size_t bits = 256) {
  Rng rng(seed);
  QkdKey key;
  key.key_id = rng.next_u64();
  key.bits.resize(bits);
  for (auto& b : key.bits) b = static_cast<std::uint8_t>(rng.bit());
  return key;
}

QkdKey zero_key(std::size_t bits) {
  QkdKey key;
  key.key_id = 1;
  key.bits.assign(bits, 0);
  return key;
}

}  // namespace

TEST_CASE("a single 2x2 tensor serializes to the documented 49-byte layout") {
  ModelParameters p;
  p.tensors.push_back(Tensor({2, 2}, {1.5, -2.0, 0.0, 3.25}));
  std::vector<std::uint8_t> bytes = serialize_weights(p);
  REQUIRE(bytes.size() == 49);  // 4+2+2 header, 1+2*4 tensor header, 4*8 values
  CHECK(serialized_weight_size(p) == 49);

  CHECK(bytes[0] == 'Q');
  CHECK(bytes[1] == 'F');
  CHECK(bytes[2] == 'L');
  CHECK(bytes[3] == 'W');
  CHECK(bytes[4] == 1);  // version u16 LE
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);  // tensor count u16 LE
  CHECK(bytes[7] == 0);
  CHECK(bytes[8] == 2);  // rank
  CHECK(bytes[9] == 2);  // dim 0 as u32 LE
  CHECK(bytes[10] == 0);
  CHECK(bytes[13] == 2);  // dim 1

  double first = 0.0;
  std::memcpy(&first, bytes.data() + 17, sizeof first);
  CHECK(first == 1.5);
}

TEST_CASE("serialization round-trips bitwise, including awkward values") {
  ModelParameters p;
  p.tensors.push_back(Tensor({2, 3}, {0.0, -0.0, 5e-324, 1.7976931348623157e308,
                                      -1.2345678901234567, 3.0}));
  p.tensors.push_back(Tensor({1}, {0.1 + 0.2}));
  std::vector<std::uint8_t> bytes = serialize_weights(p);
  ModelParameters back = deserialize_weights(bytes);
  CHECK(serialize_weights(back) == bytes);
  CHECK(std::signbit(back.tensors[0].values[1]));  // -0.0 survives

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelParameters q = random_params(seed);
    CHECK(serialize_weights(deserialize_weights(serialize_weights(q))) ==
          serialize_weights(q));
  }
}

TEST_CASE("malformed weight bytes are rejected by kind") {
  ModelParameters p = random_params(1);
  std::vector<std::uint8_t> bytes = serialize_weights(p);

  std::vector<std::uint8_t> bad_magic = bytes;
  bad_magic[0] ^= 0xFF;
  CHECK_THROWS_AS(deserialize_weights(bad_magic), FormatError);

  std::vector<std::uint8_t> bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_weights(bad_version), VersionError);

  for (std::size_t len = 0; len < bytes.size(); ++len) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + len);
    CHECK_THROWS_AS(deserialize_weights(cut), FormatError);
  }

  std::vector<std::uint8_t> trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_weights(trailing), LengthError);

  CHECK_THROWS_AS(serialize_weights(ModelParameters{}), ConfigError);
}

TEST_CASE("the keystream reproduces the pinned all-zero-key bytes") {
  // two zero chunks folded from 0, then one emission step: mix(mix(mix(0)))
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  const std::uint64_t expected_word = mix(mix(mix(0)));

  std::vector<std::uint8_t> stream = keystream(zero_key(128), 8);
  REQUIRE(stream.size() == 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(stream[i] == static_cast<std::uint8_t>(expected_word >> (8 * i)));
  }
  const std::vector<std::uint8_t> frozen = {0x91, 0xbe, 0xfc, 0x38, 0xbc, 0x75, 0x82, 0x23};
  CHECK(stream == frozen);
}

TEST_CASE("keystreams are deterministic, length-exact, and prefix-stable") {
  QkdKey key = random_key(5);
  CHECK(keystream(key, 0).empty());
  std::vector<std::uint8_t> a = keystream(key, 33);
  CHECK(a.size() == 33);
  CHECK(a == keystream(key, 33));
  std::vector<std::uint8_t> longer = keystream(key, 64);
  CHECK(std::equal(a.begin(), a.end(), longer.begin()));
  CHECK(keystream(random_key(6), 33) != a);
}

TEST_CASE("decrypting the ciphertext restores the exact weights") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ModelParameters p = random_params(seed + 100, 3);
    QkdKey key = random_key(seed);
    Ciphertext ct = encrypt_weights(p, key);
    CHECK(ct.key_id == key.key_id);
    CHECK(ct.payload.size() == serialized_weight_size(p));
    ModelParameters back = decrypt_weights(ct, key);
    CHECK(serialize_weights(back) == serialize_weights(p));
  }
}

TEST_CASE("ciphertext differs from plaintext and varies with the session key") {
  ModelParameters p = random_params(7);
  std::vector<std::uint8_t> plain = serialize_weights(p);
  QkdKey k1 = random_key(8);
  QkdKey k2 = random_key(9);

  std::vector<std::uint8_t> prefix = keystream(k1, plain.size());
  bool nonzero = false;
  for (std::uint8_t b : prefix) nonzero |= (b != 0);
  REQUIRE(nonzero);

  Ciphertext c1 = encrypt_weights(p, k1);
  Ciphertext c2 = encrypt_weights(p, k2);
  CHECK(c1.payload != plain);
  CHECK(c1.payload != c2.payload);
  CHECK(c1.integrity_tag == fnv1a64(plain.data(), plain.size()));
  CHECK(c1.integrity_tag == c2.integrity_tag);  // tag covers the plaintext
}

TEST_CASE("single-bit payload flips are always caught") {
  ModelParameters p = random_params(11, 3);
  QkdKey key = random_key(12);
  Ciphertext clean = encrypt_weights(p, key);
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    Ciphertext ct = clean;
    const std::size_t byte = rng.index(ct.payload.size());
    ct.payload[byte] ^= static_cast<std::uint8_t>(1u << rng.index(8));
    CHECK_THROWS_AS(decrypt_weights(ct, key), TamperError);
  }
  Ciphertext bad_tag = clean;
  bad_tag.integrity_tag ^= 1;
  CHECK_THROWS_AS(decrypt_weights(bad_tag, key), TamperError);
}

TEST_CASE("a near-miss key fails the integrity check") {
  ModelParameters p = random_params(21);
  QkdKey key = random_key(22);
  Ciphertext ct = encrypt_weights(p, key);
  Rng rng(23);
  int detected = 0;
  for (int trial = 0; trial < 100; ++trial) {
    QkdKey wrong = key;
    wrong.bits[rng.index(wrong.bits.size())] ^= 1;
    try {
      decrypt_weights(ct, wrong);
    } catch (const TamperError&) {
      ++detected;
    }
  }
  CHECK(detected >= 99);
}

TEST_CASE("key bookkeeping errors are distinguished from tampering") {
  ModelParameters p = random_params(31);
  QkdKey key = random_key(32);
  Ciphertext ct = encrypt_weights(p, key);

  QkdKey other_id = key;
  other_id.key_id ^= 0xABC;
  CHECK_THROWS_AS(decrypt_weights(ct, other_id), ProtocolError);

  QkdKey tiny = random_key(33, 64);  // below the 128-bit floor
  CHECK_THROWS_AS(encrypt_weights(p, tiny), KeyError);
}

TEST_CASE("strict one-time-pad mode demands one key bit per payload bit") {
  ModelParameters p;
  p.tensors.push_back(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));  // 49-byte payload
  CHECK_THROWS_AS(encrypt_weights(p, random_key(41, 391), true), KeyError);
  QkdKey exact = random_key(42, 392);
  Ciphertext ct = encrypt_weights(p, exact, true);
  CHECK(serialize_weights(decrypt_weights(ct, exact)) == serialize_weights(p));
}

TEST_CASE("ciphertext frames round-trip and reject malformed bytes") {
  ModelParameters p = random_params(51);
  QkdKey key = random_key(52);
  Ciphertext ct = encrypt_weights(p, key);
  std::vector<std::uint8_t> frame = frame_ciphertext(ct);

  Ciphertext back = parse_ciphertext(frame);
  CHECK(back.key_id == ct.key_id);
  CHECK(back.integrity_tag == ct.integrity_tag);
  CHECK(back.payload == ct.payload);

  std::vector<std::uint8_t> bad_magic = frame;
  bad_magic[1] ^= 0x55;
  CHECK_THROWS_AS(parse_ciphertext(bad_magic), FormatError);

  std::vector<std::uint8_t> cut(frame.begin(), frame.end() - 1);
  CHECK_THROWS_AS(parse_ciphertext(cut), LengthError);

  std::vector<std::uint8_t> trailing = frame;
  trailing.push_back(7);
  CHECK_THROWS_AS(parse_ciphertext(trailing), LengthError);
}
