// Acceptance gate for the federated-learning simulator. Each check prints
// exactly one [PASS]/[FAIL] line; the process exits 0 only if every check
// holds. Run it from anywhere: it writes only under the system temp dir.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "qfl/crypto.hpp"
#include "qfl/errors.hpp"
#include "qfl/experiment.hpp"
#include "qfl/federation.hpp"
#include "qfl/model.hpp"
#include "qfl/qkd.hpp"
#include "qfl/rng.hpp"

using namespace qfl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("qfl_accept_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

ModelParameters random_params(Rng& rng) {
  ModelParameters p;
  const std::size_t tensors = 1 + rng.index(3);
  for (std::size_t t = 0; t < tensors; ++t) {
    Tensor tensor({1 + rng.index(4), 1 + rng.index(6)});
    for (double& v : tensor.values) v = rng.uniform(-3.0, 3.0);
    p.tensors.push_back(std::move(tensor));
  }
  return p;
}

QkdKey random_key(Rng& rng, std::size_t bits = 256) {
  QkdKey key;
  key.key_id = rng.next_u64();
  key.bits.resize(bits);
  for (auto& b : key.bits) b = static_cast<std::uint8_t>(rng.bit());
  return key;
}

// ---------------------------------------------------------------------------
// 1. The encrypted pipeline must match the plaintext baseline bit for bit.

bool check_transport_parity(std::string& detail) {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = parse_config("{}");
  FederationConfig fed = build_federation_config(cfg);

  fed.transport = TransportMode::Plaintext;
  TrainingResult plain = run_training(fed);
  fed.transport = TransportMode::Encrypted;
  TrainingResult enc = run_training(fed);

  if (plain.records.size() != enc.records.size() || plain.records.empty()) {
    detail = "round counts differ";
    return false;
  }
  for (std::size_t r = 0; r < plain.records.size(); ++r) {
    if (plain.records[r].accuracy != enc.records[r].accuracy ||
        plain.records[r].loss != enc.records[r].loss) {
      detail = "metrics diverge at round " + std::to_string(r);
      return false;
    }
  }
  if (serialize_weights(plain.global_weights) != serialize_weights(enc.global_weights)) {
    detail = "final weights differ";
    return false;
  }
  const double elapsed = seconds_since(t0);
  if (elapsed >= 60.0) {
    detail = "took " + std::to_string(elapsed) + "s (budget 60s)";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// 2. Direct weighted averaging and the incremental-delta form must agree
//    whenever the coefficients sum to one.

bool check_aggregation_consistency(std::string& detail) {
  Rng rng(20260815);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n_clients = 2 + rng.index(7);
    ModelParameters global = random_params(rng);
    std::vector<ClientUpdate> updates;
    for (std::size_t i = 0; i < n_clients; ++i) {
      ModelParameters w = global;  // same shapes, fresh values
      for (Tensor& t : w.tensors)
        for (double& v : t.values) v = rng.uniform(-5.0, 5.0);
      updates.push_back({i, 1 + rng.index(1000), std::move(w)});
    }
    AggregationMode mode;  // sample-count coefficients always sum to 1
    ModelParameters direct = server_aggregate(updates, mode);
    ModelParameters incremental = server_incremental_update(global, updates, mode);
    for (std::size_t t = 0; t < direct.tensors.size(); ++t) {
      for (std::size_t k = 0; k < direct.tensors[t].values.size(); ++k) {
        worst = std::max(worst, std::abs(direct.tensors[t].values[k] -
                                         incremental.tensors[t].values[k]));
      }
    }
  }
  if (worst > 1e-12) {
    std::ostringstream os;
    os << "max element difference " << worst;
    detail = os.str();
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// 3. Key-exchange sessions must show the expected statistics.

bool check_key_exchange_statistics(std::string& detail) {
  const auto t0 = Clock::now();
  QkdPolicy policy;  // abort threshold 0.11, 25% disclosure, 256-bit floor

  QuantumChannelConfig lossless;
  lossless.gamma = 0.0;
  lossless.length_km = 0.0;

  // Clean channel: error-free and alive.
  QkdSessionResult clean = run_bb84(100000, lossless, policy, 11, 0);
  if (clean.qber_estimate != 0.0 || clean.aborted) {
    detail = "clean channel reported errors";
    return false;
  }
  const double sift = sifted_fraction(clean);
  if (std::abs(sift - 0.5) > 0.02) {
    detail = "sifted fraction " + std::to_string(sift);
    return false;
  }

  // Full interception: error rate near one quarter, measured on a large
  // sample, and the session must refuse to proceed.
  QuantumChannelConfig intercepted = lossless;
  intercepted.eve_rate = 1.0;
  QkdSessionResult tapped = run_bb84(40960, intercepted, policy, 12, 0);
  if (tapped.sifted_bits.size() < 10000) {
    detail = "only " + std::to_string(tapped.sifted_bits.size()) + " sifted bits";
    return false;
  }
  if (tapped.qber_estimate < 0.23 || tapped.qber_estimate > 0.27) {
    detail = "intercepted error rate " + std::to_string(tapped.qber_estimate);
    return false;
  }
  if (!tapped.aborted || !tapped.key.empty()) {
    detail = "interception above the 0.11 threshold did not abort";
    return false;
  }

  // Lossy channel: received count within three binomial sigma.
  QuantumChannelConfig lossy;
  lossy.gamma = 0.05;
  lossy.length_km = 10.0;
  const std::size_t n = 100000;
  QkdSessionResult lost = run_bb84(n, lossy, policy, 13, 0);
  const double p = std::exp(-lossy.gamma * lossy.length_km);
  const double mean = static_cast<double>(n) * p;
  const double sigma = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
  if (std::abs(static_cast<double>(lost.received_count) - mean) > 3.0 * sigma) {
    detail = "received " + std::to_string(lost.received_count) + ", expected near " +
             std::to_string(mean);
    return false;
  }

  const double elapsed = seconds_since(t0);
  if (elapsed >= 10.0) {
    detail = "took " + std::to_string(elapsed) + "s (budget 10s)";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// 4. The per-session success metric must follow 1 - e^(-gamma * L).

bool check_success_metric(std::string& detail) {
  if (std::abs(qkd_success_probability(0.1, 10.0) - (1.0 - std::exp(-1.0))) > 1e-12) {
    detail = "value at gamma=0.1, L=10 off";
    return false;
  }
  if (qkd_success_probability(0.2, 0.0) != 0.0) {
    detail = "nonzero at zero distance";
    return false;
  }
  if (std::abs(qkd_success_probability(5.0, 10.0) - 1.0) > 1e-12) {
    detail = "does not saturate at large attenuation";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// 5. Encryption must invert exactly and every tampering attempt must be
//    detected; a wrong key must fail the integrity check.

bool check_encryption_roundtrip(std::string& detail) {
  Rng rng(555);
  for (int trial = 0; trial < 1000; ++trial) {
    ModelParameters p = random_params(rng);
    QkdKey key = random_key(rng);
    ModelParameters back = decrypt_weights(encrypt_weights(p, key), key);
    if (serialize_weights(back) != serialize_weights(p)) {
      detail = "roundtrip mismatch at trial " + std::to_string(trial);
      return false;
    }
  }

  ModelParameters p = random_params(rng);
  QkdKey key = random_key(rng);
  Ciphertext clean = encrypt_weights(p, key);
  int flips_caught = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Ciphertext ct = clean;
    ct.payload[rng.index(ct.payload.size())] ^= static_cast<std::uint8_t>(1u << rng.index(8));
    try {
      decrypt_weights(ct, key);
    } catch (const TamperError&) {
      ++flips_caught;
    }
  }
  if (flips_caught != 100) {
    detail = "only " + std::to_string(flips_caught) + "/100 payload flips detected";
    return false;
  }

  int wrong_key_caught = 0;
  for (int trial = 0; trial < 100; ++trial) {
    QkdKey wrong = key;
    wrong.bits[rng.index(wrong.bits.size())] ^= 1;
    try {
      decrypt_weights(clean, wrong);
    } catch (const TamperError&) {
      ++wrong_key_caught;
    }
  }
  if (wrong_key_caught < 99) {
    detail = "only " + std::to_string(wrong_key_caught) + "/100 wrong keys detected";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// 6. Analytic gradients must match central finite differences on a spread
//    of randomly shaped networks.

double finite_difference_error(const Architecture& arch, std::uint64_t seed) {
  Rng rng(seed);
  Batch batch;
  const std::size_t batch_size = 3;
  batch.inputs =
      Tensor({batch_size, arch.input_channels, arch.input_height, arch.input_width});
  for (double& v : batch.inputs.values) v = rng.uniform();
  for (std::size_t i = 0; i < batch_size; ++i) batch.labels.push_back(rng.bit());

  ModelParameters params = init_model(arch, seed ^ 0x5bd1e995);
  auto [probs, cache] = forward(params, arch, batch);
  (void)probs;
  ModelParameters analytic = backward(params, arch, batch, cache);

  auto loss_at = [&](const ModelParameters& w) {
    auto [pr, ca] = forward(w, arch, batch);
    (void)ca;
    return loss_ce(pr, batch.labels);
  };

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    for (std::size_t k = 0; k < params.tensors[t].size(); ++k) {
      ModelParameters plus = params;
      plus.tensors[t].values[k] += h;
      ModelParameters minus = params;
      minus.tensors[t].values[k] -= h;
      const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
      const double an = analytic.tensors[t].values[k];
      const double denom = std::max(1e-6, std::abs(fd) + std::abs(an));
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

bool check_gradients(std::string& detail) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 21; ++seed) {
    Rng rng(seed * 7919 + 3);
    const std::size_t h = 8 + rng.index(4);
    const std::size_t w = 8 + rng.index(4);
    Architecture arch;
    arch.input_channels = 1;
    arch.input_height = h;
    arch.input_width = w;
    switch (seed % 3) {
      case 0: {  // flat logistic head
        const std::size_t features = h * w;
        arch.layers = {LayerSpec::flatten(), LayerSpec::dense(features, 2),
                       LayerSpec::softmax()};
        break;
      }
      case 1: {  // single conv block
        const std::size_t features = 2 * (h - 2) * (w - 2);
        arch.layers = {LayerSpec::conv2d(1, 2), LayerSpec::relu(), LayerSpec::flatten(),
                       LayerSpec::dense(features, 2), LayerSpec::softmax()};
        break;
      }
      default: {  // conv + pooling
        const std::size_t features = 2 * ((h - 2) / 2) * ((w - 2) / 2);
        arch.layers = {LayerSpec::conv2d(1, 2), LayerSpec::relu(), LayerSpec::maxpool2d(),
                       LayerSpec::flatten(), LayerSpec::dense(features, 2),
                       LayerSpec::softmax()};
        break;
      }
    }
    validate_architecture(arch);
    worst = std::max(worst, finite_difference_error(arch, seed));
  }
  if (worst >= 1e-4) {
    std::ostringstream os;
    os << "max relative error " << worst;
    detail = os.str();
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// 7. The default encrypted experiment must actually learn.

bool check_learning(std::string& detail) {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = parse_config("{}");
  TrainingResult result = run_training(build_federation_config(cfg));
  if (result.records.size() != cfg.training.rounds) {
    detail = "expected " + std::to_string(cfg.training.rounds) + " rounds, got " +
             std::to_string(result.records.size());
    return false;
  }
  const double final_accuracy = result.records.back().accuracy;
  if (final_accuracy < 0.90) {
    detail = "final accuracy " + std::to_string(final_accuracy);
    return false;
  }

  // Three-round moving average of the test loss must never increase.
  std::vector<double> smoothed;
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const std::size_t lo = i >= 2 ? i - 2 : 0;
    double sum = 0.0;
    for (std::size_t j = lo; j <= i; ++j) sum += result.records[j].loss;
    smoothed.push_back(sum / static_cast<double>(i - lo + 1));
  }
  for (std::size_t i = 1; i < smoothed.size(); ++i) {
    if (smoothed[i] > smoothed[i - 1] + 1e-9) {
      detail = "smoothed loss rises at round " + std::to_string(i);
      return false;
    }
  }

  const double elapsed = seconds_since(t0);
  if (elapsed >= 60.0) {
    detail = "took " + std::to_string(elapsed) + "s (budget 60s)";
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// 8. Two identical comparison runs must emit byte-identical metrics once
//    timing fields are stripped.

bool check_metrics_determinism(std::string& detail) {
  ExperimentConfig cfg = parse_config("{}");
  TempDir dir_a("det_a");
  TempDir dir_b("det_b");
  ComparisonOutcome a = compare_baseline_encrypted(cfg, dir_a.path.string());
  ComparisonOutcome b = compare_baseline_encrypted(cfg, dir_b.path.string());
  if (a.exit_code != 0 || b.exit_code != 0) {
    detail = "comparison run failed";
    return false;
  }
  for (const char* name : {"metrics_plaintext.jsonl", "metrics_encrypted.jsonl"}) {
    const std::string ca = canonical_metrics_content((dir_a.path / name).string());
    const std::string cb = canonical_metrics_content((dir_b.path / name).string());
    if (ca.empty() || ca != cb) {
      detail = std::string(name) + " differs between runs";
      return false;
    }
  }
  return true;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<bool(std::string&)> fn;
  };
  const std::vector<Criterion> criteria = {
      {"accuracy parity across transports", check_transport_parity},
      {"aggregation rule consistency", check_aggregation_consistency},
      {"key-exchange statistics", check_key_exchange_statistics},
      {"channel success metric", check_success_metric},
      {"encryption roundtrip and tamper evidence", check_encryption_roundtrip},
      {"gradient correctness", check_gradients},
      {"end-to-end learning", check_learning},
      {"metrics determinism", check_metrics_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    std::string detail;
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("unexpected exception: ") + e.what();
    }
    if (ok) {
      std::printf("[PASS] %s\n", c.name);
    } else {
      std::printf("[FAIL] %s%s%s\n", c.name, detail.empty() ? "" : " - ",
                  detail.c_str());
      ++failures;
    }
  }
  if (failures == 0) {
    std::printf("all %zu acceptance checks passed\n", criteria.size());
  } else {
    std::printf("%d of %zu acceptance checks failed\n", failures, criteria.size());
  }
  return failures == 0 ? 0 : 1;
}
