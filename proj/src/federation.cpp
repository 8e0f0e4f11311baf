#include "qfl/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>

#include "qfl/errors.hpp"
#include "qfl/rng.hpp"

namespace qfl {

namespace {

// Stream tags keep the RNG streams for training, key exchange, and key ids
// pairwise independent for every (client, round).
constexpr std::uint64_t kTagInit = 'I';
constexpr std::uint64_t kTagTrain = 'T';
constexpr std::uint64_t kTagQkd = 'Q';
constexpr std::uint64_t kTagUpload = 'U';
constexpr std::uint64_t kTagDownload = 'D';

}  // namespace

std::uint64_t federation_init_seed(std::uint64_t master_seed) {
  return derive_seed({master_seed, kTagInit});
}

std::uint64_t federation_round_seed(std::uint64_t master_seed, std::size_t client_id,
                                    std::size_t round) {
  return derive_seed({master_seed, kTagTrain, client_id, round});
}

std::uint64_t federation_link_seed(std::uint64_t master_seed, std::size_t client_id,
                                   std::size_t round) {
  return derive_seed({master_seed, kTagQkd, client_id, round});
}

namespace {

Batch materialize_batch(const Dataset& shard, const std::vector<std::size_t>& indices,
                        std::size_t start, std::size_t count, const Architecture& arch) {
  Batch batch;
  batch.inputs = Tensor({count, arch.input_channels, arch.input_height, arch.input_width});
  batch.labels.reserve(count);
  const std::size_t sample_size = arch.input_channels * arch.input_height * arch.input_width;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = indices[start + i];
    const Tensor& img = shard.images[idx];
    if (img.size() != sample_size) {
      throw ShapeError("shard sample has dims " + shape_to_string(img.dims) +
                       ", expected " + std::to_string(sample_size) + " values");
    }
    std::copy(img.values.begin(), img.values.end(),
              batch.inputs.values.begin() + i * sample_size);
    batch.labels.push_back(shard.labels[idx]);
  }
  return batch;
}

}  // namespace

const char* transport_mode_name(TransportMode mode) {
  return mode == TransportMode::Plaintext ? "plaintext" : "encrypted";
}

const char* aggregation_rule_name(AggregationRule rule) {
  return rule == AggregationRule::DirectWeighted ? "direct" : "incremental";
}

const char* normalization_name(Normalization norm) {
  return norm == Normalization::TotalSamples ? "total_samples" : "client_count";
}

bool AttackScenario::targets(std::size_t client_id) const {
  if (kind == Kind::None) return false;
  if (target_clients.empty()) return true;
  return std::find(target_clients.begin(), target_clients.end(), client_id) !=
         target_clients.end();
}

const QuantumChannelConfig& QkdSettings::link_channel(std::size_t client_id) const {
  if (client_id < per_link.size()) return per_link[client_id];
  return channel;
}

ModelParameters client_local_train(ClientState& state, const ModelParameters& global_weights,
                                   const Architecture& arch, const TrainingOptions& training,
                                   std::uint64_t round_seed) {
  if (state.shard.size() == 0) throw ConfigError("client shard is empty");
  if (training.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (training.batch_size < 1) throw ConfigError("batch_size must be >= 1");

  Rng rng(round_seed);
  std::vector<std::size_t> indices(state.shard.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;

  ModelParameters weights = global_weights;
  for (std::size_t epoch = 0; epoch < training.epochs; ++epoch) {
    rng.shuffle(indices);
    for (std::size_t start = 0; start < indices.size(); start += training.batch_size) {
      const std::size_t count = std::min(training.batch_size, indices.size() - start);
      Batch batch = materialize_batch(state.shard, indices, start, count, arch);
      ++state.shard_reads;
      auto [probs, cache] = forward(weights, arch, batch);
      ModelParameters grads = backward(weights, arch, batch, cache);
      weights = sgd_step(weights, grads, training.lr);
    }
  }
  return weights;
}

Ciphertext client_package_update(const ModelParameters& local_weights, const QkdKey& link_key,
                                 bool strict_otp) {
  return encrypt_weights(local_weights, link_key, strict_otp);
}

namespace {

std::vector<double> aggregation_coefficients(const std::vector<ClientUpdate>& updates,
                                             const AggregationMode& mode) {
  if (updates.empty()) throw ConfigError("aggregation needs at least one update");
  std::vector<double> coeffs(updates.size());
  if (mode.normalization == Normalization::TotalSamples) {
    double total = 0.0;
    for (const ClientUpdate& u : updates) total += static_cast<double>(u.n_samples);
    if (total <= 0.0) throw ConfigError("aggregation needs a positive total sample count");
    for (std::size_t i = 0; i < updates.size(); ++i) {
      coeffs[i] = static_cast<double>(updates[i].n_samples) / total;
    }
  } else {
    const double k = static_cast<double>(updates.size());
    for (std::size_t i = 0; i < updates.size(); ++i) {
      coeffs[i] = static_cast<double>(updates[i].n_samples) / k;
    }
  }
  return coeffs;
}

void check_update_shapes(const std::vector<ClientUpdate>& updates) {
  for (std::size_t i = 1; i < updates.size(); ++i) {
    if (!updates[0].weights.same_shapes(updates[i].weights)) {
      throw ShapeError("update from client " + std::to_string(updates[i].client_id) +
                       " does not match the shared architecture");
    }
  }
}

}  // namespace

ModelParameters server_aggregate(const std::vector<ClientUpdate>& updates,
                                 const AggregationMode& mode) {
  check_update_shapes(updates);
  const std::vector<double> coeffs = aggregation_coefficients(updates, mode);

  ModelParameters out = updates[0].weights;
  for (Tensor& t : out.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
  for (std::size_t i = 0; i < updates.size(); ++i) {
    for (std::size_t t = 0; t < out.tensors.size(); ++t) {
      const std::vector<double>& src = updates[i].weights.tensors[t].values;
      std::vector<double>& dst = out.tensors[t].values;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += coeffs[i] * src[k];
    }
  }
  return out;
}

ModelParameters server_incremental_update(const ModelParameters& global_weights,
                                          const std::vector<ClientUpdate>& updates,
                                          const AggregationMode& mode) {
  check_update_shapes(updates);
  if (!updates.empty() && !global_weights.same_shapes(updates[0].weights)) {
    throw ShapeError("global weights do not match update shapes");
  }
  const std::vector<double> coeffs = aggregation_coefficients(updates, mode);

  ModelParameters out = global_weights;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    for (std::size_t t = 0; t < out.tensors.size(); ++t) {
      const std::vector<double>& src = updates[i].weights.tensors[t].values;
      const std::vector<double>& base = global_weights.tensors[t].values;
      std::vector<double>& dst = out.tensors[t].values;
      for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] += coeffs[i] * (src[k] - base[k]);
      }
    }
  }
  return out;
}

std::map<std::size_t, LinkKeys> establish_link_keys(const std::vector<std::size_t>& client_ids,
                                                    std::size_t round, const QkdSettings& qkd,
                                                    std::uint64_t master_seed,
                                                    std::size_t payload_bytes) {
  const std::size_t bits_per_direction =
      qkd.strict_otp ? payload_bytes * 8 : kMinKeyBits;

  std::map<std::size_t, LinkKeys> out;
  for (std::size_t client_id : client_ids) {
    const QuantumChannelConfig& channel = qkd.link_channel(client_id);
    const std::uint64_t link_seed = federation_link_seed(master_seed, client_id, round);

    LinkKeys link;
    link.success_probability = qkd_success_probability(channel.gamma, channel.length_km);

    // Session 0, plus at most one retry session for key shortfall.
    std::vector<std::uint8_t> pool;
    std::size_t session_id = 0;
    while (true) {
      QkdSessionResult session = run_bb84(qkd.n_qubits, channel, qkd.policy, link_seed,
                                          session_id);
      ++link.sessions_run;
      if (session_id == 0) link.qber = session.qber_estimate;
      if (session.aborted) {
        link.aborted = true;
        link.abort_reason = session.abort_reason;
        break;
      }
      pool.insert(pool.end(), session.key.begin(), session.key.end());
      if (pool.size() >= 2 * bits_per_direction) break;
      if (session_id >= 1) {
        link.aborted = true;
        link.abort_reason = "key exhaustion: " + std::to_string(pool.size()) + " bits for " +
                            std::to_string(2 * bits_per_direction) + " needed, retry exhausted";
        break;
      }
      ++session_id;
    }

    if (!link.aborted) {
      link.upload.bits.assign(pool.begin(), pool.begin() + bits_per_direction);
      link.upload.key_id = derive_seed({master_seed, kTagUpload, client_id, round});
      link.download.bits.assign(pool.begin() + bits_per_direction,
                                pool.begin() + 2 * bits_per_direction);
      link.download.key_id = derive_seed({master_seed, kTagDownload, client_id, round});
      link.key_bits_used = 2 * bits_per_direction;
    }
    out.emplace(client_id, std::move(link));
  }
  return out;
}

std::map<std::size_t, Ciphertext> broadcast_global(const ModelParameters& global_weights,
                                                   const std::map<std::size_t, LinkKeys>& keys,
                                                   bool strict_otp) {
  std::map<std::size_t, Ciphertext> out;
  for (const auto& [client_id, link] : keys) {
    if (link.aborted) continue;
    out.emplace(client_id, encrypt_weights(global_weights, link.download, strict_otp));
  }
  return out;
}

void RoundKeyRegistry::check_and_mark(std::uint64_t key_id) {
  if (std::find(used.begin(), used.end(), key_id) != used.end()) {
    throw ProtocolError("key id " + std::to_string(key_id) +
                        " reused within a round; keys are per-client per-round");
  }
  used.push_back(key_id);
}

ModelParameters server_unpack_update(const std::vector<std::uint8_t>& frame_bytes,
                                     const QkdKey& upload_key, RoundKeyRegistry& registry) {
  Ciphertext ct = parse_ciphertext(frame_bytes);
  registry.check_and_mark(ct.key_id);
  return decrypt_weights(ct, upload_key);
}

namespace {

struct ClientPhaseOutput {
  std::size_t client_id = 0;
  ModelParameters local_weights;
  double local_loss = 0.0;
  std::vector<std::uint8_t> upload_frame;
  bool aborted = false;
  std::string abort_reason;
};

// Training + packaging for one client. Pure function of its inputs, so the
// execution schedule cannot influence the result.
ClientPhaseOutput run_client_phase(ClientState& state, const FederationConfig& config,
                                   std::size_t round, const LinkKeys* link) {
  ClientPhaseOutput out;
  out.client_id = state.client_id;
  try {
    const std::uint64_t round_seed =
        federation_round_seed(config.master_seed, state.client_id, round);
    out.local_weights =
        client_local_train(state, state.local_view, config.arch, config.training, round_seed);
    out.local_loss =
        evaluate(out.local_weights, config.arch, state.shard.images, state.shard.labels).loss;
    if (config.transport == TransportMode::Encrypted) {
      Ciphertext ct =
          client_package_update(out.local_weights, link->upload, config.qkd.strict_otp);
      out.upload_frame = frame_ciphertext(ct);
    } else {
      out.upload_frame = serialize_weights(out.local_weights);
    }
  } catch (const NumericError& e) {
    out.aborted = true;
    out.abort_reason = std::string("numeric divergence: ") + e.what();
  } catch (const KeyError& e) {
    out.aborted = true;
    out.abort_reason = std::string("key error: ") + e.what();
  }
  return out;
}

}  // namespace

TrainingResult run_training(const FederationConfig& config) {
  validate_architecture(config.arch);
  if (config.partition.client_shards.empty()) throw ConfigError("no client shards configured");
  for (const Dataset& shard : config.partition.client_shards) {
    if (shard.size() == 0) throw ConfigError("every client shard must hold >= 1 sample");
  }
  if (config.test_set.size() == 0) throw ConfigError("test set is empty");

  const std::size_t num_clients = config.partition.client_shards.size();
  TrainingResult result;
  result.global_weights = init_model(config.arch, federation_init_seed(config.master_seed));

  std::vector<ClientState> clients(num_clients);
  std::vector<std::size_t> client_ids(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) {
    clients[i].client_id = i;
    clients[i].shard = config.partition.client_shards[i];
    clients[i].local_view = result.global_weights;
    client_ids[i] = i;
  }

  const std::size_t payload_bytes = serialized_weight_size(result.global_weights);
  double prev_loss = 0.0;
  std::size_t plateau_streak = 0;

  for (std::size_t round = 0; round < config.training.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = round;
    rec.transport = transport_mode_name(config.transport);
    rec.aggregation = std::string(aggregation_rule_name(config.aggregation.rule)) + "/" +
                      normalization_name(config.aggregation.normalization);

    // Key establishment. Eavesdropping raises the configured links' Eve rate.
    std::map<std::size_t, LinkKeys> keys;
    if (config.transport == TransportMode::Encrypted) {
      QkdSettings qkd = config.qkd;
      if (config.attack.kind == AttackScenario::Kind::Eavesdrop) {
        qkd.per_link.resize(num_clients);
        for (std::size_t i = 0; i < num_clients; ++i) {
          qkd.per_link[i] = config.qkd.link_channel(i);
          if (config.attack.targets(i)) qkd.per_link[i].eve_rate = config.attack.eve_rate;
        }
      }
      keys = establish_link_keys(client_ids, round, qkd, config.master_seed, payload_bytes);
    }

    // Client phase: independent per client, optionally concurrent. Results
    // are merged in client id order either way.
    std::vector<ClientPhaseOutput> phase(num_clients);
    auto client_task = [&](std::size_t i) -> ClientPhaseOutput {
      const LinkKeys* link = nullptr;
      if (config.transport == TransportMode::Encrypted) {
        link = &keys.at(i);
        if (link->aborted) {
          ClientPhaseOutput out;
          out.client_id = i;
          out.aborted = true;
          out.abort_reason = "qkd abort: " + link->abort_reason;
          return out;
        }
      }
      return run_client_phase(clients[i], config, round, link);
    };
    if (config.parallel_clients) {
      std::vector<std::future<ClientPhaseOutput>> futures;
      futures.reserve(num_clients);
      for (std::size_t i = 0; i < num_clients; ++i) {
        futures.push_back(std::async(std::launch::async, client_task, i));
      }
      for (std::size_t i = 0; i < num_clients; ++i) phase[i] = futures[i].get();
    } else {
      for (std::size_t i = 0; i < num_clients; ++i) phase[i] = client_task(i);
    }

    // Upload leg, server unpack, per-round key bookkeeping.
    std::vector<ClientUpdate> updates;
    RoundKeyRegistry registry;
    bool round_security_abort = false;
    for (std::size_t i = 0; i < num_clients; ++i) {
      ClientRoundRecord crec;
      crec.client_id = i;
      crec.n_samples = clients[i].shard.size();
      if (config.transport == TransportMode::Encrypted) {
        const LinkKeys& link = keys.at(i);
        crec.qber = link.qber;
        crec.success_probability = link.success_probability;
        crec.key_bits_used = link.aborted ? 0 : link.key_bits_used;
      }
      if (phase[i].aborted) {
        crec.aborted = true;
        crec.abort_reason = phase[i].abort_reason;
        if (crec.abort_reason.rfind("qkd abort", 0) == 0) round_security_abort = true;
        rec.clients.push_back(std::move(crec));
        continue;
      }
      crec.local_loss = phase[i].local_loss;

      std::vector<std::uint8_t> frame = phase[i].upload_frame;
      if (config.attack.kind == AttackScenario::Kind::Tamper && config.attack.targets(i)) {
        frame[frame.size() / 2] ^= 0x01;  // in-transit bit flip
      }
      if (config.link_tap) {
        config.link_tap({round, i, LinkFrame::Direction::Upload, frame});
      }

      try {
        ModelParameters weights;
        if (config.transport == TransportMode::Encrypted) {
          weights = server_unpack_update(frame, keys.at(i).upload, registry);
        } else {
          weights = deserialize_weights(frame);
        }
        updates.push_back({i, clients[i].shard.size(), std::move(weights)});
      } catch (const TamperError& e) {
        crec.aborted = true;
        crec.abort_reason = std::string("tamper detected: ") + e.what();
        round_security_abort = true;
      } catch (const FormatError& e) {
        crec.aborted = true;
        crec.abort_reason = std::string("malformed upload: ") + e.what();
        round_security_abort = true;
      }
      rec.clients.push_back(std::move(crec));
    }

    // Aggregation barrier.
    if (updates.empty()) {
      rec.round_failed = true;
      round_security_abort = true;
    } else if (config.aggregation.rule == AggregationRule::DirectWeighted) {
      result.global_weights = server_aggregate(updates, config.aggregation);
    } else {
      result.global_weights =
          server_incremental_update(result.global_weights, updates, config.aggregation);
    }

    // Broadcast leg: clients with live links install the new global model;
    // the rest keep their stale view.
    if (config.transport == TransportMode::Encrypted) {
      const auto packages = broadcast_global(result.global_weights, keys, config.qkd.strict_otp);
      for (const auto& [client_id, ct] : packages) {
        std::vector<std::uint8_t> frame = frame_ciphertext(ct);
        if (config.link_tap) {
          config.link_tap({round, client_id, LinkFrame::Direction::Download, frame});
        }
        clients[client_id].local_view =
            decrypt_weights(parse_ciphertext(frame), keys.at(client_id).download);
      }
    } else {
      std::vector<std::uint8_t> frame = serialize_weights(result.global_weights);
      for (std::size_t i = 0; i < num_clients; ++i) {
        if (config.link_tap) {
          config.link_tap({round, i, LinkFrame::Direction::Download, frame});
        }
        clients[i].local_view = deserialize_weights(frame);
      }
    }

    const EvalResult eval =
        evaluate(result.global_weights, config.arch, config.test_set.images,
                 config.test_set.labels);
    rec.accuracy = eval.accuracy;
    rec.loss = eval.loss;
    rec.wall_time_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    result.records.push_back(std::move(rec));
    if (round_security_abort) result.security_abort = true;

    if (round_security_abort && config.training.fail_fast) break;

    // Early stop on a test-loss plateau.
    if (config.training.early_stop_epsilon > 0.0 && round > 0) {
      if (std::abs(eval.loss - prev_loss) < config.training.early_stop_epsilon) {
        ++plateau_streak;
      } else {
        plateau_streak = 0;
      }
      if (plateau_streak >= config.training.early_stop_patience) {
        result.stopped_early = true;
        prev_loss = eval.loss;
        break;
      }
    }
    prev_loss = eval.loss;
  }
  return result;
}

}  // namespace qfl
