#include "qfl/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <utility>

#include "qfl/crypto.hpp"
#include "qfl/errors.hpp"
#include "qfl/qkd.hpp"
#include "qfl/rng.hpp"

namespace qfl {
namespace {

using nlohmann::ordered_json;

// Seed-stream tags for the data pipeline (training tags live in federation.cpp).
constexpr std::uint64_t kTagGenerate = 'G';
constexpr std::uint64_t kTagSplit = 'S';
constexpr std::uint64_t kTagPartition = 'P';

std::string field_path(const std::string& ctx, const char* name) {
  return ctx.empty() ? std::string(name) : ctx + "." + name;
}

[[noreturn]] void fail_range(const std::string& path, const ordered_json& value,
                             const std::string& permitted) {
  throw ConfigError("config field '" + path + "': value " + value.dump() +
                    " out of range (permitted: " + permitted + ")");
}

[[noreturn]] void fail_type(const std::string& path, const char* expected) {
  throw ConfigError("config field '" + path + "': expected " + std::string(expected));
}

void check_unknown(const ordered_json& obj, const std::string& ctx,
                   std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* name : allowed) {
      if (item.key() == name) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown config field '" + field_path(ctx, item.key().c_str()) + "'");
    }
  }
}

const ordered_json* find(const ordered_json& obj, const char* name) {
  auto it = obj.find(name);
  return it == obj.end() ? nullptr : &*it;
}

std::uint64_t take_u64(const ordered_json& obj, const std::string& ctx, const char* name,
                       std::uint64_t def) {
  const ordered_json* v = find(obj, name);
  if (v == nullptr) return def;
  if (!v->is_number_integer()) fail_type(field_path(ctx, name), "an unsigned integer");
  if (!v->is_number_unsigned() && v->get<std::int64_t>() < 0) {
    fail_range(field_path(ctx, name), *v, ">= 0");
  }
  return v->get<std::uint64_t>();
}

std::size_t take_size(const ordered_json& obj, const std::string& ctx, const char* name,
                      std::size_t def) {
  return static_cast<std::size_t>(take_u64(obj, ctx, name, def));
}

double take_double(const ordered_json& obj, const std::string& ctx, const char* name,
                   double def) {
  const ordered_json* v = find(obj, name);
  if (v == nullptr) return def;
  if (!v->is_number()) fail_type(field_path(ctx, name), "a number");
  double out = v->get<double>();
  if (!std::isfinite(out)) fail_range(field_path(ctx, name), *v, "finite");
  return out;
}

bool take_bool(const ordered_json& obj, const std::string& ctx, const char* name, bool def) {
  const ordered_json* v = find(obj, name);
  if (v == nullptr) return def;
  if (!v->is_boolean()) fail_type(field_path(ctx, name), "a boolean");
  return v->get<bool>();
}

std::string take_string(const ordered_json& obj, const std::string& ctx, const char* name,
                        const std::string& def) {
  const ordered_json* v = find(obj, name);
  if (v == nullptr) return def;
  if (!v->is_string()) fail_type(field_path(ctx, name), "a string");
  return v->get<std::string>();
}

const ordered_json& require_object(const ordered_json& obj, const std::string& path) {
  if (!obj.is_object()) fail_type(path, "an object");
  return obj;
}

QuantumChannelConfig parse_channel(const ordered_json& obj, const std::string& ctx,
                                   const QuantumChannelConfig& defaults) {
  require_object(obj, ctx);
  check_unknown(obj, ctx, {"gamma", "length_km", "eve_rate", "noise_flip_prob"});
  QuantumChannelConfig ch = defaults;
  ch.gamma = take_double(obj, ctx, "gamma", ch.gamma);
  if (ch.gamma < 0.0) fail_range(field_path(ctx, "gamma"), obj.at("gamma"), ">= 0");
  ch.length_km = take_double(obj, ctx, "length_km", ch.length_km);
  if (ch.length_km < 0.0) fail_range(field_path(ctx, "length_km"), obj.at("length_km"), ">= 0");
  ch.eve_rate = take_double(obj, ctx, "eve_rate", ch.eve_rate);
  if (ch.eve_rate < 0.0 || ch.eve_rate > 1.0) {
    fail_range(field_path(ctx, "eve_rate"), obj.at("eve_rate"), "[0, 1]");
  }
  ch.noise_flip_prob = take_double(obj, ctx, "noise_flip_prob", ch.noise_flip_prob);
  if (ch.noise_flip_prob < 0.0 || ch.noise_flip_prob >= 1.0) {
    fail_range(field_path(ctx, "noise_flip_prob"), obj.at("noise_flip_prob"), "[0, 1)");
  }
  return ch;
}

LayerSpec parse_layer(const ordered_json& obj, const std::string& ctx) {
  require_object(obj, ctx);
  std::string kind = take_string(obj, ctx, "kind", "");
  if (kind == "conv2d") {
    check_unknown(obj, ctx, {"kind", "in_channels", "out_channels"});
    std::size_t in_ch = take_size(obj, ctx, "in_channels", 0);
    std::size_t out_ch = take_size(obj, ctx, "out_channels", 0);
    if (in_ch == 0) fail_range(field_path(ctx, "in_channels"), obj.value("in_channels", 0), ">= 1");
    if (out_ch == 0) {
      fail_range(field_path(ctx, "out_channels"), obj.value("out_channels", 0), ">= 1");
    }
    return LayerSpec::conv2d(in_ch, out_ch);
  }
  if (kind == "maxpool2d") {
    check_unknown(obj, ctx, {"kind"});
    return LayerSpec::maxpool2d();
  }
  if (kind == "relu") {
    check_unknown(obj, ctx, {"kind"});
    return LayerSpec::relu();
  }
  if (kind == "flatten") {
    check_unknown(obj, ctx, {"kind"});
    return LayerSpec::flatten();
  }
  if (kind == "dense") {
    check_unknown(obj, ctx, {"kind", "in_features", "out_features"});
    std::size_t in_f = take_size(obj, ctx, "in_features", 0);
    std::size_t out_f = take_size(obj, ctx, "out_features", 0);
    if (in_f == 0) fail_range(field_path(ctx, "in_features"), obj.value("in_features", 0), ">= 1");
    if (out_f == 0) {
      fail_range(field_path(ctx, "out_features"), obj.value("out_features", 0), ">= 1");
    }
    return LayerSpec::dense(in_f, out_f);
  }
  if (kind == "softmax") {
    check_unknown(obj, ctx, {"kind"});
    return LayerSpec::softmax();
  }
  throw ConfigError("config field '" + field_path(ctx, "kind") + "': unknown layer kind '" +
                    kind + "' (permitted: conv2d, maxpool2d, relu, flatten, dense, softmax)");
}

ordered_json layer_to_json(const LayerSpec& layer) {
  ordered_json j;
  j["kind"] = layer_kind_name(layer.kind);
  if (layer.kind == LayerKind::Conv2d) {
    j["in_channels"] = layer.in_channels;
    j["out_channels"] = layer.out_channels;
  } else if (layer.kind == LayerKind::Dense) {
    j["in_features"] = layer.in_features;
    j["out_features"] = layer.out_features;
  }
  return j;
}

ordered_json channel_to_json(const QuantumChannelConfig& ch) {
  ordered_json j;
  j["gamma"] = ch.gamma;
  j["length_km"] = ch.length_km;
  j["eve_rate"] = ch.eve_rate;
  j["noise_flip_prob"] = ch.noise_flip_prob;
  return j;
}

std::string iso_utc_now() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s + std::string(width - s.size(), ' ');
}

std::string pad_left(const std::string& s, std::size_t width) {
  return std::string(width - s.size(), ' ') + s;
}

}  // namespace

Architecture ExperimentConfig::resolved_architecture() const {
  if (architecture.has_value()) return *architecture;
  return default_architecture(image_height, image_width);
}

ExperimentConfig parse_config(const std::string& text) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be a JSON object");
  check_unknown(root, "", {"master_seed", "num_clients", "data", "model", "training", "qkd",
                           "transport", "attack", "aggregation", "parallel_clients",
                           "fail_fast"});

  ExperimentConfig cfg;
  cfg.master_seed = take_u64(root, "", "master_seed", cfg.master_seed);
  cfg.num_clients = take_size(root, "", "num_clients", cfg.num_clients);
  if (cfg.num_clients < 1) fail_range("num_clients", root.at("num_clients"), ">= 1");

  if (const ordered_json* d = find(root, "data")) {
    require_object(*d, "data");
    check_unknown(*d, "data", {"samples_per_class", "image_size", "noise_sigma", "partition",
                               "skew", "test_fraction"});
    cfg.samples_per_class = take_size(*d, "data", "samples_per_class", cfg.samples_per_class);
    if (cfg.samples_per_class < 1) {
      fail_range("data.samples_per_class", d->at("samples_per_class"), ">= 1");
    }
    if (const ordered_json* sz = find(*d, "image_size")) {
      if (!sz->is_array() || sz->size() != 2) {
        fail_type("data.image_size", "an array of two integers [height, width]");
      }
      for (const auto& side : *sz) {
        if (!side.is_number_integer() || (!side.is_number_unsigned() &&
                                          side.get<std::int64_t>() < 0)) {
          fail_type("data.image_size", "an array of two non-negative integers");
        }
      }
      cfg.image_height = (*sz)[0].get<std::size_t>();
      cfg.image_width = (*sz)[1].get<std::size_t>();
      if (cfg.image_height < 8 || cfg.image_width < 8) {
        fail_range("data.image_size", *sz, "each side >= 8");
      }
    }
    cfg.noise_sigma = take_double(*d, "data", "noise_sigma", cfg.noise_sigma);
    if (cfg.noise_sigma < 0.0) fail_range("data.noise_sigma", d->at("noise_sigma"), ">= 0");
    std::string part = take_string(*d, "data", "partition", "iid");
    if (part == "iid") {
      cfg.partition = PartitionMode::Iid;
    } else if (part == "label_skew") {
      cfg.partition = PartitionMode::LabelSkew;
    } else {
      fail_range("data.partition", d->at("partition"), "\"iid\" or \"label_skew\"");
    }
    cfg.skew = take_double(*d, "data", "skew", cfg.skew);
    if (cfg.skew < 0.0 || cfg.skew > 1.0) fail_range("data.skew", d->at("skew"), "[0, 1]");
    cfg.test_fraction = take_double(*d, "data", "test_fraction", cfg.test_fraction);
    if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0) {
      fail_range("data.test_fraction", d->at("test_fraction"), "(0, 1)");
    }
  }

  if (const ordered_json* m = find(root, "model")) {
    require_object(*m, "model");
    check_unknown(*m, "model", {"layers"});
    if (const ordered_json* layers = find(*m, "layers")) {
      if (!layers->is_array() || layers->empty()) {
        fail_type("model.layers", "a non-empty array of layer objects");
      }
      Architecture arch;
      arch.input_channels = 1;
      arch.input_height = cfg.image_height;
      arch.input_width = cfg.image_width;
      for (std::size_t i = 0; i < layers->size(); ++i) {
        arch.layers.push_back(
            parse_layer((*layers)[i], "model.layers[" + std::to_string(i) + "]"));
      }
      cfg.architecture = std::move(arch);
    }
  }

  if (const ordered_json* t = find(root, "training")) {
    require_object(*t, "training");
    check_unknown(*t, "training", {"rounds", "epochs", "batch_size", "lr",
                                   "early_stop_epsilon", "early_stop_patience"});
    cfg.training.rounds = take_size(*t, "training", "rounds", cfg.training.rounds);
    cfg.training.epochs = take_size(*t, "training", "epochs", cfg.training.epochs);
    if (cfg.training.epochs < 1) fail_range("training.epochs", t->at("epochs"), ">= 1");
    cfg.training.batch_size = take_size(*t, "training", "batch_size", cfg.training.batch_size);
    if (cfg.training.batch_size < 1) {
      fail_range("training.batch_size", t->at("batch_size"), ">= 1");
    }
    cfg.training.lr = take_double(*t, "training", "lr", cfg.training.lr);
    if (cfg.training.lr < 0.0) fail_range("training.lr", t->at("lr"), ">= 0");
    cfg.training.early_stop_epsilon =
        take_double(*t, "training", "early_stop_epsilon", cfg.training.early_stop_epsilon);
    if (cfg.training.early_stop_epsilon < 0.0) {
      fail_range("training.early_stop_epsilon", t->at("early_stop_epsilon"), ">= 0");
    }
    cfg.training.early_stop_patience =
        take_size(*t, "training", "early_stop_patience", cfg.training.early_stop_patience);
    if (cfg.training.early_stop_patience < 1) {
      fail_range("training.early_stop_patience", t->at("early_stop_patience"), ">= 1");
    }
  }

  if (const ordered_json* q = find(root, "qkd")) {
    require_object(*q, "qkd");
    check_unknown(*q, "qkd", {"n_qubits", "channel", "per_link", "policy", "strict_otp"});
    cfg.qkd.n_qubits = take_size(*q, "qkd", "n_qubits", cfg.qkd.n_qubits);
    if (cfg.qkd.n_qubits < 1) fail_range("qkd.n_qubits", q->at("n_qubits"), ">= 1");
    if (const ordered_json* ch = find(*q, "channel")) {
      cfg.qkd.channel = parse_channel(*ch, "qkd.channel", cfg.qkd.channel);
    }
    if (const ordered_json* pl = find(*q, "per_link")) {
      if (!pl->is_array()) fail_type("qkd.per_link", "an array of channel objects");
      cfg.qkd.per_link.clear();
      for (std::size_t i = 0; i < pl->size(); ++i) {
        cfg.qkd.per_link.push_back(
            parse_channel((*pl)[i], "qkd.per_link[" + std::to_string(i) + "]",
                          cfg.qkd.channel));
      }
      if (!cfg.qkd.per_link.empty() && cfg.qkd.per_link.size() != cfg.num_clients) {
        throw ConfigError("config field 'qkd.per_link': expected one channel per client (" +
                          std::to_string(cfg.num_clients) + "), got " +
                          std::to_string(cfg.qkd.per_link.size()));
      }
    }
    if (const ordered_json* p = find(*q, "policy")) {
      require_object(*p, "qkd.policy");
      check_unknown(*p, "qkd.policy",
                    {"qber_abort_threshold", "sample_fraction", "min_key_bits"});
      cfg.qkd.policy.qber_abort_threshold = take_double(
          *p, "qkd.policy", "qber_abort_threshold", cfg.qkd.policy.qber_abort_threshold);
      if (cfg.qkd.policy.qber_abort_threshold <= 0.0 ||
          cfg.qkd.policy.qber_abort_threshold >= 1.0) {
        fail_range("qkd.policy.qber_abort_threshold", p->at("qber_abort_threshold"), "(0, 1)");
      }
      cfg.qkd.policy.sample_fraction =
          take_double(*p, "qkd.policy", "sample_fraction", cfg.qkd.policy.sample_fraction);
      if (cfg.qkd.policy.sample_fraction <= 0.0 || cfg.qkd.policy.sample_fraction >= 1.0) {
        fail_range("qkd.policy.sample_fraction", p->at("sample_fraction"), "(0, 1)");
      }
      cfg.qkd.policy.min_key_bits =
          take_size(*p, "qkd.policy", "min_key_bits", cfg.qkd.policy.min_key_bits);
      if (cfg.qkd.policy.min_key_bits < 1) {
        fail_range("qkd.policy.min_key_bits", p->at("min_key_bits"), ">= 1");
      }
    }
    cfg.qkd.strict_otp = take_bool(*q, "qkd", "strict_otp", cfg.qkd.strict_otp);
  }

  std::string transport = take_string(root, "", "transport", "encrypted");
  if (transport == "plaintext") {
    cfg.transport = TransportMode::Plaintext;
  } else if (transport == "encrypted") {
    cfg.transport = TransportMode::Encrypted;
  } else {
    fail_range("transport", root.at("transport"), "\"plaintext\" or \"encrypted\"");
  }

  if (const ordered_json* a = find(root, "attack")) {
    require_object(*a, "attack");
    check_unknown(*a, "attack", {"kind", "clients", "eve_rate"});
    std::string kind = take_string(*a, "attack", "kind", "none");
    if (kind == "none") {
      cfg.attack.kind = AttackScenario::Kind::None;
    } else if (kind == "eavesdrop") {
      cfg.attack.kind = AttackScenario::Kind::Eavesdrop;
    } else if (kind == "tamper") {
      cfg.attack.kind = AttackScenario::Kind::Tamper;
    } else {
      fail_range("attack.kind", a->at("kind"), "\"none\", \"eavesdrop\" or \"tamper\"");
    }
    if (const ordered_json* cl = find(*a, "clients")) {
      if (!cl->is_array()) fail_type("attack.clients", "an array of client ids");
      cfg.attack.target_clients.clear();
      for (const auto& c : *cl) {
        if (!c.is_number_integer() || (!c.is_number_unsigned() && c.get<std::int64_t>() < 0)) {
          fail_type("attack.clients", "an array of non-negative client ids");
        }
        std::size_t id = c.get<std::size_t>();
        if (id >= cfg.num_clients) fail_range("attack.clients", c, "< num_clients");
        cfg.attack.target_clients.push_back(id);
      }
    }
    cfg.attack.eve_rate = take_double(*a, "attack", "eve_rate", cfg.attack.eve_rate);
    if (cfg.attack.eve_rate < 0.0 || cfg.attack.eve_rate > 1.0) {
      fail_range("attack.eve_rate", a->at("eve_rate"), "[0, 1]");
    }
  }

  if (const ordered_json* g = find(root, "aggregation")) {
    require_object(*g, "aggregation");
    check_unknown(*g, "aggregation", {"rule", "normalization"});
    std::string rule = take_string(*g, "aggregation", "rule", "direct");
    if (rule == "direct") {
      cfg.aggregation.rule = AggregationRule::DirectWeighted;
    } else if (rule == "incremental") {
      cfg.aggregation.rule = AggregationRule::IncrementalDelta;
    } else {
      fail_range("aggregation.rule", g->at("rule"), "\"direct\" or \"incremental\"");
    }
    std::string norm = take_string(*g, "aggregation", "normalization", "total_samples");
    if (norm == "total_samples") {
      cfg.aggregation.normalization = Normalization::TotalSamples;
    } else if (norm == "client_count") {
      cfg.aggregation.normalization = Normalization::ClientCount;
    } else {
      fail_range("aggregation.normalization", g->at("normalization"),
                 "\"total_samples\" or \"client_count\"");
    }
  }

  cfg.parallel_clients = take_bool(root, "", "parallel_clients", cfg.parallel_clients);
  cfg.training.fail_fast = take_bool(root, "", "fail_fast", cfg.training.fail_fast);

  // Surface architecture/shape problems at parse time rather than mid-run.
  try {
    validate_architecture(cfg.resolved_architecture());
  } catch (const Error& e) {
    throw ConfigError("config field 'model': " + std::string(e.what()));
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["master_seed"] = cfg.master_seed;
  j["num_clients"] = cfg.num_clients;

  ordered_json data;
  data["samples_per_class"] = cfg.samples_per_class;
  data["image_size"] = ordered_json::array({cfg.image_height, cfg.image_width});
  data["noise_sigma"] = cfg.noise_sigma;
  data["partition"] = cfg.partition == PartitionMode::Iid ? "iid" : "label_skew";
  data["skew"] = cfg.skew;
  data["test_fraction"] = cfg.test_fraction;
  j["data"] = data;

  ordered_json layers = ordered_json::array();
  for (const LayerSpec& layer : cfg.resolved_architecture().layers) {
    layers.push_back(layer_to_json(layer));
  }
  j["model"] = ordered_json{{"layers", layers}};

  ordered_json training;
  training["rounds"] = cfg.training.rounds;
  training["epochs"] = cfg.training.epochs;
  training["batch_size"] = cfg.training.batch_size;
  training["lr"] = cfg.training.lr;
  training["early_stop_epsilon"] = cfg.training.early_stop_epsilon;
  training["early_stop_patience"] = cfg.training.early_stop_patience;
  j["training"] = training;

  ordered_json qkd;
  qkd["n_qubits"] = cfg.qkd.n_qubits;
  qkd["channel"] = channel_to_json(cfg.qkd.channel);
  ordered_json per_link = ordered_json::array();
  for (const QuantumChannelConfig& ch : cfg.qkd.per_link) per_link.push_back(channel_to_json(ch));
  qkd["per_link"] = per_link;
  ordered_json policy;
  policy["qber_abort_threshold"] = cfg.qkd.policy.qber_abort_threshold;
  policy["sample_fraction"] = cfg.qkd.policy.sample_fraction;
  policy["min_key_bits"] = cfg.qkd.policy.min_key_bits;
  qkd["policy"] = policy;
  qkd["strict_otp"] = cfg.qkd.strict_otp;
  j["qkd"] = qkd;

  j["transport"] = transport_mode_name(cfg.transport);

  ordered_json attack;
  switch (cfg.attack.kind) {
    case AttackScenario::Kind::None:
      attack["kind"] = "none";
      break;
    case AttackScenario::Kind::Eavesdrop:
      attack["kind"] = "eavesdrop";
      break;
    case AttackScenario::Kind::Tamper:
      attack["kind"] = "tamper";
      break;
  }
  attack["clients"] = cfg.attack.target_clients;
  attack["eve_rate"] = cfg.attack.eve_rate;
  j["attack"] = attack;

  ordered_json aggregation;
  aggregation["rule"] = aggregation_rule_name(cfg.aggregation.rule);
  aggregation["normalization"] = normalization_name(cfg.aggregation.normalization);
  j["aggregation"] = aggregation;

  j["parallel_clients"] = cfg.parallel_clients;
  j["fail_fast"] = cfg.training.fail_fast;
  return j;
}

FederationConfig build_federation_config(const ExperimentConfig& cfg) {
  SyntheticConfig data_cfg;
  data_cfg.samples_per_class = cfg.samples_per_class;
  data_cfg.height = cfg.image_height;
  data_cfg.width = cfg.image_width;
  data_cfg.noise_sigma = cfg.noise_sigma;
  data_cfg.seed = derive_seed({cfg.master_seed, kTagGenerate});

  Dataset full = generate_dataset(data_cfg);
  auto [train, test] =
      train_test_split(full, cfg.test_fraction, derive_seed({cfg.master_seed, kTagSplit}));

  std::uint64_t part_seed = derive_seed({cfg.master_seed, kTagPartition});
  Partition partition = cfg.partition == PartitionMode::Iid
                            ? partition_iid(train, cfg.num_clients, part_seed)
                            : partition_label_skew(train, cfg.num_clients, cfg.skew, part_seed);

  FederationConfig fc;
  fc.arch = cfg.resolved_architecture();
  fc.partition = std::move(partition);
  fc.test_set = std::move(test);
  fc.training = cfg.training;
  fc.qkd = cfg.qkd;
  fc.transport = cfg.transport;
  fc.attack = cfg.attack;
  fc.aggregation = cfg.aggregation;
  fc.master_seed = cfg.master_seed;
  fc.parallel_clients = cfg.parallel_clients;
  return fc;
}

nlohmann::ordered_json round_record_to_json(const RoundRecord& rec) {
  ordered_json j;
  j["round"] = rec.round;
  j["transport"] = rec.transport;
  j["aggregation"] = rec.aggregation;
  j["accuracy"] = rec.accuracy;
  j["loss"] = rec.loss;
  j["round_failed"] = rec.round_failed;
  j["wall_time_ms"] = rec.wall_time_ms;
  ordered_json clients = ordered_json::array();
  for (const ClientRoundRecord& c : rec.clients) {
    ordered_json cj;
    cj["client_id"] = c.client_id;
    cj["n_samples"] = c.n_samples;
    cj["local_loss"] = c.local_loss;
    cj["qber"] = c.qber;
    cj["success_probability"] = c.success_probability;
    cj["key_bits_used"] = c.key_bits_used;
    cj["aborted"] = c.aborted;
    cj["abort_reason"] = c.abort_reason;
    clients.push_back(cj);
  }
  j["clients"] = clients;
  return j;
}

void emit_metrics(const std::vector<RoundRecord>& records, const std::string& path) {
  std::string content;
  for (const RoundRecord& rec : records) {
    content += round_record_to_json(rec).dump();
    content += '\n';
  }
  write_text_file(path, content);
}

nlohmann::ordered_json strip_volatile_fields(nlohmann::ordered_json j) {
  if (j.is_object()) {
    j.erase("wall_time_ms");
    j.erase("total_wall_time_ms");
    j.erase("generated_at");
    for (auto& item : j.items()) item.value() = strip_volatile_fields(item.value());
  } else if (j.is_array()) {
    for (auto& item : j) item = strip_volatile_fields(item);
  }
  return j;
}

std::string canonical_metrics_content(const std::string& metrics_path) {
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in) throw IoError("cannot open metrics file '" + metrics_path + "'");
  std::string line;
  std::string out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out += strip_volatile_fields(ordered_json::parse(line)).dump();
    out += '\n';
  }
  return out;
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

  FederationConfig fc = build_federation_config(cfg);
  auto t0 = std::chrono::steady_clock::now();
  TrainingResult training = run_training(fc);
  double total_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  ExperimentOutcome out;
  out.metrics_path = out_dir + "/metrics.jsonl";
  out.summary_path = out_dir + "/summary.json";
  out.weights_path = out_dir + "/global_weights.bin";
  emit_metrics(training.records, out.metrics_path);

  std::vector<std::uint8_t> weight_bytes = serialize_weights(training.global_weights);
  std::string weight_str(weight_bytes.begin(), weight_bytes.end());
  write_text_file(out.weights_path, weight_str);

  ordered_json summary;
  summary["config"] = config_to_json(cfg);
  summary["rounds_completed"] = training.records.size();
  summary["final_accuracy"] =
      training.records.empty() ? 0.0 : training.records.back().accuracy;
  summary["final_loss"] = training.records.empty() ? 0.0 : training.records.back().loss;
  summary["security_abort"] = training.security_abort;
  summary["stopped_early"] = training.stopped_early;
  ordered_json events = ordered_json::array();
  for (const RoundRecord& rec : training.records) {
    for (const ClientRoundRecord& c : rec.clients) {
      if (!c.aborted) continue;
      ordered_json ev;
      ev["round"] = rec.round;
      ev["client_id"] = c.client_id;
      ev["reason"] = c.abort_reason;
      events.push_back(ev);
    }
  }
  summary["security_events"] = events;
  summary["total_wall_time_ms"] = total_ms;
  summary["generated_at"] = iso_utc_now();
  write_text_file(out.summary_path, summary.dump(2) + "\n");

  out.exit_code =
      (training.security_abort && cfg.training.fail_fast) ? kExitSecurity : kExitOk;
  out.training = std::move(training);
  return out;
}

std::string render_comparison_table(const std::vector<ComparisonRow>& rows) {
  const std::string h0 = "Model";
  const std::string h1 = "Accuracy";
  const std::string h2 = "Loss";
  std::size_t w0 = h0.size();
  std::size_t w1 = h1.size();
  std::size_t w2 = h2.size();
  for (const ComparisonRow& row : rows) {
    w0 = std::max(w0, row.label.size());
    w1 = std::max(w1, fmt4(row.accuracy).size());
    w2 = std::max(w2, fmt4(row.loss).size());
  }
  std::string border = "+" + std::string(w0 + 2, '-') + "+" + std::string(w1 + 2, '-') + "+" +
                       std::string(w2 + 2, '-') + "+\n";
  std::string out = border;
  out += "| " + pad_right(h0, w0) + " | " + pad_right(h1, w1) + " | " + pad_right(h2, w2) +
         " |\n";
  out += border;
  for (const ComparisonRow& row : rows) {
    out += "| " + pad_right(row.label, w0) + " | " + pad_left(fmt4(row.accuracy), w1) + " | " +
           pad_left(fmt4(row.loss), w2) + " |\n";
  }
  out += border;
  return out;
}

ComparisonOutcome compare_baseline_encrypted(const ExperimentConfig& cfg,
                                             const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

  ExperimentConfig base_cfg = cfg;
  base_cfg.transport = TransportMode::Plaintext;
  ExperimentConfig enc_cfg = cfg;
  enc_cfg.transport = TransportMode::Encrypted;

  ComparisonOutcome out;
  out.baseline = run_training(build_federation_config(base_cfg));
  out.encrypted = run_training(build_federation_config(enc_cfg));
  emit_metrics(out.baseline.records, out_dir + "/metrics_plaintext.jsonl");
  emit_metrics(out.encrypted.records, out_dir + "/metrics_encrypted.jsonl");

  const std::size_t rounds =
      std::min(out.baseline.records.size(), out.encrypted.records.size());
  out.accuracy_parity = out.baseline.records.size() == out.encrypted.records.size();
  out.loss_parity = out.accuracy_parity;
  for (std::size_t r = 0; r < rounds; ++r) {
    if (out.baseline.records[r].accuracy != out.encrypted.records[r].accuracy) {
      out.accuracy_parity = false;
    }
    if (out.baseline.records[r].loss != out.encrypted.records[r].loss) {
      out.loss_parity = false;
    }
  }
  out.weights_identical = serialize_weights(out.baseline.global_weights) ==
                          serialize_weights(out.encrypted.global_weights);

  double base_acc = out.baseline.records.empty() ? 0.0 : out.baseline.records.back().accuracy;
  double base_loss = out.baseline.records.empty() ? 0.0 : out.baseline.records.back().loss;
  double enc_acc = out.encrypted.records.empty() ? 0.0 : out.encrypted.records.back().accuracy;
  double enc_loss = out.encrypted.records.empty() ? 0.0 : out.encrypted.records.back().loss;

  out.table = render_comparison_table({{"Baseline (plaintext transport)", base_acc, base_loss},
                                       {"Encrypted (decrypted at server)", enc_acc, enc_loss}});

  bool parity = out.accuracy_parity && out.loss_parity && out.weights_identical;
  ordered_json report;
  report["config"] = config_to_json(cfg);
  report["baseline"] = ordered_json{{"final_accuracy", base_acc},
                                    {"final_loss", base_loss},
                                    {"security_abort", out.baseline.security_abort}};
  report["encrypted"] = ordered_json{{"final_accuracy", enc_acc},
                                     {"final_loss", enc_loss},
                                     {"security_abort", out.encrypted.security_abort}};
  report["accuracy_parity"] = out.accuracy_parity;
  report["loss_parity"] = out.loss_parity;
  report["weights_identical"] = out.weights_identical;
  report["parity"] = parity;
  report["accuracy_delta"] = std::fabs(base_acc - enc_acc);
  report["loss_delta"] = std::fabs(base_loss - enc_loss);
  ordered_json rounds_json = ordered_json::array();
  for (std::size_t r = 0; r < rounds; ++r) {
    ordered_json rj;
    rj["round"] = r;
    rj["baseline_accuracy"] = out.baseline.records[r].accuracy;
    rj["encrypted_accuracy"] = out.encrypted.records[r].accuracy;
    rj["baseline_loss"] = out.baseline.records[r].loss;
    rj["encrypted_loss"] = out.encrypted.records[r].loss;
    rounds_json.push_back(rj);
  }
  report["rounds"] = rounds_json;
  report["generated_at"] = iso_utc_now();

  out.report_path = out_dir + "/comparison.json";
  write_text_file(out.report_path, report.dump(2) + "\n");
  write_text_file(out_dir + "/comparison.txt", out.table);

  bool security = (out.baseline.security_abort || out.encrypted.security_abort) &&
                  cfg.training.fail_fast;
  out.exit_code = security ? kExitSecurity : (parity ? kExitOk : 1);
  return out;
}

std::vector<nlohmann::ordered_json> probe_qkd(const std::vector<double>& gammas,
                                              const std::vector<double>& lengths_km,
                                              const std::vector<double>& eve_rates,
                                              std::size_t n_qubits, const QkdPolicy& policy,
                                              std::uint64_t seed) {
  std::vector<ordered_json> out;
  std::uint64_t session_id = 0;
  for (double gamma : gammas) {
    for (double length : lengths_km) {
      for (double eve : eve_rates) {
        QuantumChannelConfig channel;
        channel.gamma = gamma;
        channel.length_km = length;
        channel.eve_rate = eve;
        QkdSessionResult res = run_bb84(n_qubits, channel, policy, seed, session_id++);
        ordered_json record;
        record["gamma"] = gamma;
        record["length_km"] = length;
        record["eve_rate"] = eve;
        record["n_qubits"] = n_qubits;
        ordered_json session = session_to_json(res, channel);
        for (auto& item : session.items()) record[item.key()] = item.value();
        out.push_back(std::move(record));
      }
    }
  }
  return out;
}

}  // namespace qfl
