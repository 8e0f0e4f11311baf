#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qfl/errors.hpp"
#include "qfl/experiment.hpp"

using namespace qfl;
using nlohmann::json;

namespace {

// Fast-running config used by the pipeline tests below.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.samples_per_class = 40;
  cfg.image_height = 12;
  cfg.image_width = 12;
  cfg.training.rounds = 2;
  return cfg;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("qfl_test_" + std::to_string(std::rand()) + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("an empty config document resolves to the documented defaults") {
  ExperimentConfig cfg = parse_config("{}");
  CHECK(cfg.master_seed == 42);
  CHECK(cfg.num_clients == 4);
  CHECK(cfg.samples_per_class == 100);
  CHECK(cfg.image_height == 16);
  CHECK(cfg.image_width == 16);
  CHECK(cfg.noise_sigma == 0.1);
  CHECK(cfg.partition == PartitionMode::Iid);
  CHECK(cfg.test_fraction == 0.2);
  CHECK_FALSE(cfg.architecture.has_value());
  CHECK(cfg.training.rounds == 10);
  CHECK(cfg.training.epochs == 1);
  CHECK(cfg.training.batch_size == 16);
  CHECK(cfg.training.lr == 0.05);
  CHECK(cfg.qkd.n_qubits == 4096);
  CHECK(cfg.qkd.channel.gamma == 0.05);
  CHECK(cfg.qkd.channel.length_km == 10.0);
  CHECK(cfg.qkd.policy.qber_abort_threshold == 0.11);
  CHECK(cfg.transport == TransportMode::Encrypted);
  CHECK(cfg.attack.kind == AttackScenario::Kind::None);
  CHECK(cfg.aggregation.rule == AggregationRule::DirectWeighted);
  CHECK(cfg.aggregation.normalization == Normalization::TotalSamples);
  CHECK_FALSE(cfg.parallel_clients);

  ExperimentConfig partial = parse_config(R"({"num_clients": 7})");
  CHECK(partial.num_clients == 7);
  CHECK(partial.training.rounds == 10);  // untouched fields keep defaults
}

TEST_CASE("unknown fields are rejected by name") {
  std::string msg = message_of([] { parse_config(R"({"num_client": 4})"); });
  CHECK(msg.find("num_client") != std::string::npos);

  msg = message_of([] { parse_config(R"({"training": {"learning_rate": 0.1}})"); });
  CHECK(msg.find("training.learning_rate") != std::string::npos);

  CHECK_THROWS_AS(parse_config(R"({"qkd": {"qubits": 100}})"), ConfigError);
}

TEST_CASE("out-of-range values report the field and the permitted range") {
  std::string msg = message_of([] { parse_config(R"({"num_clients": 0})"); });
  CHECK(msg.find("num_clients") != std::string::npos);
  CHECK(msg.find(">= 1") != std::string::npos);

  msg = message_of([] { parse_config(R"({"data": {"test_fraction": 1.5}})"); });
  CHECK(msg.find("test_fraction") != std::string::npos);

  msg = message_of([] { parse_config(R"({"attack": {"kind": "eavesdrop", "eve_rate": 2.0}})"); });
  CHECK(msg.find("eve_rate") != std::string::npos);

  CHECK_THROWS_AS(parse_config(R"({"training": {"lr": -0.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"data": {"image_size": [4, 16]}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("not json at all"), ConfigError);
  CHECK_THROWS_AS(parse_config("[1, 2, 3]"), ConfigError);
}

TEST_CASE("per-link channel lists must cover every client") {
  const std::string text = R"({
    "num_clients": 3,
    "qkd": {"per_link": [{"gamma": 0.1}, {"gamma": 0.2}]}
  })";
  std::string msg = message_of([&] { parse_config(text); });
  CHECK(msg.find("per_link") != std::string::npos);

  ExperimentConfig ok = parse_config(R"({
    "num_clients": 2,
    "qkd": {"per_link": [{"gamma": 0.1}, {"gamma": 0.2, "eve_rate": 0.5}]}
  })");
  REQUIRE(ok.qkd.per_link.size() == 2);
  CHECK(ok.qkd.per_link[1].eve_rate == 0.5);
  CHECK(ok.qkd.per_link[1].length_km == 10.0);  // unset knobs keep defaults
}

TEST_CASE("explicit architectures parse layer by layer") {
  ExperimentConfig cfg = parse_config(R"({
    "data": {"image_size": [10, 10]},
    "model": {"layers": [
      {"kind": "conv2d", "in_channels": 1, "out_channels": 2},
      {"kind": "relu"},
      {"kind": "flatten"},
      {"kind": "dense", "in_features": 128, "out_features": 2},
      {"kind": "softmax"}
    ]}
  })");
  REQUIRE(cfg.architecture.has_value());
  CHECK(cfg.architecture->layers.size() == 5);
  CHECK(cfg.resolved_architecture().layers.size() == 5);

  std::string msg = message_of([] {
    parse_config(R"({"model": {"layers": [{"kind": "avgpool"}]}})");
  });
  CHECK(msg.find("avgpool") != std::string::npos);
  CHECK(msg.find("conv2d") != std::string::npos);  // lists what is permitted

  // Shape mismatches surface at parse time, not deep inside training.
  CHECK_THROWS_AS(parse_config(R"({"model": {"layers": [
    {"kind": "dense", "in_features": 3, "out_features": 2}
  ]}})"),
                  ConfigError);
}

TEST_CASE("config echo round-trips through parse and dump") {
  const std::string text = R"({
    "master_seed": 7,
    "num_clients": 3,
    "data": {"samples_per_class": 50, "partition": "label_skew", "skew": 0.5},
    "training": {"rounds": 4, "lr": 0.1},
    "qkd": {"n_qubits": 2048, "channel": {"gamma": 0.08}},
    "transport": "plaintext",
    "attack": {"kind": "tamper", "clients": [1]},
    "aggregation": {"rule": "incremental", "normalization": "client_count"},
    "fail_fast": true
  })";
  ExperimentConfig cfg = parse_config(text);
  CHECK(cfg.partition == PartitionMode::LabelSkew);
  CHECK(cfg.skew == 0.5);
  CHECK(cfg.transport == TransportMode::Plaintext);
  CHECK(cfg.attack.kind == AttackScenario::Kind::Tamper);
  CHECK(cfg.attack.target_clients == std::vector<std::size_t>{1});
  CHECK(cfg.aggregation.rule == AggregationRule::IncrementalDelta);
  CHECK(cfg.aggregation.normalization == Normalization::ClientCount);
  CHECK(cfg.training.fail_fast);

  const std::string dumped = config_to_json(cfg).dump(2);
  ExperimentConfig reparsed = parse_config(dumped);
  CHECK(config_to_json(reparsed).dump(2) == dumped);
}

TEST_CASE("the data pipeline cuts shards and test set to the configured sizes") {
  ExperimentConfig cfg = parse_config("{}");  // 200 samples, 20% test, 4 clients
  FederationConfig fed = build_federation_config(cfg);
  CHECK(fed.test_set.size() == 40);
  REQUIRE(fed.partition.client_shards.size() == 4);
  for (const Dataset& shard : fed.partition.client_shards) CHECK(shard.size() == 40);
  CHECK(fed.master_seed == cfg.master_seed);
  CHECK(fed.arch.input_height == 16);

  // The pipeline is a pure function of the config.
  FederationConfig again = build_federation_config(cfg);
  CHECK(dataset_to_bytes(again.test_set) == dataset_to_bytes(fed.test_set));
  CHECK(dataset_to_bytes(again.partition.client_shards[2]) ==
        dataset_to_bytes(fed.partition.client_shards[2]));
}

TEST_CASE("running an experiment writes metrics, weights, and a summary") {
  TempDir dir;
  ExperimentOutcome outcome = run_experiment(tiny_config(), dir.str());
  CHECK(outcome.exit_code == kExitOk);
  CHECK(outcome.training.records.size() == 2);

  std::istringstream metrics(slurp(outcome.metrics_path));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(metrics, line)) {
    json rec = json::parse(line);
    CHECK(rec.at("round") == lines);
    CHECK(rec.at("transport") == "encrypted");
    CHECK(rec.at("clients").size() == 4);
    ++lines;
  }
  CHECK(lines == 2);

  json summary = json::parse(slurp(outcome.summary_path));
  CHECK(summary.at("rounds_completed") == 2);
  CHECK(summary.at("security_abort") == false);
  CHECK(summary.at("config").at("num_clients") == 4);
  CHECK(summary.at("final_accuracy").is_number());

  CHECK(std::filesystem::file_size(outcome.weights_path) > 0);
}

TEST_CASE("metrics are byte-identical across runs once timing is stripped") {
  TempDir a;
  TempDir b;
  ExperimentConfig cfg = tiny_config();
  ExperimentOutcome first = run_experiment(cfg, a.str());
  ExperimentOutcome second = run_experiment(cfg, b.str());
  CHECK(slurp(first.metrics_path) != "");
  CHECK(canonical_metrics_content(first.metrics_path) ==
        canonical_metrics_content(second.metrics_path));
  CHECK(slurp(first.weights_path) == slurp(second.weights_path));
}

TEST_CASE("volatile fields are stripped recursively") {
  nlohmann::ordered_json doc = nlohmann::ordered_json::parse(R"({
    "wall_time_ms": 3.5,
    "outer": {"total_wall_time_ms": 9.9, "keep": 1},
    "list": [{"generated_at": "2026-01-01T00:00:00Z", "round": 0}]
  })");
  nlohmann::ordered_json stripped = strip_volatile_fields(doc);
  CHECK(stripped.dump() == R"({"outer":{"keep":1},"list":[{"round":0}]})");
}

TEST_CASE("a security abort with fail-fast surfaces in the exit code") {
  TempDir dir;
  ExperimentConfig cfg = tiny_config();
  cfg.attack.kind = AttackScenario::Kind::Tamper;
  cfg.attack.target_clients = {0};
  cfg.training.fail_fast = true;
  ExperimentOutcome outcome = run_experiment(cfg, dir.str());
  CHECK(outcome.exit_code == kExitSecurity);
  CHECK(outcome.training.security_abort);

  json summary = json::parse(slurp(outcome.summary_path));
  CHECK(summary.at("security_abort") == true);
  CHECK(summary.at("security_events").size() > 0);
}

TEST_CASE("comparing transports confirms parity and writes the report") {
  TempDir dir;
  ComparisonOutcome outcome = compare_baseline_encrypted(tiny_config(), dir.str());
  CHECK(outcome.exit_code == kExitOk);
  CHECK(outcome.accuracy_parity);
  CHECK(outcome.loss_parity);
  CHECK(outcome.weights_identical);

  json report = json::parse(slurp(outcome.report_path));
  CHECK(report.at("accuracy_parity") == true);
  CHECK(report.at("loss_parity") == true);
  CHECK(report.at("weights_identical") == true);
  CHECK(report.at("rounds").size() == 2);

  CHECK(outcome.table.find("Accuracy") != std::string::npos);
  CHECK(std::filesystem::exists(dir.path / "metrics_plaintext.jsonl"));
  CHECK(std::filesystem::exists(dir.path / "metrics_encrypted.jsonl"));
}

TEST_CASE("the comparison table renders labels and four-decimal metrics") {
  std::vector<ComparisonRow> rows = {
      {"Baseline Model", 0.7777, 5.0011},
      {"Encrypted Model (After Decryption)", 0.7777, 4.9535},
  };
  std::string table = render_comparison_table(rows);
  CHECK(table.find("Model") != std::string::npos);
  CHECK(table.find("Accuracy") != std::string::npos);
  CHECK(table.find("Loss") != std::string::npos);
  CHECK(table.find("0.7777") != std::string::npos);
  CHECK(table.find("5.0011") != std::string::npos);
  CHECK(table.find("4.9535") != std::string::npos);
  CHECK(table.find("Encrypted Model (After Decryption)") != std::string::npos);
}

TEST_CASE("the key-exchange probe sweeps the channel grid") {
  QkdPolicy policy;
  auto records = probe_qkd({0.05, 0.1}, {10.0}, {0.0, 1.0}, 2048, policy, 99);
  REQUIRE(records.size() == 4);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].at("session_id") == i);
    const double gamma = records[i].at("gamma");
    const double length = records[i].at("length_km");
    CHECK(records[i].at("success_probability") ==
          doctest::Approx(qkd_success_probability(gamma, length)).epsilon(1e-15));
  }
  CHECK(records[0].at("eve_rate") == 0.0);
  CHECK(records[0].at("qber") == 0.0);
  CHECK(records[1].at("eve_rate") == 1.0);
  CHECK(records[1].at("aborted") == true);
}

TEST_CASE("metric emission writes one parseable line per round") {
  TempDir dir;
  std::vector<RoundRecord> records(3);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].round = i;
    records[i].accuracy = 0.5 + 0.1 * static_cast<double>(i);
    records[i].aggregation = "direct/total_samples";
    records[i].transport = "encrypted";
  }
  const std::string path = (dir.path / "m.jsonl").string();
  emit_metrics(records, path);

  std::istringstream in(slurp(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    json rec = json::parse(line);
    CHECK(rec.at("round") == n);
    CHECK(rec.at("aggregation") == "direct/total_samples");
    ++n;
  }
  CHECK(n == 3);
}
