#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qfl/errors.hpp"
#include "qfl/experiment.hpp"

namespace {

void apply_overrides(qfl::ExperimentConfig& cfg, const CLI::Option* seed_opt,
                     std::uint64_t seed, const std::string& transport, bool fail_fast) {
  if (seed_opt->count() > 0) cfg.master_seed = seed;
  if (transport == "plaintext") cfg.transport = qfl::TransportMode::Plaintext;
  if (transport == "encrypted") cfg.transport = qfl::TransportMode::Encrypted;
  if (fail_fast) cfg.training.fail_fast = true;
}

void print_rounds(const qfl::TrainingResult& result) {
  for (const qfl::RoundRecord& rec : result.records) {
    std::printf("round %zu: accuracy=%.4f loss=%.4f", rec.round, rec.accuracy, rec.loss);
    std::size_t aborts = 0;
    for (const auto& c : rec.clients) aborts += c.aborted ? 1 : 0;
    if (aborts > 0) std::printf(" aborted_clients=%zu", aborts);
    if (rec.round_failed) std::printf(" ROUND FAILED");
    std::printf("\n");
  }
}

int run_command(const std::string& config_path, const CLI::Option* seed_opt, std::uint64_t seed,
                const std::string& transport, const std::string& out_dir, bool fail_fast) {
  qfl::ExperimentConfig cfg = config_path.empty() ? qfl::ExperimentConfig{}
                                                  : qfl::parse_config_file(config_path);
  apply_overrides(cfg, seed_opt, seed, transport, fail_fast);

  qfl::ExperimentOutcome outcome = qfl::run_experiment(cfg, out_dir);
  print_rounds(outcome.training);
  const auto& records = outcome.training.records;
  std::printf("final: accuracy=%.4f loss=%.4f rounds=%zu transport=%s\n",
              records.empty() ? 0.0 : records.back().accuracy,
              records.empty() ? 0.0 : records.back().loss, records.size(),
              qfl::transport_mode_name(cfg.transport));
  if (outcome.training.security_abort) {
    std::fprintf(stderr, "security aborts occurred during the run (see %s)\n",
                 outcome.summary_path.c_str());
  }
  std::printf("wrote %s, %s, %s\n", outcome.metrics_path.c_str(), outcome.summary_path.c_str(),
              outcome.weights_path.c_str());
  return outcome.exit_code;
}

int compare_command(const std::string& config_path, const CLI::Option* seed_opt,
                    std::uint64_t seed, const std::string& out_dir, bool fail_fast) {
  qfl::ExperimentConfig cfg = config_path.empty() ? qfl::ExperimentConfig{}
                                                  : qfl::parse_config_file(config_path);
  apply_overrides(cfg, seed_opt, seed, "", fail_fast);

  qfl::ComparisonOutcome outcome = qfl::compare_baseline_encrypted(cfg, out_dir);
  std::printf("%s", outcome.table.c_str());
  if (outcome.accuracy_parity && outcome.loss_parity && outcome.weights_identical) {
    std::printf("parity: encrypted and plaintext runs match bitwise in every round\n");
  } else {
    std::fprintf(stderr,
                 "*** PARITY VIOLATION: encrypted and plaintext runs diverge "
                 "(accuracy=%s loss=%s weights=%s) ***\n",
                 outcome.accuracy_parity ? "ok" : "differs",
                 outcome.loss_parity ? "ok" : "differs",
                 outcome.weights_identical ? "ok" : "differ");
  }
  std::printf("wrote %s\n", outcome.report_path.c_str());
  return outcome.exit_code;
}

int probe_command(std::vector<double> gammas, std::vector<double> lengths,
                  std::vector<double> eve_rates, std::size_t qubits, std::uint64_t seed,
                  const std::string& out_path) {
  if (gammas.empty()) gammas = {0.05};
  if (lengths.empty()) lengths = {10.0};
  if (eve_rates.empty()) eve_rates = {0.0};
  qfl::QkdPolicy policy;
  std::vector<nlohmann::ordered_json> records =
      qfl::probe_qkd(gammas, lengths, eve_rates, qubits, policy, seed);

  std::string content;
  for (const auto& rec : records) {
    content += rec.dump();
    content += '\n';
  }
  if (out_path.empty()) {
    std::fputs(content.c_str(), stdout);
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw qfl::IoError("cannot open '" + out_path + "' for writing");
    out << content;
    std::printf("wrote %zu probe records to %s\n", records.size(), out_path.c_str());
  }
  return qfl::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated CNN training with quantum-key-protected weight exchange"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string transport;
  std::uint64_t seed = 0;
  bool fail_fast = false;

  CLI::App* run = app.add_subcommand("run", "Run one federated training experiment");
  run->add_option("--config", config_path, "JSON experiment config file");
  CLI::Option* run_seed = run->add_option("--seed", seed, "Override the master seed");
  run->add_option("--transport", transport, "Weight transport mode")
      ->check(CLI::IsMember({"plaintext", "encrypted"}));
  run->add_option("--out", out_dir, "Output directory")->capture_default_str();
  run->add_flag("--fail-fast", fail_fast, "Stop the run at the first security abort");

  CLI::App* compare = app.add_subcommand(
      "compare", "Run plaintext baseline and encrypted pipeline with identical seeds");
  compare->add_option("--config", config_path, "JSON experiment config file");
  CLI::Option* compare_seed = compare->add_option("--seed", seed, "Override the master seed");
  compare->add_option("--out", out_dir, "Output directory")->capture_default_str();
  compare->add_flag("--fail-fast", fail_fast, "Stop the runs at the first security abort");

  std::vector<double> gammas;
  std::vector<double> lengths;
  std::vector<double> eve_rates;
  std::size_t qubits = 4096;
  std::string probe_out;

  CLI::App* probe = app.add_subcommand("qkd-probe", "Sweep key-exchange channel parameters");
  probe->add_option("--gamma", gammas, "Attenuation coefficients to sweep");
  probe->add_option("--length-km", lengths, "Channel lengths (km) to sweep");
  probe->add_option("--eve-rate", eve_rates, "Interception rates to sweep");
  probe->add_option("--qubits", qubits, "Qubits per session")->capture_default_str();
  CLI::Option* probe_seed = probe->add_option("--seed", seed, "Probe seed");
  probe->add_option("--out", probe_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? qfl::kExitOk : qfl::kExitConfig;
  }

  try {
    if (app.got_subcommand(run)) {
      return run_command(config_path, run_seed, seed, transport, out_dir, fail_fast);
    }
    if (app.got_subcommand(compare)) {
      return compare_command(config_path, compare_seed, seed, out_dir, fail_fast);
    }
    return probe_command(gammas, lengths, eve_rates, qubits,
                         probe_seed->count() > 0 ? seed : 1234, probe_out);
  } catch (const qfl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return qfl::kExitConfig;
  } catch (const qfl::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return qfl::kExitIo;
  } catch (const qfl::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
}
