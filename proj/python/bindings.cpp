// Python bindings for the federated-learning simulator. The heavy lifting
// stays in the C++ core; results cross the boundary as JSON strings that
// the package wrapper turns into plain dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "qfl/errors.hpp"
#include "qfl/experiment.hpp"
#include "qfl/qkd.hpp"

namespace py = pybind11;

namespace {

std::string run_bb84_json(std::size_t n_qubits, double gamma, double length_km,
                          double eve_rate, double noise_flip_prob, std::uint64_t seed,
                          std::uint64_t session_id) {
  qfl::QuantumChannelConfig channel;
  channel.gamma = gamma;
  channel.length_km = length_km;
  channel.eve_rate = eve_rate;
  channel.noise_flip_prob = noise_flip_prob;
  qfl::QkdPolicy policy;
  qfl::QkdSessionResult result = qfl::run_bb84(n_qubits, channel, policy, seed, session_id);
  return qfl::session_to_json(result, channel).dump();
}

std::string probe_qkd_json(const std::vector<double>& gammas,
                           const std::vector<double>& lengths_km,
                           const std::vector<double>& eve_rates, std::size_t n_qubits,
                           std::uint64_t seed) {
  qfl::QkdPolicy policy;
  auto records = qfl::probe_qkd(gammas, lengths_km, eve_rates, n_qubits, policy, seed);
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (auto& rec : records) arr.push_back(std::move(rec));
  return arr.dump();
}

std::string validate_config_json(const std::string& text) {
  return qfl::config_to_json(qfl::parse_config(text)).dump();
}

std::string run_experiment_json(const std::string& config_text, const std::string& out_dir) {
  qfl::ExperimentConfig cfg = qfl::parse_config(config_text);
  qfl::ExperimentOutcome outcome = qfl::run_experiment(cfg, out_dir);
  nlohmann::ordered_json j;
  j["exit_code"] = outcome.exit_code;
  j["rounds_completed"] = outcome.training.records.size();
  if (!outcome.training.records.empty()) {
    j["final_accuracy"] = outcome.training.records.back().accuracy;
    j["final_loss"] = outcome.training.records.back().loss;
  }
  j["security_abort"] = outcome.training.security_abort;
  j["stopped_early"] = outcome.training.stopped_early;
  j["metrics_path"] = outcome.metrics_path;
  j["summary_path"] = outcome.summary_path;
  j["weights_path"] = outcome.weights_path;
  return j.dump();
}

std::string compare_json(const std::string& config_text, const std::string& out_dir) {
  qfl::ExperimentConfig cfg = qfl::parse_config(config_text);
  qfl::ComparisonOutcome outcome = qfl::compare_baseline_encrypted(cfg, out_dir);
  nlohmann::ordered_json j;
  j["exit_code"] = outcome.exit_code;
  j["accuracy_parity"] = outcome.accuracy_parity;
  j["loss_parity"] = outcome.loss_parity;
  j["weights_identical"] = outcome.weights_identical;
  j["table"] = outcome.table;
  j["report_path"] = outcome.report_path;
  return j.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated CNN training with quantum-key-protected weight exchange";

  py::register_exception<qfl::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<qfl::IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<qfl::TamperError>(m, "TamperError", PyExc_RuntimeError);

  m.def("success_probability", &qfl::qkd_success_probability, py::arg("gamma"),
        py::arg("length_km"),
        "Per-session channel success metric 1 - exp(-gamma * length_km).");

  m.def("run_bb84_json", &run_bb84_json, py::arg("n_qubits") = 4096,
        py::arg("gamma") = 0.05, py::arg("length_km") = 10.0, py::arg("eve_rate") = 0.0,
        py::arg("noise_flip_prob") = 0.0, py::arg("seed") = 1234,
        py::arg("session_id") = 0,
        "Simulate one key-exchange session; returns a JSON record.");

  m.def("probe_qkd_json", &probe_qkd_json, py::arg("gammas"), py::arg("lengths_km"),
        py::arg("eve_rates"), py::arg("n_qubits") = 4096, py::arg("seed") = 1234,
        "Sweep the channel parameter grid; returns a JSON array.");

  m.def("validate_config_json", &validate_config_json, py::arg("text"),
        "Parse and validate an experiment config; returns the canonical echo.");

  m.def("run_experiment_json", &run_experiment_json, py::arg("config_text"),
        py::arg("out_dir"),
        "Run one federated training experiment; returns a JSON summary.");

  m.def("compare_json", &compare_json, py::arg("config_text"), py::arg("out_dir"),
        "Run the plaintext baseline and the encrypted pipeline and check parity.");
}
