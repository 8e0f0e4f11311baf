"""Smoke tests for the qflsim Python package."""

import math

import pytest

import qflsim


def test_success_probability_closed_form():
    assert qflsim.success_probability(0.1, 10.0) == pytest.approx(
        1.0 - math.exp(-1.0), abs=1e-12
    )
    assert qflsim.success_probability(0.2, 0.0) == 0.0


def test_clean_session_yields_a_key():
    session = qflsim.run_bb84(n_qubits=4096, gamma=0.0, length_km=0.0, seed=5)
    assert session["qber"] == 0.0
    assert not session["aborted"]
    assert session["key_bits"] >= 256
    assert session["received"] == 4096


def test_intercepted_session_aborts():
    session = qflsim.run_bb84(n_qubits=8192, gamma=0.0, length_km=0.0,
                              eve_rate=1.0, seed=5)
    assert session["aborted"]
    assert 0.18 < session["qber"] < 0.32


def test_probe_covers_the_grid():
    records = qflsim.probe_qkd([0.05, 0.1], [10.0], [0.0], n_qubits=2048, seed=3)
    assert len(records) == 2
    assert records[0]["gamma"] == 0.05
    assert records[1]["gamma"] == 0.1


def test_config_validation():
    echo = qflsim.validate_config({"num_clients": 3})
    assert echo["num_clients"] == 3
    assert echo["training"]["rounds"] == 10

    with pytest.raises(qflsim.ConfigError):
        qflsim.validate_config({"num_clients": 0})
    with pytest.raises(qflsim.ConfigError):
        qflsim.validate_config({"not_a_field": 1})


TINY = {
    "data": {"samples_per_class": 30, "image_size": [10, 10]},
    "training": {"rounds": 2},
}


def test_run_experiment(tmp_path):
    outcome = qflsim.run_experiment(TINY, tmp_path / "run")
    assert outcome["exit_code"] == 0
    assert outcome["rounds_completed"] == 2
    assert not outcome["security_abort"]
    assert (tmp_path / "run" / "metrics.jsonl").is_file()


def test_compare_confirms_parity(tmp_path):
    outcome = qflsim.compare(TINY, tmp_path / "cmp")
    assert outcome["exit_code"] == 0
    assert outcome["accuracy_parity"]
    assert outcome["loss_parity"]
    assert outcome["weights_identical"]
    assert "Accuracy" in outcome["table"]
