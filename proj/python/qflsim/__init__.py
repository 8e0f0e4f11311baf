"""Federated CNN training with quantum-key-protected weight exchange.

Thin convenience layer over the compiled core: JSON strings crossing the
C++ boundary are decoded into plain dicts here.
"""

import json as _json

from ._core import (  # noqa: F401
    ConfigError,
    IoError,
    TamperError,
    success_probability,
)
from . import _core

__all__ = [
    "ConfigError",
    "IoError",
    "TamperError",
    "success_probability",
    "run_bb84",
    "probe_qkd",
    "validate_config",
    "run_experiment",
    "compare",
]


def run_bb84(n_qubits=4096, gamma=0.05, length_km=10.0, eve_rate=0.0,
             noise_flip_prob=0.0, seed=1234, session_id=0):
    """Simulate one key-exchange session and return its statistics."""
    return _json.loads(_core.run_bb84_json(
        n_qubits, gamma, length_km, eve_rate, noise_flip_prob, seed, session_id))


def probe_qkd(gammas, lengths_km, eve_rates, n_qubits=4096, seed=1234):
    """Sweep the channel parameter grid; one record per combination."""
    return _json.loads(_core.probe_qkd_json(
        list(gammas), list(lengths_km), list(eve_rates), n_qubits, seed))


def validate_config(config):
    """Validate an experiment config (dict or JSON text); return the canonical form."""
    text = config if isinstance(config, str) else _json.dumps(config)
    return _json.loads(_core.validate_config_json(text))


def run_experiment(config, out_dir):
    """Run one federated training experiment; artifacts land under out_dir."""
    text = config if isinstance(config, str) else _json.dumps(config)
    return _json.loads(_core.run_experiment_json(text, str(out_dir)))


def compare(config, out_dir):
    """Run plaintext and encrypted pipelines on identical seeds and check parity."""
    text = config if isinstance(config, str) else _json.dumps(config)
    return _json.loads(_core.compare_json(text, str(out_dir)))
