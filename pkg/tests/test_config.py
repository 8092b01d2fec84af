import pytest

from msexit.config import SEED_ENV, ExperimentConfig
from msexit.errors import ConfigurationError

BASE = {"kind": "fluctuation", "epsilons": [0.1, 0.05], "n_paths": 100, "seed": 7,
        "coefficients": {"b": 0.0, "c": 1.0, "sigma": 1.0}}


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert ExperimentConfig.from_dict(BASE).master_seed == 7
    monkeypatch.setenv(SEED_ENV, "11")
    assert ExperimentConfig.from_dict(BASE).master_seed == 11
    assert ExperimentConfig.from_dict(BASE, seed_override=13).master_seed == 13
    assert ExperimentConfig.from_dict(BASE, use_env=False).master_seed == 7


@pytest.mark.parametrize("seed", [-1, 2**64, "x"])
def test_bad_seeds(seed):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(dict(BASE, seed=seed), use_env=False)


@pytest.mark.parametrize("patch", [
    {"epsilons": [0.05, 0.1]}, {"epsilons": [0.1, 0.1]}, {"epsilons": []},
    {"epsilons": [1.5]}, {"n_paths": 99}, {"kind": "nonsense"},
])
def test_rejected_documents(patch):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(dict(BASE, **patch), use_env=False)


def test_hash_ignores_seed_only():
    a = ExperimentConfig.from_dict(BASE, use_env=False)
    b = ExperimentConfig.from_dict(dict(BASE, seed=8), use_env=False)
    c = ExperimentConfig.from_dict(dict(BASE, n_paths=101), use_env=False)
    assert a.config_hash == b.config_hash != c.config_hash


def test_dt_policies():
    cfg = ExperimentConfig.from_dict(dict(BASE, dt={"resolution_factor": 0.1}), use_env=False)
    assert cfg.dt_for(0.1, 0.01, True) == pytest.approx(1e-4)
    with pytest.raises(ConfigurationError):
        cfg.dt_for(0.1, 0.01, False)
    cfg = ExperimentConfig.from_dict(dict(BASE, dt={"dt": 0.0}), use_env=False)
    with pytest.raises(ConfigurationError):
        cfg.dt_for(0.1, 0.01, True)


def test_missing_blocks():
    cfg = ExperimentConfig.from_dict(BASE, use_env=False)
    for getter in (cfg.x_grid, cfg.rough, cfg.exit_spec):
        with pytest.raises(ConfigurationError):
            getter()
