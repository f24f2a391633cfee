import logging

import pytest
import yaml

from mppsynth.config import ConfigError, RunConfig
from mppsynth.mcmc import ChainSettings


def write(tmp_path, d):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(d))
    return p


def test_defaults():
    cfg = RunConfig()
    assert cfg.n_star == 72 and cfg.L == 100 and cfg.chain.n_iter == 6000
    assert cfg.thresholds.eps_s == 0.02 and cfg.thresholds.eps_a == 5.0


def test_desk_config_loads():
    cfg = RunConfig.load("configs/desk.yaml")
    assert cfg.n_star == 32 and cfg.L == 50 and cfg.schema.K == 4
    assert cfg.mark_config().family == "truncated-poisson"
    assert [a.name for a in cfg.analyses] == ["age_poisson", "combo_logit"]
    assert cfg.resolve(cfg.data_path).parent.name == "configs"


def test_retained_below_L_rejected(tmp_path):
    with pytest.raises(ConfigError, match="retained"):
        RunConfig.load(write(tmp_path, {"mcmc": {"retained": 10}, "synthesis": {"L": 20}}))
    with pytest.raises(ConfigError):
        RunConfig(chain=ChainSettings(n_retained=5), L=6)


def test_L_defaults_to_retained(tmp_path):
    assert RunConfig.load(write(tmp_path, {"mcmc": {"retained": 30}})).L == 30


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"knots": {"n_grid": 0}},
    {"kernel": {"family": "gaussian"}},
    {"marks": {"family": "gamma"}},
    {"evaluation": {"eps_s": -1}},
    {"mcmc": {"thinning": 3}},
    {"data": ["x"]},
])
def test_invalid(tmp_path, bad):
    with pytest.raises(ConfigError):
        RunConfig.load(write(tmp_path, bad))


def test_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "nope.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        RunConfig.load(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_alpha(tmp_path):
    cfg = RunConfig.load(write(tmp_path, {"categorical": {"alpha": [1, 2]}}))
    assert cfg.alpha_prior(2) == [1, 2]
    with pytest.raises(ConfigError):
        cfg.alpha_prior(3)


def test_count_warnings(caplog):
    cfg = RunConfig(n_grid_knots=64, n_pp_knots=64)
    with caplog.at_level(logging.WARNING):
        msgs = cfg.check_counts([500, 100])
    assert len(msgs) == 2 and "128" in caplog.text
    assert RunConfig(n_grid_knots=16, n_pp_knots=16).check_counts([500, 100]) == []


def test_to_dict_is_plain(tmp_path):
    d = RunConfig.load("configs/desk.yaml").to_dict()
    yaml.safe_dump(d)
    assert d["knots"]["n_grid"] == 16 and d["marks"]["family"] == "truncated-poisson"
