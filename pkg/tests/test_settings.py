import pytest

from regionpool.domain.errors import ConfigurationError
from regionpool.domain.models import AdjustMethod, BivEvFamily, MaxStableFamily, StatisticKind
from regionpool.utils.settings import RunConfig, read_config_file, resolve_config


def test_defaults():
    cfg = resolve_config(environ={})
    assert cfg.method == "bh"
    assert cfg.alpha == 0.1
    assert cfg.B == 200
    assert cfg.bootstrap == "ms"
    assert cfg.ms_families == tuple(MaxStableFamily)


def test_precedence(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("REGIONPOOL_ALPHA=0.05\nB=99\nSEED=7\n")
    environ = {"REGIONPOOL_ALPHA": "0.2", "REGIONPOOL_B": "50", "REGIONPOOL_METHOD": "holm"}
    cfg = resolve_config({"seed": 3, "alpha": None}, config, environ)
    assert cfg.method == "holm"  # environment only
    assert cfg.B == 99  # file beats environment
    assert cfg.alpha == 0.05
    assert cfg.seed == 3  # flag beats file


def test_unknown_key(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("ALPHA=0.1\nBOGUS=1\n")
    with pytest.raises(ConfigurationError, match="BOGUS"):
        read_config_file(config)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        read_config_file(tmp_path / "nope.env")


@pytest.mark.parametrize("flags", [{"alpha": 0.0}, {"alpha": 1.5}, {"B": 0}, {"jobs": 0}, {"method": "bonferroni"},
                                   {"log_level": "chatty"}, {"ms_families": "smith,gaussian"}])
def test_invalid_values(flags):
    with pytest.raises(ConfigurationError):
        resolve_config(flags, environ={})


def test_comma_lists():
    cfg = resolve_config({"biv_families": "logistic, husler_reiss", "pool": "a,b"}, environ={})
    assert cfg.biv_families == (BivEvFamily.LOGISTIC, BivEvFamily.HUSLER_REISS)
    assert cfg.pool == ("a", "b")


def test_methods_and_bootstrap_config():
    cfg = RunConfig(method="ALL", statistic="ls", B=49, jobs=-1)
    assert cfg.methods() == [AdjustMethod.IM, AdjustMethod.HOLM, AdjustMethod.BH]
    assert cfg.primary_method() == AdjustMethod.BH
    boot = cfg.bootstrap_config()
    assert boot.B == 49
    assert boot.n_jobs == -1
    assert boot.statistic == StatisticKind.LS
    assert RunConfig(method="holm").methods() == [AdjustMethod.HOLM]


def test_replicate_count_from_any_source(tmp_path):
    assert resolve_config(environ={}).replicates_or(99) == 99
    assert resolve_config(environ={"REGIONPOOL_B": "50"}).replicates_or(99) == 50
    config = tmp_path / "run.env"
    config.write_text("REGIONPOOL_B=150\n")
    assert resolve_config(config_file=config, environ={}).replicates_or(99) == 150
    assert resolve_config({"B": 7}, config, environ={}).replicates_or(99) == 7
    # an explicit value equal to the default still counts as set
    assert resolve_config({"B": 200}, environ={}).replicates_or(99) == 200
