import logging
from fractions import Fraction

import pytest

from taintledger.errors import ConfigError
from taintledger.utils.config import load_config, parse_fraction
from taintledger.utils.logger import set_global_log_level, setup_logger

ENV_KEYS = [
    "TAINTLEDGER_STORE",
    "TAINTLEDGER_RPC_URL",
    "TAINTLEDGER_ZERO_ON_DELIST",
    "TAINTLEDGER_PROGRESS_EVERY",
    "TAINTLEDGER_THRESHOLD",
    "TAINTLEDGER_SUPER_ACCOUNT_FLOOR",
    "TAINTLEDGER_LOG_LEVEL",
]


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for key in ENV_KEYS:
        # register the key so values loaded from .env are undone after the test
        monkeypatch.setenv(key, "")
        monkeypatch.delenv(key)
    return monkeypatch


@pytest.mark.parametrize(
    "raw, expected",
    [("0.05", Fraction(1, 20)), ("5%", Fraction(1, 20)), ("1/20", Fraction(1, 20)), (1, Fraction(1)),
     (Fraction(3, 7), Fraction(3, 7))],
)
def test_parse_fraction(raw, expected):
    assert parse_fraction(raw) == expected


@pytest.mark.parametrize("raw", ["five", "1/0", ""])
def test_parse_fraction_rejects_garbage(raw):
    with pytest.raises(ConfigError):
        parse_fraction(raw, "threshold")


def test_defaults(clean_env):
    config = load_config()
    assert config["store"] == {"path": "./taintledger-db", "rpc_url": None}
    assert config["ledger"] == {"zero_on_delist": False, "progress_every": 1000}
    assert config["tracking"] == {"threshold": Fraction(1, 20), "super_account_tx_floor": 1000}
    assert config["log_level"] == "INFO"


def test_environment_and_dotenv(clean_env, tmp_path):
    (tmp_path / ".env").write_text("TAINTLEDGER_ZERO_ON_DELIST=yes\nTAINTLEDGER_THRESHOLD=1/100\n")
    clean_env.setenv("TAINTLEDGER_SUPER_ACCOUNT_FLOOR", "25")
    config = load_config()
    assert config["ledger"]["zero_on_delist"] is True
    assert config["tracking"] == {"threshold": Fraction(1, 100), "super_account_tx_floor": 25}


def test_bad_integers_are_config_errors(clean_env):
    clean_env.setenv("TAINTLEDGER_PROGRESS_EVERY", "often")
    with pytest.raises(ConfigError):
        load_config()


def test_logger_is_configured_once():
    first = setup_logger("taintledger.tests.logger")
    second = setup_logger("taintledger.tests.logger")
    assert first is second
    assert len(first.handlers) == 1
    assert first.propagate is False
    try:
        set_global_log_level("debug")
        assert first.level == logging.DEBUG
    finally:
        set_global_log_level("INFO")
    assert first.level == logging.INFO
