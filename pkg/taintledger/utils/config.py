import os
from fractions import Fraction
from typing import Any

from dotenv import load_dotenv

from taintledger.errors import ConfigError


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in {"1", "true", "yes", "on"}


def parse_fraction(raw: str | float | int | Fraction, field: str = "value") -> Fraction:
    """Parse a rational from text such as '0.05', '5%' or '1/20'."""
    if isinstance(raw, Fraction):
        return raw
    text = str(raw).strip()
    try:
        if text.endswith("%"):
            return Fraction(text[:-1]) / 100
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"{field}: cannot parse {raw!r} as a rational number") from e


def load_config() -> dict[str, Any]:
    """Load configuration from environment variables."""
    load_dotenv()
    try:
        floor = int(os.getenv("TAINTLEDGER_SUPER_ACCOUNT_FLOOR", "1000"))
        progress_every = int(os.getenv("TAINTLEDGER_PROGRESS_EVERY", "1000"))
    except ValueError as e:
        raise ConfigError(f"invalid integer in environment: {e}") from e
    return {
        "store": {
            "path": os.getenv("TAINTLEDGER_STORE", "./taintledger-db"),
            "rpc_url": os.getenv("TAINTLEDGER_RPC_URL"),
        },
        "ledger": {
            "zero_on_delist": _env_bool("TAINTLEDGER_ZERO_ON_DELIST", False),
            "progress_every": progress_every,
        },
        "tracking": {
            "threshold": parse_fraction(os.getenv("TAINTLEDGER_THRESHOLD", "0.05"), "TAINTLEDGER_THRESHOLD"),
            "super_account_tx_floor": floor,
        },
        "log_level": os.getenv("TAINTLEDGER_LOG_LEVEL", "INFO"),
    }
