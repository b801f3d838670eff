"""Runtime configuration for invstab."""

import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

from .errors import ConfigError

load_dotenv()

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {raw!r}") from None


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None


@dataclass
class InvstabConfig:
    """Defaults shared by the CLI and the analysis pipeline."""

    # Output
    out_dir: str = "out"

    # Time-domain defaults
    dt: float = 20e-6
    record_decimation: int = 10
    pre_roll: float = 5.0

    # Controller delay defaults
    delay_kind: str = "none"
    delay_td: float = 150e-6

    # Batch settings
    workers: int = 4

    log_level: str = "INFO"

    @classmethod
    def from_env(cls) -> "InvstabConfig":
        """Load configuration from environment variables."""
        delay_kind = os.getenv("INVSTAB_DELAY", "none").strip().lower()
        if delay_kind not in ("none", "pade"):
            raise ConfigError(f"INVSTAB_DELAY must be 'none' or 'pade', got {delay_kind!r}")

        workers = _env_int("INVSTAB_WORKERS", 4)
        if workers < 1:
            raise ConfigError("INVSTAB_WORKERS must be at least 1")

        log_level = os.getenv("INVSTAB_LOG_LEVEL", "INFO").strip().upper()
        if log_level not in LOG_LEVELS:
            raise ConfigError(f"INVSTAB_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {log_level!r}")

        return cls(
            out_dir=os.getenv("INVSTAB_OUT", "out"),
            dt=_env_float("INVSTAB_DT", 20e-6),
            record_decimation=_env_int("INVSTAB_DECIMATION", 10),
            pre_roll=_env_float("INVSTAB_PRE_ROLL", 5.0),
            delay_kind=delay_kind,
            delay_td=_env_float("INVSTAB_DELAY_TD", 150e-6),
            workers=workers,
            log_level=log_level,
        )


def get_config(overrides: Optional[dict] = None) -> InvstabConfig:
    """Get the current configuration, optionally with field overrides."""
    config = InvstabConfig.from_env()
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(config, key, value)
    return config
