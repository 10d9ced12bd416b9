import os
from dataclasses import dataclass, field, replace
from datetime import timedelta
from pathlib import Path
from typing import Any, Dict, Optional

from src.errors import CliError

DEFAULT_DATA_DIR = Path(".tips")


@dataclass(frozen=True)
class TipsConfig:
    """
    Runtime settings shared by the ledger, contract, exchange and bench layers.
    Values can be overridden from the environment (see from_env).
    """
    data_dir: Path = DEFAULT_DATA_DIR
    orderer_batch_size: int = 10
    orderer_batch_timeout: float = 0.05      # seconds
    offchain_threshold: int = 1024           # payloads of this size or larger leave the chain
    world_state_inline_limit: int = 4096     # state values encoding to this size or more are kept as digests only
    max_plaintext: int = 16 * 1024 * 1024
    attestation_freshness: timedelta = timedelta(seconds=300)
    certificate_validity: timedelta = timedelta(days=365)
    peers_per_org: int = 2
    log_level: str = "WARNING"
    access_policies: Dict[str, Any] = field(default_factory=lambda: {"*": ["*"]})

    # Environment variable -> (field, parser)
    ENV_VARS = {
        "TIPS_DATA_DIR": ("data_dir", Path),
        "TIPS_LOG_LEVEL": ("log_level", str),
        "TIPS_BATCH_SIZE": ("orderer_batch_size", int),
        "TIPS_BATCH_TIMEOUT": ("orderer_batch_timeout", float),
        "TIPS_OFFCHAIN_THRESHOLD": ("offchain_threshold", int),
    }

    def __post_init__(self):
        if self.orderer_batch_size < 1:
            raise ValueError("orderer_batch_size must be at least 1")
        if self.orderer_batch_timeout <= 0:
            raise ValueError("orderer_batch_timeout must be positive")
        if self.offchain_threshold < 0:
            raise ValueError("offchain_threshold must be non-negative")

    @classmethod
    def from_env(cls, environ: Optional[Dict[str, str]] = None, **overrides) -> 'TipsConfig':
        """Build a config from explicit overrides, then let the environment win"""
        environ = os.environ if environ is None else environ
        values = {key: value for key, value in overrides.items() if value is not None}
        for variable, (name, parser) in cls.ENV_VARS.items():
            raw = environ.get(variable)
            if raw:
                try:
                    values[name] = parser(raw)
                except ValueError:
                    raise CliError("INVALID_CONFIG", f"{variable}={raw!r} is not a valid {parser.__name__}") from None
        try:
            return cls(**values)
        except ValueError as e:
            raise CliError("INVALID_CONFIG", str(e)) from None

    def with_overrides(self, **overrides) -> 'TipsConfig':
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


OUTPUT_FORMATS = ("human", "json")


@dataclass
class CliConfig:
    """Per-data-dir CLI settings, persisted as cli.json"""
    data_dir: Path = DEFAULT_DATA_DIR
    active_identity: Optional[int] = None
    default_channel: Optional[str] = None
    output_format: str = "human"

    def __post_init__(self):
        if self.output_format not in OUTPUT_FORMATS:
            raise ValueError(f"output_format must be one of {', '.join(OUTPUT_FORMATS)}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'active_identity': self.active_identity,
            'default_channel': self.default_channel,
            'output_format': self.output_format,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], data_dir: Path = DEFAULT_DATA_DIR) -> 'CliConfig':
        active = data.get('active_identity')
        return cls(
            data_dir=Path(data_dir),
            active_identity=int(active) if active is not None else None,
            default_channel=data.get('default_channel'),
            output_format=data.get('output_format', 'human'),
        )
