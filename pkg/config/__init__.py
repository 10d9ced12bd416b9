from .tips_config import CliConfig, TipsConfig, DEFAULT_DATA_DIR
from .logging_config import configure_logging

__all__ = ["CliConfig", "TipsConfig", "DEFAULT_DATA_DIR", "configure_logging"]
