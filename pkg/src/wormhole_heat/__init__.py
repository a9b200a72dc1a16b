"""Wormhole propagation with heat transmission on a staggered grid."""

from .env import ensure_dotenv
from .logging_utils import configure_logging

configure_logging()
ensure_dotenv()

__version__ = "0.1.0"

__all__ = ["__version__", "ensure_dotenv", "configure_logging"]
