"""
Configuration for kernforge

Defaults can be overridden from the environment (or a .env file) and then
from command-line flags.
"""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

DEFAULT_VOCAB_SIZE = 3000
DEFAULT_MAX_LENGTH = 2048


def _env_int(name: str, default: int, minimum: int = 1) -> int:
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return default
    try:
        number = int(value)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {value!r}") from None
    if number < minimum:
        raise ValueError(f"{name} must be at least {minimum}, got {number}")
    return number


@dataclass
class Config:
    vocab_size: int = DEFAULT_VOCAB_SIZE
    max_length: int = DEFAULT_MAX_LENGTH
    workers: int = 1
    vocab_path: str | None = None
    host: str = "0.0.0.0"
    port: int = 5173
    log_level: str = "INFO"

    @classmethod
    def from_env(cls) -> "Config":
        load_dotenv()
        return cls(
            vocab_size=_env_int("KERNFORGE_VOCAB_SIZE", DEFAULT_VOCAB_SIZE),
            max_length=_env_int("KERNFORGE_MAX_LENGTH", DEFAULT_MAX_LENGTH),
            workers=_env_int("KERNFORGE_WORKERS", 1),
            vocab_path=os.getenv("KERNFORGE_VOCAB") or None,
            host=os.getenv("KERNFORGE_HOST", "0.0.0.0"),
            port=_env_int("KERNFORGE_PORT", 5173),
            log_level=os.getenv("KERNFORGE_LOG_LEVEL", "INFO").upper(),
        )
