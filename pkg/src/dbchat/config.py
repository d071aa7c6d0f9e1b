"""Application configuration and the local-only network policy.

Config files are flat text with dotted keys (`kb.root = ./kb`). Environment
variables override file values with the prefix DBCHAT_ and double
underscores standing in for dots (DBCHAT_GATEWAY__BIND). With the offline
flag set, every outbound client in the package refuses non-loopback hosts.
"""

import ipaddress
import os
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlparse

from .errors import ConfigError, OfflineViolationError

ENV_PREFIX = "DBCHAT_"


@dataclass
class AppConfig:
    kb_root: Path = Path("./kb")
    db_root: Path = Path("./databases")
    default_model: str = "mock-echo"
    retrieval_k: int = 8
    prompt_j: int = 4
    window: int = 512
    overlap: int = 64
    snap_to_whitespace: bool = True
    mask_rules_path: Path | None = None
    encoder_weights_path: Path | None = None
    gateway_bind: str = "127.0.0.1:8686"
    mock_workers: bool = True
    offline: bool = True
    agent_step_budget: int = 8
    agent_masking: bool = True
    web_search_fixtures: Path | None = None
    web_search_live_url: str | None = None
    extras: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if self.window <= 0:
            raise ConfigError("ingest.window must be positive")
        if not 0 <= self.overlap < self.window:
            raise ConfigError("ingest.overlap must satisfy 0 <= overlap < ingest.window")
        if self.retrieval_k < 1:
            raise ConfigError("retrieval.k must be >= 1")
        if self.prompt_j < 1:
            raise ConfigError("prompt.j must be >= 1")
        if self.agent_step_budget < 1:
            raise ConfigError("agent.step_budget must be >= 1")
        if ":" not in self.gateway_bind:
            raise ConfigError("gateway.bind must be host:port")


_BOOL_VALUES = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}

_KEY_FIELDS = {
    "kb.root": ("kb_root", Path),
    "db.root": ("db_root", Path),
    "model.default": ("default_model", str),
    "retrieval.k": ("retrieval_k", int),
    "prompt.j": ("prompt_j", int),
    "ingest.window": ("window", int),
    "ingest.overlap": ("overlap", int),
    "ingest.snap": ("snap_to_whitespace", bool),
    "mask.rules": ("mask_rules_path", Path),
    "encoder.weights": ("encoder_weights_path", Path),
    "gateway.bind": ("gateway_bind", str),
    "gateway.mock_workers": ("mock_workers", bool),
    "offline": ("offline", bool),
    "agent.step_budget": ("agent_step_budget", int),
    "agent.masking": ("agent_masking", bool),
    "websearch.fixtures": ("web_search_fixtures", Path),
    "websearch.live_url": ("web_search_live_url", str),
}


def _coerce(key: str, raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() not in _BOOL_VALUES:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return _BOOL_VALUES[raw.lower()]
    if kind is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if kind is Path:
        return Path(raw)
    return raw


def parse_config_text(text: str, origin: str = "<config>") -> AppConfig:
    config = AppConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in _KEY_FIELDS:
            attr, kind = _KEY_FIELDS[key]
            setattr(config, attr, _coerce(key, raw, kind))
        else:
            config.extras[key] = raw.strip()
    return config


def apply_env_overrides(config: AppConfig, environ: dict[str, str] | None = None) -> AppConfig:
    env = environ if environ is not None else os.environ
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        if key in _KEY_FIELDS:
            attr, kind = _KEY_FIELDS[key]
            setattr(config, attr, _coerce(key, value, kind))
    return config


def load_config(path: str | Path | None = None, environ: dict[str, str] | None = None) -> AppConfig:
    if path is not None:
        config = parse_config_text(Path(path).read_text(encoding="utf-8"), origin=str(path))
    else:
        config = AppConfig()
    apply_env_overrides(config, environ)
    config.validate()
    return config


# --- offline network policy ---

def is_loopback_host(host: str | None) -> bool:
    if not host:
        return False
    if host == "localhost" or host.endswith(".localhost"):
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


def ensure_outbound_allowed(url: str, offline: bool) -> None:
    """Raise when an offline deployment would open a non-loopback connection."""
    if not offline:
        return
    host = urlparse(url if "//" in url else f"//{url}").hostname
    if not is_loopback_host(host):
        raise OfflineViolationError(
            f"offline mode: refusing outbound connection to {host or url!r}"
        )
