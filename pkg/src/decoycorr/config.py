"""Flat ``key = value`` configuration files and run manifests.

Keys are the field names of :class:`ProtocolConfig`, :class:`ChannelParams`
and :class:`SecurityParams`, plus ``n_rounds`` for finite-size rates. Lines
starting with ``#`` (and trailing ``# ...`` comments) are ignored.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional

from .errors import ConfigError
from .keyrate import LOG_BASE, SecurityParams
from .model import ChannelParams, ProtocolConfig

_NONE = ("none", "null", "")


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


_GROUPS = {
    "protocol": ProtocolConfig,
    "channel": ChannelParams,
    "security": SecurityParams,
}
_INT_KEYS = {"xi", "n_cut"}
_STR_KEYS = {"constraint_mode", "correlation_model"}
_OPTIONAL_KEYS = {"e_tol", "n_rounds"}


def known_keys():
    keys = ["n_rounds"]
    for cls in _GROUPS.values():
        keys += list(_fields(cls))
    return keys


@dataclass(frozen=True)
class RunConfig:
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    security: SecurityParams = field(default_factory=SecurityParams)
    n_rounds: Optional[float] = None

    def as_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {}
        for group in ("protocol", "channel", "security"):
            out.update(dataclasses.asdict(getattr(self, group)))
        out["n_rounds"] = self.n_rounds
        return out


def _convert(key, raw):
    text = raw.strip()
    if key in _OPTIONAL_KEYS and text.lower() in _NONE:
        return None
    if key in _STR_KEYS:
        return text
    try:
        if key in _INT_KEYS:
            value = float(text)
            if value != int(value):
                raise ValueError
            return int(value)
        return float(text)
    except ValueError:
        raise ConfigError(f"invalid value for '{key}': {raw!r}") from None


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """Raw ``key -> value`` strings from config lines; later keys override earlier ones."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def build_config(pairs: Dict[str, str]) -> RunConfig:
    """Validate keys and values and construct the configuration records."""
    unknown = sorted(set(pairs) - set(known_keys()))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    values = {k: _convert(k, v) for k, v in pairs.items()}
    parts = {}
    for group, cls in _GROUPS.items():
        kwargs = {k: values[k] for k in _fields(cls) if k in values}
        parts[group] = cls(**kwargs)
    n_rounds = values.get("n_rounds")
    if n_rounds is not None and n_rounds < 1:
        raise ConfigError(f"n_rounds must be >= 1 (got {n_rounds})")
    return RunConfig(n_rounds=n_rounds, **parts)


def load_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    """Read a config file (optional) and apply ``key=value`` overrides."""
    pairs: Dict[str, str] = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        pairs.update(parse_pairs(text.splitlines(), str(p)))
    pairs.update(parse_pairs(overrides, "--set"))
    return build_config(pairs)


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Config text that re-parses to ``cfg``."""
    lines = []
    for group in ("protocol", "channel", "security"):
        lines.append(f"# {group}")
        for key, value in dataclasses.asdict(getattr(cfg, group)).items():
            lines.append(f"{key} = {_format(value)}")
    lines.append("# finite size")
    lines.append(f"n_rounds = {_format(cfg.n_rounds)}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RunManifest:
    """Resolved configuration and provenance written next to each output."""

    config: Dict[str, object]
    version: str
    timestamp: str
    command: str
    seeds: tuple = ()
    log_base: int = LOG_BASE
    p_mu_limit: bool = True
    extra: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: RunConfig, command: str, seeds=(), **extra) -> "RunManifest":
        from . import __version__

        protocol = cfg.protocol
        return cls(
            config=cfg.as_dict(),
            version=__version__,
            timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            command=command,
            seeds=tuple(seeds),
            p_mu_limit=protocol.p_mu == 1.0 and protocol.q_z == 1.0,
            extra=extra,
        )

    def to_json(self) -> str:
        data = dataclasses.asdict(self)
        data["seeds"] = list(self.seeds)
        return json.dumps(data, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        data["seeds"] = tuple(data.get("seeds", ()))
        return cls(**data)

    def run_config(self) -> RunConfig:
        pairs = {k: _format(v) for k, v in self.config.items()}
        return build_config(pairs)

    def write(self, path) -> Path:
        p = Path(path)
        p.write_text(self.to_json() + "\n")
        return p
