"""Run configuration: flat ``section.key = value`` text with full default echoing."""
from __future__ import annotations

import dataclasses
import hashlib
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, HeraldSimError
from .ionphysics import IonParams
from .sequence import SequenceParams
from .source import DetectorParams, SourceParams
from .timetag import centered_grid, check_grid


@dataclass(frozen=True)
class CorrelationParams:
    bin_width_ps: int = 50_000
    t_min_ps: int = -2_525_000
    t_max_ps: int = 2_525_000
    # fine grid for the peak-shape histogram
    fine_bin_width_ps: int = 3_000
    fine_half_range_ps: int = 150_000

    def __post_init__(self):
        check_grid(self.bin_width_ps, self.t_min_ps, self.t_max_ps)
        centered_grid(self.fine_bin_width_ps, self.fine_half_range_ps)

    @property
    def fine_grid(self) -> tuple[int, int]:
        return centered_grid(self.fine_bin_width_ps, self.fine_half_range_ps)


@dataclass(frozen=True)
class RunConfig:
    source: SourceParams = field(default_factory=SourceParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    ion: IonParams = field(default_factory=IonParams)
    sequence: SequenceParams = field(default_factory=SequenceParams)
    correlation: CorrelationParams = field(default_factory=CorrelationParams)
    seed: int = 1
    output_dir: str = "heraldsim_out"

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"sequence.run_duration": 10})``."""
        flat = self.flat()
        for k, v in changes.items():
            if k not in flat:
                raise ConfigError(f"unknown key {k!r}")
            flat[k] = v
        return from_flat(flat)

    def flat(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                for g in fields(v):
                    out[f"{f.name}.{g.name}"] = getattr(v, g.name)
            else:
                out[f.name] = v
        return out

    def dumps(self) -> str:
        lines = []
        section = None
        for key, v in self.flat().items():
            head = key.split(".")[0] if "." in key else None
            if head != section and lines:
                lines.append("")
            section = head
            lines.append(f"{key} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        """Digest of every parameter that affects results (the output location does not)."""
        text = "\n".join(f"{k} = {_fmt(v)}" for k, v in self.flat().items() if k != "output_dir")
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def provenance(self) -> str:
        return f"heraldsim config_hash={self.hash} seed={self.seed}"


_SECTIONS = {
    "source": SourceParams,
    "detector": DetectorParams,
    "ion": IonParams,
    "sequence": SequenceParams,
    "correlation": CorrelationParams,
}
_TOP = {"seed": int, "output_dir": str}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _key_types() -> dict:
    types = dict(_TOP)
    for name, cls in _SECTIONS.items():
        for f in fields(cls):
            types[f"{name}.{f.name}"] = type(getattr(cls(), f.name))
    return types


def _coerce(key: str, value, typ):
    if typ is bool:
        if isinstance(value, bool):
            return value
    elif typ is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif typ is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif typ is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"key {key!r}: expected {typ.__name__}, got {value!r}")


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def from_flat(flat: dict, lines: dict | None = None) -> RunConfig:
    types = _key_types()
    lines = lines or {}

    def where(key):
        return f"line {lines[key]}: " if key in lines else ""

    values = {}
    for key, v in flat.items():
        if key not in types:
            raise ConfigError(f"{where(key)}unknown key {key!r}")
        try:
            values[key] = _coerce(key, v, types[key])
        except ConfigError as exc:
            raise ConfigError(f"{where(key)}{exc}") from None
    parts = {}
    for name, cls in _SECTIONS.items():
        kw = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(name + ".")}
        try:
            parts[name] = cls(**kw)
        except HeraldSimError as exc:
            keys = ", ".join(sorted(f"{name}.{k}" for k in kw)) or "defaults"
            raise ConfigError(f"invalid {name} parameters ({keys}): {exc}") from None
    top = {k: values[k] for k in _TOP if k in values}
    return RunConfig(**parts, **top)


def loads(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = {}
    section = ""
    for i, raw in enumerate(text.splitlines(), 1):
        head = re.match(r"\s*\[\s*([A-Za-z0-9_.]+)\s*\]", raw)
        if head:
            section = head.group(1) + "."
            continue
        m = re.match(r"\s*([A-Za-z0-9_.]+)\s*=", raw)
        if m:
            lines.setdefault(section + m.group(1), i)
    return from_flat(_flatten(doc), lines)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
