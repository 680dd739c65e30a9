"""Campaign configuration: a flat ``key = value`` file plus CLI overrides."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .cg import MONOLITHIC, SparseMatrix, Strategy, build_poisson, load_matrix
from .errors import ConfigError
from .faults import FaultModel, InjectionSpec
from .protection import SchemeKind

ALL_STRATEGIES = ("all", "static", "operands", "dynamic", "none")

# Keys that change how a run executes but not what it computes.
_UNHASHED = ("out", "jobs")


@dataclass(frozen=True)
class CampaignConfig:
    matrix: str = "poisson:16"
    strategies: tuple = ALL_STRATEGIES
    scheme: str = "parity"
    unit_span: int | str = 4096
    rate: float = 0.0
    model: str = "single-bit"
    bits: int = 1
    seed: int = 0
    trials: int = 10
    tol: float = 1e-10
    scrub_every: int = 1
    repeats: int = 1
    jobs: int = 1
    out: str = "."
    no_timing: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Raise :class:`ConfigError` on any malformed field."""
        kind, _, arg = self.matrix.partition(":")
        if kind == "poisson":
            if not arg.isdigit() or int(arg) < 2:
                raise ConfigError(f"matrix: poisson grid must be an integer >= 2, got {arg!r}")
        elif kind == "file":
            if not arg or not Path(arg).is_file():
                raise ConfigError(f"matrix: no such file {arg!r}")
        else:
            raise ConfigError(f"matrix must be poisson:M or file:PATH, got {self.matrix!r}")
        if not self.strategies:
            raise ConfigError("strategies: empty list")
        for s in self.strategies:
            _check(Strategy.parse, s, "strategies")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("strategies: duplicate entries")
        _check(SchemeKind.parse, self.scheme, "scheme")
        _check(FaultModel, self.model, "model")
        if self.unit_span != MONOLITHIC and (not isinstance(self.unit_span, int) or self.unit_span < 1):
            raise ConfigError(f"unit_span must be a positive integer or {MONOLITHIC!r}")
        for key in ("trials", "scrub_every", "repeats", "jobs", "bits"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.tol <= 0:
            raise ConfigError("tol must be > 0")
        try:
            self.injection()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def injection(self) -> InjectionSpec:
        return InjectionSpec(seed=self.seed, target="all", model=FaultModel(self.model),
                             bits=self.bits, rate=self.rate)

    def load_matrix(self) -> SparseMatrix:
        kind, _, arg = self.matrix.partition(":")
        return build_poisson(int(arg)) if kind == "poisson" else load_matrix(arg)

    def lines(self) -> list[str]:
        """Canonical ``key = value`` lines, sorted by key."""
        return [f"{f.name} = {_format(getattr(self, f.name))}" for f in sorted(fields(self), key=lambda f: f.name)]

    def sha256(self) -> str:
        """Hash of every field that affects results (not ``out`` or ``jobs``)."""
        text = "\n".join(l for l in self.lines() if l.split(" = ")[0] not in _UNHASHED)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, **values) -> "CampaignConfig":
        """Copy with raw (string or typed) values applied; ``None`` means unset."""
        return replace(self, **_coerce({k: v for k, v in values.items() if v is not None}))


def _check(parse, value, key):
    try:
        parse(value)
    except ValueError:
        raise ConfigError(f"{key}: unknown value {value!r}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_span(text: str):
    t = text.strip()
    return t if t == MONOLITHIC else int(t)


def _parse_list(text: str) -> tuple:
    return tuple(s.strip().lower() for s in text.split(",") if s.strip())


_PARSERS = {
    "matrix": str.strip,
    "strategies": _parse_list,
    "scheme": lambda t: t.strip().lower(),
    "unit_span": _parse_span,
    "rate": float,
    "model": lambda t: t.strip().lower(),
    "bits": int,
    "seed": int,
    "trials": int,
    "tol": float,
    "scrub_every": int,
    "repeats": int,
    "jobs": int,
    "out": str.strip,
    "no_timing": _parse_bool,
}


def _coerce(values: dict) -> dict:
    out = {}
    for key, raw in values.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        if not isinstance(raw, str):
            out[key] = tuple(raw) if isinstance(raw, list) else raw
            continue
        try:
            out[key] = _PARSERS[key](raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return out


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into a raw mapping.

    Blank lines and ``#`` comments are ignored.  Keys may use ``-`` or
    ``_``.  Unknown or repeated keys are errors.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def load_config(path=None, **overrides) -> CampaignConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        values.update(parse_config(text))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return CampaignConfig(**_coerce(values))
