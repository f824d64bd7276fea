"""Run configuration: ``key = value`` files, flag overrides and method wiring.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment and blank lines are ignored.  Keys are :class:`RunConfig` field
names or the matching flag names (``lambda``, ``corpus``, ``query``,
``template``), with dashes accepted in place of underscores.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .objective import ObjectiveConfig
from .selector import METHODS

DEMO_ORDERS = ("descending", "ascending")

# (stage 1 uses lambda, stage 2 uses lambda) for each method
METHOD_STAGES = {
    "dual_div": (True, True),
    "div_s3": (False, False),
    "div_star_s3": (True, False),
    "div_s3_star": (False, True),
    "random_similar": (False, False),
}


@dataclass(frozen=True)
class RunConfig:
    corpus_path: str | None = None
    query_path: str | None = None
    format: str = "text"
    lam: float = 0.1
    lambda_stage1: float | None = None
    lambda_stage2: float | None = None
    k1: int = 100
    k: int = 3
    method: str = "dual_div"
    seed: int = 0
    output_dir: str = "out"
    emit_prompt: bool = False
    template_path: str | None = None
    task_description: str = ""
    corpus_text: str | None = None
    query_text: str | None = None
    demo_order: str = "descending"
    per_query: bool = False
    residual_floor: float = 1e-12
    allow_negative_gain: bool = False
    emit_kernel: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.format not in ("text", "binary"):
            raise ConfigError(f"unknown format {self.format!r}; expected text or binary")
        if self.demo_order not in DEMO_ORDERS:
            raise ConfigError(f"unknown demo_order {self.demo_order!r}; expected one of {DEMO_ORDERS}")
        if self.k > self.k1:
            raise ConfigError(f"k ({self.k}) must not exceed k1 ({self.k1})")
        objective_config(self)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELDS = {f.name: f for f in fields(RunConfig)}
_BOOL_WORDS = {"true": True, "yes": True, "1": True, "on": True,
               "false": False, "no": False, "0": False, "off": False}


_ALIASES = {"lambda": "lam", "corpus": "corpus_path", "query": "query_path",
            "template": "template_path"}


def _canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    return _ALIASES.get(key, key)


def coerce(key: str, raw):
    """Convert a raw string to the type of RunConfig field ``key``."""
    key = _canonical_key(key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(raw, str):
        return raw
    kind = _FIELDS[key].type
    text = raw.strip()
    try:
        if "bool" in kind:
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(text)
            return _BOOL_WORDS[text.lower()]
        if "float" in kind:
            if text.lower() in ("", "none") and "None" in kind:
                return None
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        if "int" in kind:
            return int(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    if text.lower() == "none" and "None" in kind:
        return None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        try:
            key = _canonical_key(key)
            values[key] = coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def build_run_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then explicit overrides (``None`` means unset)."""
    merged = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[_canonical_key(key)] = coerce(key, value)
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def objective_config(run: RunConfig) -> ObjectiveConfig:
    """Resolve the per-stage lambdas implied by ``run.method``.

    Methods that switch a stage's diversity term off reject a nonzero
    override for that stage rather than silently ignoring it.
    """
    uses = METHOD_STAGES[run.method]
    resolved = []
    for stage, (on, override) in enumerate(zip(uses, (run.lambda_stage1, run.lambda_stage2)), 1):
        if on:
            resolved.append(run.lam if override is None else override)
            continue
        if override not in (None, 0):
            raise ConfigError(f"method {run.method} fixes stage {stage} lambda at 0, "
                              f"but lambda_stage{stage} = {override!r}")
        resolved.append(0.0)
    return ObjectiveConfig(lam=run.lam, residual_floor=run.residual_floor, k1=run.k1, k=run.k,
                           allow_negative_gain=run.allow_negative_gain,
                           lambda_stage1=float(resolved[0]), lambda_stage2=float(resolved[1]))
