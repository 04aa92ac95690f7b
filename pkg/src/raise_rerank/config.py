"""Run configuration: ``key=value`` files, ``RAISE_SEED`` and command-line overrides.

Precedence, lowest first: field defaults, config file, ``RAISE_SEED``, flags.
Blank lines and lines starting with ``#`` are ignored in config files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from .errors import ConfigError
from .model import RaiseConfig

SEED_ENV = "RAISE_SEED"


@dataclass
class RunConfig:
    # model (mirrors RaiseConfig)
    d: int = 32
    n: int = 50
    t: int = 4
    b: int = 1
    l_u: int = 20
    l_i: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    dropout: float = 0.1
    epochs: int = 50
    seed: int = 0
    co_att: str = "bilinear"
    aggregation: str = "sum"
    ablation: str = "full"
    shared_experts: bool = False
    mlp_layers: int = 2
    finetune_base: bool = False
    # paths, relative ones resolved against workdir
    workdir: str = "."
    interactions: str = "interactions.tsv"
    reviews: str = "reviews.jsonl"
    embeddings: str = "reviews.rve"
    # gen-synth
    users: int = 100
    items: int = 200
    intents: int = 4
    reviews_per_entity: int = 5
    density: float = 0.1
    concentration: float = 0.05
    # base ranker and lists
    base_epochs: int = 100
    base_lr: float = 0.01
    base_l2: float = 0.0
    neg_per_pos: int = 4
    holdout: float = 0.0
    exclude_train: bool = False
    min_interactions: int = 0
    # evaluation, profiling, explanations
    ks: str = "5,10,20"
    map_denominator: str = "relevant"
    heads: int = 4
    profile_repeats: int = 20
    user: str = ""
    item: str = ""
    top_m: int = 5

    def model_config(self) -> RaiseConfig:
        names = {f.name for f in fields(RaiseConfig)}
        return RaiseConfig(**{k: getattr(self, k) for k in names})

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.workdir) / p

    def k_values(self) -> tuple[int, ...]:
        return tuple(int(k) for k in self.ks.split(","))

    def validate(self) -> "RunConfig":
        self.model_config().validate()
        positive = ("users", "items", "intents", "reviews_per_entity", "base_epochs", "heads", "profile_repeats", "top_m")
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if not 0.0 < self.density <= 1.0:
            raise ConfigError(f"density must lie in (0, 1], got {self.density}")
        if self.concentration <= 0.0:
            raise ConfigError(f"concentration must be > 0, got {self.concentration}")
        if not 0.0 <= self.holdout < 1.0:
            raise ConfigError(f"holdout must lie in [0, 1), got {self.holdout}")
        if self.neg_per_pos < 0 or self.min_interactions < 0:
            raise ConfigError("neg_per_pos and min_interactions must be >= 0")
        if self.base_lr < 0 or self.base_l2 < 0:
            raise ConfigError("base_lr and base_l2 must be >= 0")
        if self.map_denominator not in ("relevant", "hits"):
            raise ConfigError(f"map_denominator must be 'relevant' or 'hits', got {self.map_denominator!r}")
        try:
            ks = self.k_values()
        except ValueError:
            raise ConfigError(f"ks must be comma-separated integers, got {self.ks!r}") from None
        if not ks or min(ks) < 1:
            raise ConfigError(f"ks must be >= 1, got {self.ks!r}")
        if self.heads > self.d or self.d % self.heads:
            raise ConfigError(f"heads must divide d={self.d}, got {self.heads}")
        return self

    def to_text(self) -> str:
        # workdir is left out so a run can be moved or replayed elsewhere
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self) if f.name != "workdir")


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_pairs(lines, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values.update(_expand(key, raw, f"{source}:{lineno}"))
    return values


def _expand(key: str, raw, where: str) -> dict:
    # ``l`` sets both review-sequence lengths
    if key == "l":
        return {"l_u": _coerce("l_u", str(raw)), "l_i": _coerce("l_i", str(raw))}
    if key not in FIELD_TYPES:
        raise ConfigError(f"{where}: unknown key {key!r}")
    return {key: _coerce(key, str(raw))}


def parse_config(
    path=None, overrides: Mapping[str, object] | None = None, environ: Mapping[str, str] | None = None
) -> RunConfig:
    values: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values.update(parse_pairs(text.splitlines(), str(path)))
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV, "").strip():
        values["seed"] = _coerce("seed", env[SEED_ENV])
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values.update(_expand(key, raw, "flag"))
    return RunConfig(**values).validate()
