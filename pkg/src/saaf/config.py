"""Flat key-value experiment configuration.

Grammar, one entry per line::

    # comment                (also after a value: key = 3  # note)
    [section]                prefixes following keys with "section."
    key = value              or section.key = value

Values are parsed when read, according to the default's type.  Lists are
comma separated.  Later entries win; command-line overrides win over the file.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import UsageError

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "data.source": "additive",
    "data.n": 2000,
    "data.m": 3,
    "data.noise": "",
    "data.path": "",
    "data.target": "t",
    "data.x_column": "",
    "data.normalize": "minmax_to_grid",
    "split.scheme": "random",
    "split.fraction": 0.8,
    "split.folds": 3,
    "net.widths": [16, 8],
    "net.activation": "R-SAAFc2",
    "net.segments": 22,
    "net.sharing": "per-neuron",
    "net.normalize": False,
    "net.lrelu_slope": -1.0 / 3.0,
    "train.lr": 1e-3,
    "train.batch_size": 32,
    "train.epochs": 200,
    "train.l2": 1e-5,
    "train.optimizer": "adam",
    "train.momentum": 0.0,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.shuffle": True,
    "fit1d.c": 2,
    "fit1d.segments": 5000,
    "fit1d.lambda": 1e-5,
    "fit1d.lo": -1.1,
    "fit1d.hi": 1.1,
    "fit1d.points": 1000,
    "analyze.gamma": 0.5,
    "analyze.pairs": 10000,
    "analyze.bins": 20,
    "analyze.box": [-1.0, 1.0],
    "bench.activations": ["ReLU", "R-SAAFc1", "R-SAAFc2"],
    "bench.folds": 3,
    "gradcheck.draws": 20,
    "gradcheck.batch": 8,
    "gradcheck.step": 1e-5,
    "gradcheck.tol": 1e-4,
}


def _coerce(key, raw, default):
    text = raw.strip() if isinstance(raw, str) else raw
    if not isinstance(text, str):
        return text
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and isinstance(default[0], (int, float)):
                kind = type(default[0])
                return [kind(s) for s in items]
            return items
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


def parse_config(text: str, source: str = "<config>") -> dict:
    entries, section = {}, ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        if key not in DEFAULTS:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        entries[key] = value
    return entries


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str = "<defaults>"

    @classmethod
    def load(cls, path=None, overrides=None) -> "ExperimentConfig":
        raw = {}
        source = "<defaults>"
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    raw.update(parse_config(fh.read(), str(path)))
            except OSError as exc:
                raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
            source = str(path)
        for key, value in (overrides or {}).items():
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            if value is not None:
                raw[key] = value
        values = {k: _coerce(k, raw[k], d) if k in raw else d for k, d in DEFAULTS.items()}
        return cls(values, source)

    def __getitem__(self, key):
        return self.values[key]

    def seed_for(self, label: str) -> int:
        return derive_seed(self["seed"], label)

    def as_dict(self) -> dict:
        return dict(self.values)


def derive_seed(root: int, label: str) -> int:
    """Stable 63-bit seed from the root seed and a purpose label."""
    digest = hashlib.sha256(f"{int(root)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
