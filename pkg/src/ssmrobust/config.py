"""Experiment configuration: flat ``key = value`` files with dotted keys.

Grammar: one ``key = value`` pair per line; blank lines and lines starting
with ``#`` are ignored; whitespace around the first ``=`` is stripped.
Unknown keys are rejected. Fractions like ``4/255`` are accepted wherever a
float is. The resolved configuration (defaults included) hashes to a stable
identifier embedded in every report header.
"""

import hashlib

from .errors import ConfigError


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text


def _floats(text: str):
    return tuple(_float(t) for t in text.split(",") if t.strip() != "")


def _ints(text: str):
    return tuple(int(t) for t in text.split(",") if t.strip() != "")


def _strs(text: str):
    return tuple(t.strip() for t in text.split(",") if t.strip() != "")


SCHEMA = {
    "seed": (_int, "42"),
    "out_dir": (_str, "runs"),
    "checkpoint": (_str, ""),
    "dataset.kind": (_str, "synthetic"),
    "dataset.path": (_str, ""),
    "dataset.classes": (_int, "4"),
    "dataset.samples_per_class": (_int, "200"),
    "dataset.image_size": (_int, "28"),
    "model.patch_size": (_int, "4"),
    "model.embed_dim": (_int, "32"),
    "model.state_dim": (_int, "8"),
    "model.stage_depths": (_ints, "1,1,1,1"),
    "train.epochs": (_int, "10"),
    "train.batch_size": (_int, "50"),
    "train.learning_rate": (_float, "0.001"),
    "train.weight_decay": (_float, "0.0"),
    "eval.batch_size": (_int, "128"),
    "attack.kind": (_str, "both"),
    "attack.eps": (_floats, "1/255"),
    "attack.alpha": (_str, "auto"),
    "attack.steps": (_int, "20"),
    "attack.random_start": (_bool, "false"),
    "patchdrop.ratios": (_floats, "0,0.0625,0.1875,0.25,0.375,0.5,0.5625"),
    "patchdrop.grid": (_int, "4"),
    "patchdrop.baseline": (_float, "0.0"),
    "corrupt.noise_sigmas": (_floats, "0.04,0.08,0.12,0.18,0.26"),
    "corrupt.blur_stds": (_floats, "0.5,1.0,1.5,2.0,2.5"),
    "faults.budgets": (_ints, "1,2,4,8,16"),
    "faults.trials": (_int, "5"),
    "faults.region": (_str, "any"),
    "faults.groups": (_strs, ""),
    "faults.iters": (_int, "100"),
    "faults.fast_batches": (_int, "1"),
    "faults.filter": (_str, ""),
    "faults.activation_site": (_str, "pool"),
    "faults.activation_budget": (_int, "1"),
}


def parse_config_file(path) -> dict:
    """Raw string values from a config file; keys validated against the schema."""
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
            key, value = stripped.split("=", 1)
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def resolve_config(file_values=None, overrides=None):
    """(typed config, canonical string form) from file values plus overrides."""
    raw = {key: default for key, (_, default) in SCHEMA.items()}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            if value is not None:
                raw[key] = str(value)
    typed = {}
    for key, value in raw.items():
        caster = SCHEMA[key][0]
        try:
            typed[key] = caster(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"invalid value for {key}: {value!r} ({exc})") from exc
    return typed, raw


# where files land does not change what an experiment computes
_UNHASHED_KEYS = frozenset({"out_dir", "checkpoint"})


def config_hash(raw: dict) -> str:
    canon = "\n".join(f"{k} = {raw[k]}" for k in sorted(raw) if k not in _UNHASHED_KEYS)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
