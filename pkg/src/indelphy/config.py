"""Run configuration: flat key=value files, typed defaults, and hashing."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .priors import PriorConfig
from .proposals import Tuning


@dataclass(frozen=True)
class RunConfig:
    prior: PriorConfig = field(default_factory=PriorConfig)
    tuning: Tuning = field(default_factory=Tuning)
    iters: int = 100_000
    thin: int = 100
    burn_in: float = 0.25
    seed: int = 0
    chains: int = 3
    prior_only: bool = False
    audit_every: int = 0
    scan_weights: tuple[float, ...] = (0.2, 0.3, 0.2, 0.15, 0.15)
    mea_gap_factor: float = 0.5
    deletion_dist: str = "geometric"
    nb_shape: float = 2.0
    nb_prob: float = 0.5
    pl_exponent: float = 2.0
    pl_cutoff: int = 50


_PRIOR_KEYS = {f.name for f in fields(PriorConfig)}
_TUNING_KEYS = {f.name for f in fields(Tuning)}
_SCAN_KEYS = ("scan_branch", "scan_edge", "scan_node", "scan_spr", "scan_params")
_TOP_KEYS = {
    "iters": int,
    "thin": int,
    "burn_in": float,
    "seed": int,
    "chains": int,
    "prior_only": bool,
    "audit_every": int,
    "mea_gap_factor": float,
    "deletion_dist": str,
    "nb_shape": float,
    "nb_prob": float,
    "pl_exponent": float,
    "pl_cutoff": int,
}


def _parse_value(text: str, typ):
    if typ is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return typ(text)


def config_from_dict(items: dict[str, str]) -> RunConfig:
    prior_kwargs = {}
    tuning_kwargs = {}
    top: dict = {}
    scan = dict(zip(_SCAN_KEYS, RunConfig().scan_weights))
    for key, raw in items.items():
        if key == "alpha_pi":
            parts = [float(x) for x in raw.split(",")]
            if len(parts) != 4:
                raise ValueError("alpha_pi needs four comma-separated values")
            prior_kwargs[key] = tuple(parts)
        elif key in _PRIOR_KEYS:
            prior_kwargs[key] = float(raw)
        elif key in _TUNING_KEYS:
            typ = int if key == "node_step" else float
            tuning_kwargs[key] = typ(raw)
        elif key in _SCAN_KEYS:
            scan[key] = float(raw)
        elif key in _TOP_KEYS:
            top[key] = _parse_value(raw, _TOP_KEYS[key])
        else:
            raise ValueError(f"unknown config key {key!r}")
    return RunConfig(
        prior=PriorConfig(**prior_kwargs),
        tuning=Tuning(**tuning_kwargs),
        scan_weights=tuple(scan[k] for k in _SCAN_KEYS),
        **top,
    )


def parse_config(text: str) -> RunConfig:
    """Flat key = value lines; '#' starts a comment; blank lines ignored."""
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, _, value = body.partition("=")
        key = key.strip()
        if key in items:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        items[key] = value.strip()
    return config_from_dict(items)


def config_to_dict(cfg: RunConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for f in fields(PriorConfig):
        val = getattr(cfg.prior, f.name)
        out[f.name] = ",".join(repr(x) for x in val) if f.name == "alpha_pi" else repr(val)
    for f in fields(Tuning):
        out[f.name] = repr(getattr(cfg.tuning, f.name))
    for key, w in zip(_SCAN_KEYS, cfg.scan_weights):
        out[key] = repr(w)
    for key in _TOP_KEYS:
        val = getattr(cfg, key)
        if isinstance(val, bool):
            out[key] = "true" if val else "false"
        elif isinstance(val, str):
            out[key] = val
        else:
            out[key] = repr(val)
    return out


def format_config(cfg: RunConfig) -> str:
    items = config_to_dict(cfg)
    return "".join(f"{k} = {v}\n" for k, v in sorted(items.items()))


def config_hash(cfg: RunConfig) -> str:
    """Stable digest of the full configuration; embedded in sample logs so
    runs with different settings cannot be mixed silently."""
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()[:12]
