"""Experiment configuration: INI-style files, validated before launch."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .realization import MASK64, ModelParams, Torus, TruncatedBox

KINDS = (
    "tau_tail",
    "sigma_tail",
    "duality",
    "total_visits",
    "spectral_audit",
    "busy_audit",
    "union_bound",
    "lower_bound_probe",
    "d1_labels",
)


class ConfigError(ValueError):
    """Invalid configuration; message references the offending entry."""


@dataclass
class ExperimentConfig:
    kind: str
    params: ModelParams
    t_grid: tuple[int, ...]
    reps: int
    workers: int
    out_dir: Path
    options: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Reproducibility record: everything that determines the results.

        The output directory and worker count are excluded (they affect
        where files land and how fast, never their contents); the
        manifest records them separately.
        """
        dom = self.params.domain
        return {
            "kind": self.kind,
            "model": {
                "d": self.params.d,
                "p": self.params.p,
                "seed": self.params.seed,
                "domain": "torus" if isinstance(dom, Torus) else "box",
                "size": dom.side if isinstance(dom, Torus) else dom.radius,
            },
            "t_grid": list(self.t_grid),
            "reps": self.reps,
            "options": dict(self.options),
        }


def _get(cp, section, key, cast, default=None, required=False):
    try:
        raw = cp.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        if required:
            raise ConfigError(f"[{section}] {key}: required entry is missing")
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _int_list(raw: str) -> tuple[int, ...]:
    parts = raw.replace(",", " ").split()
    if not parts:
        raise ValueError("empty list")
    return tuple(int(x) for x in parts)


def load_config(path, seed_override=None, workers_override=None, out_override=None) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found or unreadable: {path}")

    kind = _get(cp, "experiment", "kind", str, required=True)
    if kind not in KINDS:
        raise ConfigError(f"[experiment] kind: unknown kind {kind!r}; expected one of {KINDS}")
    reps = _get(cp, "experiment", "reps", int, default=0)
    workers = _get(cp, "experiment", "workers", int, default=0)
    seed = _get(cp, "experiment", "seed", int, default=0)

    d = _get(cp, "model", "d", int, required=True)
    p = _get(cp, "model", "p", float, required=True)
    domain_kind = _get(cp, "model", "domain", str, default="box")
    if domain_kind not in ("box", "torus"):
        raise ConfigError(f"[model] domain: expected box or torus, got {domain_kind!r}")

    t_grid = _get(cp, "grid", "t", _int_list, default=())

    options: dict[str, int] = {}
    if cp.has_section("options"):
        for key in cp.options("options"):
            options[key] = _get(cp, "options", key, int)

    out_dir = Path(out_override or _get(cp, "output", "dir", str, default="results"))
    if seed_override is not None:
        seed = seed_override
    if workers_override is not None:
        workers = workers_override

    if not (0 <= seed <= MASK64):
        raise ConfigError("[experiment] seed: must fit in 64 bits")
    if t_grid and any(t < 0 for t in t_grid):
        raise ConfigError("[grid] t: horizons must be >= 0")
    if t_grid != tuple(sorted(t_grid)):
        raise ConfigError("[grid] t: horizons must be increasing")

    t_max = max(t_grid) if t_grid else options.get("t_max", 0)
    if domain_kind == "torus":
        side = _get(cp, "model", "side", int, required=True)
        try:
            domain = Torus(side)
        except ValueError as exc:
            raise ConfigError(f"[model] side: {exc}") from exc
    else:
        default_radius = max(2 * t_max, 1)
        radius = _get(cp, "model", "radius", int, default=default_radius)
        try:
            domain = TruncatedBox(radius)
        except ValueError as exc:
            raise ConfigError(f"[model] radius: {exc}") from exc

    try:
        params = ModelParams(d=d, p=p, seed=seed, domain=domain)
    except ValueError as exc:
        raise ConfigError(f"[model]: {exc}") from exc

    cfg = ExperimentConfig(
        kind=kind,
        params=params,
        t_grid=t_grid,
        reps=reps,
        workers=workers,
        out_dir=out_dir,
        options=options,
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    """Check module preconditions before any work is launched."""
    kind, params = cfg.kind, cfg.params
    is_torus = isinstance(params.domain, Torus)

    needs_reps = kind in (
        "tau_tail", "sigma_tail", "duality", "total_visits", "lower_bound_probe",
        "busy_audit", "union_bound", "d1_labels",
    )
    if needs_reps and cfg.reps < 100:
        raise ConfigError(f"[experiment] reps: {kind} needs reps >= 100, got {cfg.reps}")

    if kind in ("tau_tail", "sigma_tail", "union_bound", "lower_bound_probe"):
        if not cfg.t_grid:
            raise ConfigError(f"[grid] t: {kind} needs a horizon grid")
        if is_torus:
            raise ConfigError(f"[model] domain: {kind} requires a truncated box")
        if params.domain.radius < 2 * max(cfg.t_grid):
            raise ConfigError(
                f"[model] radius: must be >= 2*max(t) = {2 * max(cfg.t_grid)} for exactness"
            )
    if kind == "duality":
        if not is_torus:
            raise ConfigError("[model] domain: duality requires a torus (translation invariance)")
        if not cfg.t_grid or len(cfg.t_grid) != 1:
            raise ConfigError("[grid] t: duality takes exactly one horizon")
    if kind in ("sigma_tail", "d1_labels") and params.d != 1:
        raise ConfigError(f"[model] d: {kind} is one-dimensional")
    if kind == "sigma_tail" and params.p <= 0.5:
        raise ConfigError("[model] p: sigma_tail is a supercritical (p > 1/2) experiment")
    if kind == "total_visits":
        if "t_max" not in cfg.options:
            raise ConfigError("[options] t_max: total_visits needs a horizon")
        if is_torus or params.domain.radius < 2 * cfg.options["t_max"]:
            raise ConfigError("[model] radius: total_visits needs a box of radius >= 2*t_max")
    if kind == "union_bound":
        if params.p >= 0.5:
            raise ConfigError("[model] p: union_bound requires p < 1/2")
        if cfg.options.get("j_cap", 12) < 2:
            raise ConfigError("[options] j_cap: must be >= 2")
    if kind == "d1_labels":
        if "window" not in cfg.options:
            raise ConfigError("[options] window: d1_labels needs a ledger window")
        if is_torus:
            raise ConfigError("[model] domain: d1_labels requires a truncated box")
        need = max(cfg.options["window"], 2 * max(cfg.t_grid) if cfg.t_grid else 0)
        if params.domain.radius < need:
            raise ConfigError(f"[model] radius: must be >= {need} for the window and replay")
    if kind == "spectral_audit":
        if "n_max" not in cfg.options:
            raise ConfigError("[options] n_max: spectral_audit needs a size cap")
        if not cfg.t_grid:
            raise ConfigError("[grid] t: spectral_audit needs horizons to check")
