"""Run configuration: a single JSON document per experiment.

Schema (version 1)::

    {
      "schema_version": 1,
      "experiment": "born_check",          # decoherence | reduction | born_check |
                                           # harmonicity | anisotropy | drift_study
      "seed": 42,                          # mandatory
      "output": "results/born",            # path prefix
      "format": "csv",                     # csv | json
      "walk": {"p0": [0.3, 0.7], "step_sigma": 0.005, "n_traj": 100000,
               "max_steps": 10000000, "covariance": null, "inhomogeneity": 0.0},
      "scenario": {"model": "pointer_bath", "params": {...}},
      "evolution": {"t_max": 20.0, "n_steps": 400, "resolve_beta": false},
      "harmonicity": {"radius": 0.05, "n_sphere": 32},
      "anisotropy": {"covariance_diag": [4, 1, 1]},
      "drift": {"models": ["pointer_bath", "pointer_ruler"], "n_samples": 5,
                "hidden_rank": 4, "hidden_scale": 1.0, "time": 0.0}
    }
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1
EXPERIMENTS = ("decoherence", "reduction", "born_check", "harmonicity", "anisotropy", "drift_study")
MODELS = ("pointer_bath", "pointer_ruler", "combined")

NEEDS = {
    "decoherence": ("scenario", "evolution"),
    "reduction": ("walk",),
    "born_check": ("walk",),
    "harmonicity": ("walk", "harmonicity"),
    "anisotropy": ("walk", "anisotropy"),
    "drift_study": ("drift",),
}


class ConfigError(ValueError):
    def __init__(self, findings):
        super().__init__("; ".join(f["message"] for f in findings))
        self.findings = findings


@dataclass
class WalkConfig:
    p0: list
    step_sigma: float = 0.005
    n_traj: int = 100_000
    max_steps: int = 10_000_000
    covariance: list | None = None
    inhomogeneity: float = 0.0


@dataclass
class ScenarioConfig:
    model: str = "pointer_bath"
    params: dict = field(default_factory=dict)


@dataclass
class EvolutionConfig:
    t_max: float = 20.0
    n_steps: int = 400
    resolve_beta: bool = False


@dataclass
class HarmonicityConfig:
    radius: float = 0.05
    n_sphere: int = 32


@dataclass
class AnisotropyConfig:
    covariance_diag: list = field(default_factory=lambda: [4.0, 1.0, 1.0])


@dataclass
class DriftConfig:
    models: list = field(default_factory=lambda: ["pointer_bath", "pointer_ruler"])
    n_samples: int = 5
    hidden_rank: int = 4
    hidden_scale: float = 1.0
    time: float = 0.0
    params: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    experiment: str
    seed: int
    output: str = "results/run"
    format: str = "csv"
    schema_version: int = SCHEMA_VERSION
    walk: WalkConfig | None = None
    scenario: ScenarioConfig | None = None
    evolution: EvolutionConfig | None = None
    harmonicity: HarmonicityConfig | None = None
    anisotropy: AnisotropyConfig | None = None
    drift: DriftConfig | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_BLOCKS = {
    "walk": WalkConfig,
    "scenario": ScenarioConfig,
    "evolution": EvolutionConfig,
    "harmonicity": HarmonicityConfig,
    "anisotropy": AnisotropyConfig,
    "drift": DriftConfig,
}


def _finding(path: str, message: str) -> dict:
    return {"field": path, "message": message}


def parse(doc: dict) -> tuple[RunConfig | None, list]:
    """Build a RunConfig from a decoded JSON document; returns (config, findings)."""
    findings = []
    if not isinstance(doc, dict):
        return None, [_finding("", "config must be a JSON object")]
    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key in doc:
        if key not in top:
            findings.append(_finding(key, f"unknown key {key!r}"))
    if "seed" not in doc:
        findings.append(_finding("seed", "seed is mandatory"))
    elif not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool) or doc["seed"] < 0:
        findings.append(_finding("seed", "seed must be a non-negative integer"))
    if doc.get("experiment") not in EXPERIMENTS:
        findings.append(_finding("experiment", f"experiment must be one of {EXPERIMENTS}"))
    if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        findings.append(_finding("schema_version", f"unsupported schema version, expected {SCHEMA_VERSION}"))

    blocks = {}
    for name, cls in _BLOCKS.items():
        raw = doc.get(name)
        if raw is None:
            continue
        if not isinstance(raw, dict):
            findings.append(_finding(name, f"{name} must be an object"))
            continue
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(raw) - known
        if extra:
            findings.append(_finding(name, f"unknown keys {sorted(extra)} in {name}"))
            continue
        try:
            blocks[name] = cls(**raw)
        except TypeError as exc:
            findings.append(_finding(name, str(exc)))
    if findings:
        return None, findings
    scalars = {k: doc[k] for k in ("experiment", "seed", "output", "format", "schema_version") if k in doc}
    return RunConfig(**scalars, **blocks), []


def load(doc: dict) -> RunConfig:
    cfg, findings = parse(doc)
    if not findings:
        findings = validate(cfg)
    if findings:
        raise ConfigError(findings)
    return cfg


# --- validation ---------------------------------------------------------------

def validate(cfg: RunConfig) -> list:
    """Dry-run checks; returns findings and never raises on bad content."""
    out = []
    if cfg.format not in ("csv", "json"):
        out.append(_finding("format", "format must be csv or json"))
    for block in NEEDS.get(cfg.experiment, ()):
        if getattr(cfg, block) is None:
            out.append(_finding(block, f"experiment {cfg.experiment!r} needs a {block!r} block"))
    if out:
        return out
    if cfg.walk is not None:
        out += _validate_walk(cfg.walk)
    if cfg.experiment == "anisotropy":
        diag = np.asarray(cfg.anisotropy.covariance_diag, dtype=float)
        if cfg.walk.p0 is not None and len(diag) != len(cfg.walk.p0):
            out.append(_finding("anisotropy.covariance_diag", "one variance per channel"))
        if np.any(diag < 0):
            out.append(_finding("anisotropy.covariance_diag",
                                "covariance is not positive semidefinite (negative eigenvalue)"))
    if cfg.experiment == "harmonicity":
        h = cfg.harmonicity
        if h.n_sphere < 1 or h.radius <= 0:
            out.append(_finding("harmonicity", "need radius > 0 and n_sphere >= 1"))
        elif not out:
            p = np.asarray(cfg.walk.p0, dtype=float)
            n = len(p)
            if n < 2 or h.radius >= np.min(p) * np.sqrt(n / (n - 1.0)):
                out.append(_finding("harmonicity.radius", "sphere is not strictly inside the simplex"))
    if cfg.experiment == "decoherence":
        out += _validate_scenario(cfg.scenario, cfg.seed, "scenario")
        ev = cfg.evolution
        if ev.t_max <= 0 or ev.n_steps < 1:
            out.append(_finding("evolution", "need t_max > 0 and n_steps >= 1"))
    if cfg.experiment == "drift_study":
        d = cfg.drift
        for m in d.models:
            if m not in MODELS:
                out.append(_finding("drift.models", f"unknown model {m!r}"))
            else:
                out += _validate_scenario(ScenarioConfig(m, d.params.get(m, {})), cfg.seed, f"drift.params.{m}")
        if d.hidden_rank < 2 or d.hidden_scale <= 0 or d.n_samples < 1:
            out.append(_finding("drift", "need hidden_rank >= 2, hidden_scale > 0, n_samples >= 1"))
    return out


def _validate_walk(w: WalkConfig) -> list:
    out = []
    p = np.asarray(w.p0, dtype=float) if w.p0 is not None else None
    if p is None or p.ndim != 1 or len(p) < 2:
        return [_finding("walk.p0", "p0 must list at least two probabilities")]
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        out.append(_finding("walk.p0", "p0 must be non-negative and sum to 1"))
    if not w.step_sigma > 0:
        out.append(_finding("walk.step_sigma", "step_sigma must be positive"))
    if w.n_traj < 1 or w.max_steps < 1:
        out.append(_finding("walk", "n_traj and max_steps must be positive"))
    if w.covariance is not None:
        cov = np.asarray(w.covariance, dtype=float)
        if cov.shape != (len(p), len(p)):
            out.append(_finding("walk.covariance", f"covariance must be {len(p)}x{len(p)}"))
        elif np.max(np.abs(cov - cov.T)) > 1e-12:
            out.append(_finding("walk.covariance", "covariance is not symmetric"))
        elif np.linalg.eigvalsh(cov)[0] < -1e-12:
            out.append(_finding("walk.covariance",
                                "covariance is not positive semidefinite (negative eigenvalue)"))
    return out


def _validate_scenario(sc: ScenarioConfig, seed: int, path: str) -> list:
    from .decoherence import solve_beta
    from .experiments import build_scenario
    from .models import check_partition

    if sc.model not in MODELS:
        return [_finding(f"{path}.model", f"model must be one of {MODELS}")]
    blocks = sc.params.get("channel_blocks")
    if blocks is not None:
        reason = check_partition(blocks, int(sc.params.get("n_sites", 2)))
        if reason:
            return [_finding(f"{path}.params.channel_blocks", reason)]
    try:
        scenario = build_scenario(sc, seed)
    except (TypeError, ValueError) as exc:
        return [_finding(f"{path}.params", str(exc))]
    try:
        solve_beta(scenario.E, scenario.rho0)
    except ValueError as exc:
        return [_finding(f"{path}.params", f"beta matching infeasible: {exc}")]
    return []
