"""Experiment runners behind the CLI.

Each runner takes a validated RunConfig and returns a ``Table`` (column
names, rows, and a summary dict for the manifest).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, ScenarioConfig
from .decoherence import (
    InvariantViolation,
    channel_probabilities,
    drift,
    purity_report,
    sigma_at,
    split,
    solve_beta,
)
from .hilbert import Eigenframe, promote_k, trace_env
from .models import (
    PointerBathParams,
    PointerRulerParams,
    Scenario,
    build_combined,
    build_pointer_bath,
    build_pointer_ruler_phonon,
    seeded_hidden_density,
)
from .reduction import (
    SUM_TOL,
    SimplexPoint,
    WalkParams,
    estimate_hitting,
    mean_value_check,
    run_batch,
)

log = logging.getLogger(__name__)


@dataclass
class Table:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)


# --- scenarios ----------------------------------------------------------------

def _tuplify(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if k == "lambda":
            k = "lam"
        if isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        out[k] = v
    return out


def _complex(v):
    if isinstance(v, (tuple, list)):
        return complex(v[0], v[1])
    return complex(v)


def build_scenario(sc: ScenarioConfig, seed: int) -> Scenario:
    params = _tuplify(sc.params)
    params.setdefault("seed", seed)
    if sc.model == "pointer_bath":
        return build_pointer_bath(PointerBathParams(**params))
    bath = {k: params.pop(k) for k in ("bath_lam", "n_bath") if k in params}
    if "lam" in params:
        params["lam"] = _complex(params["lam"])
    rp = PointerRulerParams(**params)
    if sc.model == "pointer_ruler":
        if bath:
            raise ValueError("bath_lam/n_bath only apply to the combined model")
        return build_pointer_ruler_phonon(rp)
    if sc.model == "combined":
        return build_combined(rp, float(bath.get("bath_lam", 0.1)), int(bath.get("n_bath", 2)), seed=rp.seed)
    raise ValueError(f"unknown model {sc.model!r}")


def offdiag_norm(rhoK, channels) -> float:
    """Frobenius norm of the cross-channel part ``rho(K) - Σ Π_j rho(K) Π_j``."""
    diag = sum(P.mat @ rhoK.mat @ P.mat for P in channels.projectors)
    return float(np.linalg.norm(rhoK.mat - diag))


# --- runners ------------------------------------------------------------------

def run_decoherence(cfg: RunConfig) -> Table:
    sc = build_scenario(cfg.scenario, cfg.seed)
    ev = cfg.evolution
    beta0 = solve_beta(sc.E, sc.rho0)
    frame = Eigenframe(sc.hamiltonian())
    n = len(sc.channels)
    cols = ["t"] + [f"p_{j + 1}" for j in range(n)] + ["offdiag_norm", "tr_rho_hidden_sq", "cross_term"]
    if ev.resolve_beta:
        cols.append("beta")
    rows = []
    for t in np.linspace(0.0, ev.t_max, ev.n_steps + 1):
        rho = frame.evolve(sc.rho0, t)
        s = split(rho, sc.E, beta=None if ev.resolve_beta else beta0)
        rep = purity_report(s, rho)
        rhoK = trace_env(rho)
        row = [float(t), *channel_probabilities(rhoK, sc.channels),
               offdiag_norm(rhoK, sc.channels), rep.tr_rhohidden2, rep.cross_term]
        if ev.resolve_beta:
            row.append(s.beta)
        rows.append(row)
    first, last = rows[0], rows[-1]
    return Table(cols, rows, {
        "beta0": beta0,
        "offdiag_initial": first[n + 1],
        "offdiag_final": last[n + 1],
        "cross_term_final": last[n + 3],
    })


def _walk_params(cfg: RunConfig, covariance=None) -> WalkParams:
    w = cfg.walk
    cov = covariance if covariance is not None else w.covariance
    return WalkParams(
        step_sigma=w.step_sigma,
        covariance=None if cov is None else np.asarray(cov, dtype=float),
        max_steps=w.max_steps,
        seed=cfg.seed,
        inhomogeneity=w.inhomogeneity,
    )


def _check_sum(err: float) -> None:
    if err > SUM_TOL:
        raise InvariantViolation("probability conservation", f"max |sum(p) - 1| = {err:.3g}")


def run_reduction(cfg: RunConfig, threads: int | None = None) -> Table:
    p0 = SimplexPoint.from_probs(cfg.walk.p0)
    b = run_batch(p0, _walk_params(cfg), cfg.walk.n_traj, threads=threads)
    _check_sum(float(b.sum_err.max()))
    rows = []
    for i in range(len(b.winner)):
        k = int(np.sum(b.absorbed[i] >= 0))
        order = ";".join(f"{int(c) + 1}@{int(s)}" for c, s in zip(b.absorbed[i][:k], b.absorbed_step[i][:k]))
        winner = int(b.winner[i]) + 1 if b.winner[i] >= 0 else ""
        rows.append([i, winner, int(b.steps[i]), int(b.truncated[i]), order])
    done = ~b.truncated
    return Table(["trajectory", "winner", "steps", "truncated", "absorption_order"], rows, {
        "n_truncated": int(b.truncated.sum()),
        "mean_steps": float(b.steps[done].mean()) if done.any() else None,
    })


def _hitting_summary(stats, n_requested):
    return {
        "n_trajectories": stats.n_trajectories,
        "n_truncated": stats.n_truncated,
        "truncation_fraction": stats.n_truncated / n_requested,
        "mean_steps": stats.mean_steps,
    }


def run_born_check(cfg: RunConfig, threads: int | None = None) -> Table:
    p0 = SimplexPoint.from_probs(cfg.walk.p0)
    stats = estimate_hitting(p0, _walk_params(cfg), cfg.walk.n_traj, threads=threads)
    rows = [[j + 1, float(p0.coords[j]), float(stats.pi_hat[j]), float(stats.std_err[j])]
            for j in range(p0.n)]
    z = np.abs(stats.pi_hat - p0.coords) / np.where(stats.std_err > 0, stats.std_err, np.inf)
    summary = _hitting_summary(stats, cfg.walk.n_traj)
    summary["max_z"] = float(np.max(z))
    return Table(["channel", "p0", "pi_hat", "std_err"], rows, summary)


def run_harmonicity(cfg: RunConfig, threads: int | None = None) -> Table:
    p0 = SimplexPoint.from_probs(cfg.walk.p0)
    h = cfg.harmonicity
    res = mean_value_check(p0, h.radius, _walk_params(cfg), cfg.walk.n_traj, h.n_sphere, threads=threads)
    rows = [[k + 1, float(res.lhs[k]), float(res.rhs[k]), float(res.combined_std_err[k]), float(res.z[k])]
            for k in range(p0.n)]
    return Table(["face", "lhs", "rhs", "combined_std_err", "z"], rows, {"holds_3sigma": res.holds()})


def run_anisotropy(cfg: RunConfig, threads: int | None = None) -> Table:
    p0 = SimplexPoint.from_probs(cfg.walk.p0)
    iso = estimate_hitting(p0, _walk_params(cfg, None), cfg.walk.n_traj, threads=threads)
    cov = np.diag(np.asarray(cfg.anisotropy.covariance_diag, dtype=float))
    ani = estimate_hitting(p0, _walk_params(cfg, cov), cfg.walk.n_traj, threads=threads)
    rows = []
    for j in range(p0.n):
        z = abs(ani.pi_hat[j] - p0.coords[j]) / ani.std_err[j] if ani.std_err[j] > 0 else 0.0
        rows.append([j + 1, float(p0.coords[j]), float(iso.pi_hat[j]), float(iso.std_err[j]),
                     float(ani.pi_hat[j]), float(ani.std_err[j]), float(z)])
    cols = ["channel", "p0", "pi_hat_isotropic", "std_err_isotropic",
            "pi_hat_anisotropic", "std_err_anisotropic", "z_anisotropic"]
    return Table(cols, rows, {
        "isotropic": _hitting_summary(iso, cfg.walk.n_traj),
        "anisotropic": _hitting_summary(ani, cfg.walk.n_traj),
        "max_z_anisotropic": max(r[-1] for r in rows),
    })


def run_drift_study(cfg: RunConfig) -> Table:
    d = cfg.drift
    rows = []
    summary = {}
    for model in d.models:
        sc = build_scenario(ScenarioConfig(model, d.params.get(model, {})), cfg.seed)
        de = sc.E.dim
        comm = max(
            float(np.max(np.abs(sc.C.mat @ promote_k(P, de).mat - promote_k(P, de).mat @ sc.C.mat)))
            for P in sc.channels.projectors
        )
        worst = 0.0
        for s in range(d.n_samples):
            hidden = seeded_hidden_density(sc.space, d.hidden_rank, d.hidden_scale, cfg.seed * 1000 + s)
            sigma = sigma_at(hidden, sc.K, sc.E, d.time)
            v = drift(sc.channels, sc.C, sigma)
            if abs(v.sum()) > 1e-10:
                raise InvariantViolation("drift sums to zero", f"{model} sample {s}: sum = {v.sum():.3g}")
            worst = max(worst, float(np.max(np.abs(v))))
            rows += [[model, s, j + 1, float(v[j])] for j in range(len(v))]
        summary[model] = {"commutator_norm_max": comm, "drift_inf_norm_max": worst}
    return Table(["model", "sample", "channel", "drift"], rows, summary)


RUNNERS = {
    "decoherence": lambda cfg, threads: run_decoherence(cfg),
    "reduction": run_reduction,
    "born_check": run_born_check,
    "harmonicity": run_harmonicity,
    "anisotropy": run_anisotropy,
    "drift_study": lambda cfg, threads: run_drift_study(cfg),
}


def run_experiment(cfg: RunConfig, threads: int | None = None) -> Table:
    log.info("running %s (seed %d)", cfg.experiment, cfg.seed)
    return RUNNERS[cfg.experiment](cfg, threads)
