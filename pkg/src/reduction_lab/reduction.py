"""Brownian reduction on the probability simplex.

The point ``p`` (barycentric coordinates) receives projected Gaussian
increments inside the hyperplane ``sum(p) = 1``.  When a coordinate goes
negative it is absorbed at exactly 0 and the walk continues on the face,
until a single channel carries all the weight.

Each trajectory draws from its own ``numpy`` generator seeded by
``SeedSequence(seed, spawn_key=(stream, index))``, so results do not depend
on execution order or thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

SUM_TOL = 1e-12
# normals are drawn in blocks of this many steps; part of the stream layout
BLOCK = 512


@dataclass(frozen=True, eq=False)
class SimplexPoint:
    coords: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        a = np.array(self.active, dtype=bool)
        if c.ndim != 1 or c.shape != a.shape:
            raise ValueError("coords and active mask must be 1-d of equal length")
        if abs(c.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"coordinates sum to {c.sum():.17g}, not 1")
        if np.any(c < 0):
            raise ValueError("barycentric coordinates must be non-negative")
        if np.any(c[~a] != 0.0):
            raise ValueError("inactive channels must sit at exactly 0")
        if not a.any():
            raise ValueError("at least one channel must be active")
        c.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "active", a)

    @classmethod
    def from_probs(cls, p) -> "SimplexPoint":
        """Active channels are those with positive weight."""
        p = np.asarray(p, dtype=float)
        return cls(p, p > 0)

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())


@dataclass(frozen=True)
class WalkParams:
    step_sigma: float
    covariance: np.ndarray | None = None
    max_steps: int = 10_000_000
    seed: int = 0
    inhomogeneity: float = 0.0

    def __post_init__(self):
        if not self.step_sigma >= 0:
            raise ValueError("step_sigma must be non-negative")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.covariance is not None:
            cov = np.array(self.covariance, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise ValueError("covariance must be a square matrix")
            if np.max(np.abs(cov - cov.T)) > 1e-12:
                raise ValueError("covariance must be symmetric")
            if np.linalg.eigvalsh(cov)[0] < -1e-12:
                raise ValueError("covariance must be positive semidefinite")
            object.__setattr__(self, "covariance", cov)

    def noise_factor(self, n: int) -> np.ndarray | None:
        """Symmetric square root of the covariance, or None if isotropic."""
        if self.covariance is None:
            return None
        if self.covariance.shape != (n, n):
            raise ValueError(f"covariance is {self.covariance.shape}, walk has {n} channels")
        w, v = np.linalg.eigh(self.covariance)
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass(frozen=True)
class TrajectoryOutcome:
    winner: int | None
    steps_taken: int
    absorption_order: list
    truncated: bool = False
    path_samples: list | None = None


@dataclass(frozen=True)
class HittingStats:
    n_trajectories: int
    counts: np.ndarray
    pi_hat: np.ndarray
    std_err: np.ndarray
    n_truncated: int = 0
    mean_steps: float = float("nan")


# --- elementary moves ---------------------------------------------------------

def project_increment(delta, active) -> np.ndarray:
    """Orthogonal projection onto the direction space of the active face."""
    delta = np.asarray(delta, dtype=float)
    active = np.asarray(active, dtype=bool)
    if delta.shape != active.shape:
        raise ValueError("increment and mask lengths differ")
    if active.sum() < 2:
        raise ValueError("fewer than two active channels; the walk is finished")
    out = np.where(active, delta, 0.0)
    out[active] -= out[active].mean()
    return out


def absorb(point: SimplexPoint | tuple, violated=None) -> SimplexPoint:
    """Absorb negative coordinates one at a time, most negative first.

    The absorbed coordinate is set to 0 and its (negative) value is shared
    equally among the remaining active channels.  ``violated`` is accepted for
    interface symmetry; the negative set is recomputed after each absorption.
    """
    if isinstance(point, SimplexPoint):
        p, act = np.array(point.coords), np.array(point.active)
    else:
        p, act = np.array(point[0], dtype=float), np.array(point[1], dtype=bool)
    _absorb_inplace(p, act)
    return SimplexPoint(p, act)


@numba.njit(cache=True, nogil=True)
def _absorb_inplace(p, act):
    """Returns the absorbed channel indices in order (padded with -1)."""
    n = p.shape[0]
    order = np.full(n, -1, dtype=np.int64)
    count = 0
    n_active = 0
    for j in range(n):
        if act[j]:
            n_active += 1
    while n_active > 1:
        worst = -1
        low = 0.0
        for j in range(n):
            if act[j] and p[j] < low:
                low = p[j]
                worst = j
        if worst < 0:
            break
        p[worst] = 0.0
        act[worst] = False
        n_active -= 1
        order[count] = worst
        count += 1
        share = low / n_active
        for j in range(n):
            if act[j]:
                p[j] += share
    if n_active == 1:
        for j in range(n):
            if act[j]:
                p[j] = 1.0
    return order[:count]


# --- trajectory kernel ----------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _walk(rng, p0, act0, sigma, factor, use_factor, inhom, max_steps, stop_first,
          checkpoints, cp_out, absorbed, absorbed_step):
    """Run one walk in place of the output buffers.

    Returns (steps, n_absorbed, truncated, max |sum(p) - 1|).
    """
    n = p0.shape[0]
    p = p0.copy()
    act = act0.copy()
    x = np.empty(n)
    n_active = 0
    for j in range(n):
        if act[j]:
            n_active += 1
    n_abs = 0
    sum_err = 0.0
    n_cp = checkpoints.shape[0]
    nxt = 0
    while nxt < n_cp and checkpoints[nxt] == 0:
        cp_out[nxt, :] = p
        nxt += 1
    steps = 0
    done = n_active <= 1
    while not done and steps < max_steps:
        z = rng.standard_normal((BLOCK, n))
        for b in range(BLOCK):
            if use_factor:
                for i in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += factor[i, k] * z[b, k]
                    x[i] = acc
            else:
                for i in range(n):
                    x[i] = z[b, i]
            if inhom != 0.0:
                for i in range(n):
                    x[i] *= 1.0 + inhom * p[i]
            mean = 0.0
            for i in range(n):
                if act[i]:
                    mean += x[i]
            mean /= n_active
            neg = False
            for i in range(n):
                if act[i]:
                    p[i] += sigma * (x[i] - mean)
                    if p[i] < 0.0:
                        neg = True
            steps += 1

            if neg:
                order = _absorb_inplace(p, act)
                for r in range(order.shape[0]):
                    absorbed[n_abs] = order[r]
                    absorbed_step[n_abs] = steps
                    n_abs += 1
                n_active -= order.shape[0]

            s = 0.0
            for i in range(n):
                s += p[i]
            if abs(s - 1.0) > sum_err:
                sum_err = abs(s - 1.0)
            while nxt < n_cp and checkpoints[nxt] == steps:
                cp_out[nxt, :] = p
                nxt += 1
            if n_active <= 1 or (stop_first and n_abs > 0):
                done = True
                break
            if steps >= max_steps:
                break
    while nxt < n_cp:
        cp_out[nxt, :] = p
        nxt += 1
    return steps, n_abs, not done, sum_err


def trajectory_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


@dataclass
class Batch:
    """Raw per-trajectory results, indexed by trajectory order."""

    winner: np.ndarray
    first_absorbed: np.ndarray
    steps: np.ndarray
    truncated: np.ndarray
    sum_err: np.ndarray
    absorbed: np.ndarray
    absorbed_step: np.ndarray
    checkpoints: np.ndarray | None = None
    cp_coords: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _run_range(p0, params, lo, hi, stream, stop_first, checkpoints):
    n = p0.n
    factor = params.noise_factor(n)
    use_factor = factor is not None
    factor = np.eye(n) if factor is None else factor
    cps = np.asarray(checkpoints if checkpoints is not None else [], dtype=np.int64)
    m = hi - lo
    out = dict(
        steps=np.zeros(m, np.int64),
        n_abs=np.zeros(m, np.int64),
        truncated=np.zeros(m, bool),
        sum_err=np.zeros(m),
        absorbed=np.full((m, n), -1, np.int64),
        absorbed_step=np.full((m, n), -1, np.int64),
        final=np.zeros((m, n)),
        cp=np.zeros((m, len(cps), n)),
    )
    coords = np.array(p0.coords)
    act = np.array(p0.active)
    # final coordinates are captured as an extra checkpoint past max_steps
    cps_all = np.append(cps, np.int64(np.iinfo(np.int64).max))
    for r, idx in enumerate(range(lo, hi)):
        rng = trajectory_rng(params.seed, idx, stream)
        cp_out = np.zeros((len(cps_all), n))
        steps, n_abs, trunc, err = _walk(
            rng, coords, act, float(params.step_sigma), factor, use_factor,
            float(params.inhomogeneity), int(params.max_steps), bool(stop_first),
            cps_all, cp_out, out["absorbed"][r], out["absorbed_step"][r],
        )
        out["steps"][r] = steps
        out["n_abs"][r] = n_abs
        out["truncated"][r] = trunc
        out["sum_err"][r] = err
        out["final"][r] = cp_out[-1]
        out["cp"][r] = cp_out[:-1]
    return out


def run_batch(
    p0: SimplexPoint,
    params: WalkParams,
    n_traj: int,
    *,
    stream: int = 0,
    stop_first: bool = False,
    checkpoints=None,
    threads: int | None = None,
) -> Batch:
    """Run trajectories ``0 .. n_traj-1``, optionally across threads."""
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    threads = resolve_threads(threads)
    edges = np.linspace(0, n_traj, min(threads, n_traj) + 1).astype(int)
    jobs = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    if len(jobs) == 1:
        parts = [_run_range(p0, params, 0, n_traj, stream, stop_first, checkpoints)]
    else:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            futs = [pool.submit(_run_range, p0, params, a, b, stream, stop_first, checkpoints)
                    for a, b in jobs]
            parts = [f.result() for f in futs]
    cat = {k: np.concatenate([pt[k] for pt in parts]) for k in parts[0]}
    final = cat["final"]
    truncated = cat["truncated"]
    winner = np.where(truncated | (np.max(final, axis=1) != 1.0), -1, np.argmax(final, axis=1))
    if stop_first:
        winner = np.where(cat["n_abs"] == p0.n - 1, winner, -1)
    return Batch(
        winner=winner,
        first_absorbed=cat["absorbed"][:, 0],
        steps=cat["steps"],
        truncated=truncated,
        sum_err=cat["sum_err"],
        absorbed=cat["absorbed"],
        absorbed_step=cat["absorbed_step"],
        checkpoints=None if checkpoints is None else np.asarray(checkpoints, dtype=np.int64),
        cp_coords=cat["cp"] if checkpoints is not None else None,
        extra={"final": final},
    )


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("THREADS", "1") or 1)
    if threads < 1:
        raise ValueError("thread count must be positive")
    return threads


# --- public operations ----------------------------------------------------------

def step(point: SimplexPoint, params: WalkParams, rng: np.random.Generator) -> SimplexPoint:
    """One Euler step followed by absorption of any negative coordinates."""
    if point.n_active < 2:
        raise ValueError("the walk has already reached a vertex")
    n = point.n
    z = rng.standard_normal(n)
    factor = params.noise_factor(n)
    x = z if factor is None else factor @ z
    if params.inhomogeneity:
        x = x * (1.0 + params.inhomogeneity * point.coords)
    p = point.coords + params.step_sigma * project_increment(x, point.active)
    act = np.array(point.active)
    if np.any(p[act] < 0):
        _absorb_inplace(p, act)
    return SimplexPoint(p, act)


def run_trajectory(
    p0: SimplexPoint,
    params: WalkParams,
    trajectory_index: int,
    *,
    stream: int = 0,
    path_every: int | None = None,
) -> TrajectoryOutcome:
    """Walk until one channel holds all the weight, or ``max_steps`` runs out."""
    cps = None
    if path_every:
        cps = np.arange(0, params.max_steps + 1, path_every, dtype=np.int64)[:100_000]
    b = _run_range(p0, params, trajectory_index, trajectory_index + 1, stream, False, cps)
    steps = int(b["steps"][0])
    k = int(b["n_abs"][0])
    order = [(int(c), int(s)) for c, s in zip(b["absorbed"][0][:k], b["absorbed_step"][0][:k])]
    truncated = bool(b["truncated"][0])
    final = b["final"][0]
    winner = None if truncated else int(np.argmax(final))
    # channels inactive from the start are absorbed at step 0
    pre = [(int(j), 0) for j in np.flatnonzero(~p0.active)]
    samples = None
    if cps is not None:
        keep = cps <= steps
        samples = [SimplexPoint(c, c > 0) for c in b["cp"][0][keep]]
    return TrajectoryOutcome(winner, steps, pre + order, truncated, samples)


def _stats(hits: np.ndarray, n: int, valid: np.ndarray, steps: np.ndarray) -> HittingStats:
    counts = np.bincount(hits[valid], minlength=n).astype(np.int64)
    total = int(valid.sum())
    pi_hat = counts / total if total else np.full(n, np.nan)
    std_err = np.sqrt(pi_hat * (1.0 - pi_hat) / total) if total else np.full(n, np.nan)
    mean_steps = float(steps[valid].mean()) if total else float("nan")
    return HittingStats(total, counts, pi_hat, std_err, int((~valid).sum()), mean_steps)


def estimate_hitting(
    p0: SimplexPoint, params: WalkParams, n_traj: int, *, threads: int | None = None,
    stream: int = 0,
) -> HittingStats:
    """Vertex-hitting frequencies with binomial standard errors.

    Truncated trajectories are excluded from the counts and reported as
    ``n_truncated``.
    """
    b = run_batch(p0, params, n_traj, stream=stream, threads=threads)
    valid = b.winner >= 0
    return _stats(np.where(valid, b.winner, 0), p0.n, valid, b.steps)


def face_hitting_probability(
    p0: SimplexPoint, params: WalkParams, n_traj: int, *, threads: int | None = None,
    stream: int = 0,
) -> HittingStats:
    """Probability that each channel is the first one absorbed.

    Only the walk up to the first absorption is simulated.
    """
    if not p0.active.all():
        raise ValueError("face hitting needs every channel active at the start")
    b = run_batch(p0, params, n_traj, stream=stream, stop_first=True, threads=threads)
    valid = b.first_absorbed >= 0
    return _stats(np.where(valid, b.first_absorbed, 0), p0.n, valid, b.steps)


def hyperplane_basis(n: int) -> np.ndarray:
    """Orthonormal basis (columns) of ``{x : sum(x) = 0}`` in ``R^n``."""
    q, _ = np.linalg.qr(np.column_stack([np.ones(n), np.eye(n)[:, : n - 1]]))
    return q[:, 1:]


def sphere_points(center, radius: float, count: int, seed: int = 0) -> np.ndarray:
    """Points on the (n-2)-sphere of given radius around ``center`` in the hyperplane.

    Equally spaced on the circle for n = 3, the two endpoints for n = 2,
    seeded uniform directions otherwise.
    """
    center = np.asarray(center, dtype=float)
    n = len(center)
    basis = hyperplane_basis(n)
    if n == 2:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 3:
        ang = 2 * np.pi * np.arange(count) / count
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        g = np.random.default_rng(seed).standard_normal((count, n - 1))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    return center + radius * dirs @ basis.T


@dataclass(frozen=True)
class MeanValueResult:
    lhs: np.ndarray
    rhs: np.ndarray
    combined_std_err: np.ndarray
    lhs_std_err: np.ndarray
    rhs_std_err: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs) / self.combined_std_err

    def holds(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.lhs - self.rhs) <= k * self.combined_std_err))


def mean_value_check(
    p0: SimplexPoint, radius: float, params: WalkParams, n_traj: int, n_sphere: int,
    *, threads: int | None = None,
) -> MeanValueResult:
    """Compare first-face probabilities at ``p0`` with their sphere average."""
    pts = sphere_points(p0.coords, radius, n_sphere, seed=params.seed)
    # distance from the center to face k within the hyperplane
    n = p0.n
    face_dist = p0.coords * np.sqrt(n / (n - 1.0))
    if not p0.active.all() or radius >= face_dist.min():
        raise ValueError("sphere is not strictly inside the simplex")
    lhs = face_hitting_probability(p0, params, n_traj, threads=threads, stream=0)
    vals, errs = [], []
    for i, q in enumerate(pts):
        q = q / q.sum()
        s = face_hitting_probability(SimplexPoint(q, np.ones(n, bool)), params, n_traj,
                                     threads=threads, stream=i + 1)
        vals.append(s.pi_hat)
        errs.append(s.std_err)
    vals, errs = np.array(vals), np.array(errs)
    rhs = vals.mean(axis=0)
    rhs_err = np.sqrt(np.sum(errs ** 2, axis=0)) / len(pts)
    return MeanValueResult(lhs.pi_hat, rhs, np.hypot(lhs.std_err, rhs_err), lhs.std_err, rhs_err)


@dataclass(frozen=True)
class MartingaleResult:
    checkpoints: np.ndarray
    means: np.ndarray
    std_err: np.ndarray
    max_sum_err: float
    n_truncated: int


def martingale_check(
    p0: SimplexPoint, params: WalkParams, n_traj: int, checkpoints, *, threads: int | None = None,
) -> MartingaleResult:
    """Ensemble mean of ``p(t)`` at the given step counts.

    Finished trajectories contribute their frozen vertex coordinates.
    """
    cps = np.asarray(sorted(checkpoints), dtype=np.int64)
    if len(cps) and cps[-1] > params.max_steps:
        raise ValueError("checkpoints beyond max_steps")
    b = run_batch(p0, params, n_traj, checkpoints=cps, threads=threads)
    c = b.cp_coords
    # averaging deviations from p0 keeps a frozen walk's mean exactly at p0
    means = p0.coords + (c - p0.coords).mean(axis=0)
    se = c.std(axis=0, ddof=1) / np.sqrt(n_traj) if n_traj > 1 else np.zeros_like(means)
    return MartingaleResult(cps, means, se, float(b.sum_err.max()), int(b.truncated.sum()))
