"""Decohering split of a joint state, thermal matching of the environment,
the second-order master equation for the reduced density, and the channel
probability drift generated by the hidden density.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .hilbert import (
    DensityMatrix,
    Eigenframe,
    Kind,
    Operator,
    SpaceMismatch,
    SpaceTag,
    commutator,
    promote_e,
    promote_k,
    tensor,
    trace_env,
)

PROJECTOR_TOL = 1e-10
PROB_TOL = 1e-10
# beyond this, exp(-beta * span) cannot be represented even as a ratio of doubles
MAX_EXPONENT_SPAN = 2 * np.log(np.finfo(float).max)


class InvariantViolation(RuntimeError):
    """A numerical invariant that should hold by construction was broken."""

    def __init__(self, invariant: str, detail: str):
        super().__init__(f"{invariant}: {detail}")
        self.invariant = invariant


@dataclass(frozen=True)
class DecoheringSplit:
    rho_prime: Operator
    rho_hidden: Operator
    beta: float


@dataclass(frozen=True)
class SigmaState:
    sigma: Operator
    origin_time: float = 0.0


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Orthogonal projectors on the collective space resolving the identity."""

    projectors: tuple[Operator, ...]
    labels: tuple = field(default=None)

    def __post_init__(self):
        projs = tuple(self.projectors)
        if not projs:
            raise ValueError("a channel set needs at least one projector")
        space = projs[0].space
        if space.kind is not Kind.COLLECTIVE:
            raise SpaceMismatch("channel projectors act on the collective space")
        total = np.zeros((space.dim, space.dim), dtype=complex)
        for j, p in enumerate(projs):
            projs[0]._check(p)
            if not p.is_hermitian(PROJECTOR_TOL):
                raise ValueError(f"projector {j} is not Hermitian")
            if np.max(np.abs(p.mat @ p.mat - p.mat)) > PROJECTOR_TOL:
                raise ValueError(f"projector {j} is not idempotent")
            for k in range(j):
                if np.max(np.abs(p.mat @ projs[k].mat)) > PROJECTOR_TOL:
                    raise ValueError(f"projectors {k} and {j} are not orthogonal")
            total += p.mat
        if np.max(np.abs(total - np.eye(space.dim))) > PROJECTOR_TOL:
            raise ValueError("projectors do not resolve the identity")
        labels = tuple(range(len(projs))) if self.labels is None else tuple(self.labels)
        if len(labels) != len(projs):
            raise ValueError("one label per projector")
        object.__setattr__(self, "projectors", projs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.projectors)

    @property
    def space(self) -> SpaceTag:
        return self.projectors[0].space

    @classmethod
    def from_blocks(cls, basis: np.ndarray, blocks: Sequence[Sequence[int]], labels=None):
        """Projectors onto groups of columns of a unitary ``basis``."""
        basis = np.asarray(basis, dtype=complex)
        projs = []
        for block in blocks:
            v = basis[:, list(block)]
            projs.append(Operator.on_k(v @ v.conj().T))
        return cls(tuple(projs), labels)


# --- thermal environment -------------------------------------------------

def _spectrum(E: Operator) -> np.ndarray:
    if E.space.kind is not Kind.ENVIRONMENT:
        raise SpaceMismatch("E must act on the environment space")
    if not E.is_hermitian(1e-10):
        raise ValueError("E must be Hermitian")
    return np.linalg.eigh(0.5 * (E.mat + E.mat.conj().T))


def _log_weights(w: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    if not np.isfinite(beta):
        raise ValueError("beta must be finite")
    span = float(w[-1] - w[0])
    if abs(beta) * span > MAX_EXPONENT_SPAN:
        raise ValueError(
            f"beta * spectral span = {abs(beta) * span:.3g} overflows double precision; "
            "rescale the environment energies"
        )
    logw = -beta * w
    log_z = float(logsumexp(logw))
    return logw - log_z, log_z


def gibbs(E: Operator, beta: float) -> tuple[DensityMatrix, float]:
    """Thermal state ``exp(-beta E)/Z`` and ``log Z``."""
    w, v = _spectrum(E)
    logp, log_z = _log_weights(w, beta)
    p = np.exp(logp)
    p /= p.sum()
    return DensityMatrix(E.space, (v * p) @ v.conj().T), log_z


def mean_energy(w: np.ndarray, beta: float) -> float:
    logp, _ = _log_weights(w, beta)
    return float(np.exp(logp) @ w)


def beta_for_energy(E: Operator, target: float, tol: float = 1e-10) -> float:
    """Inverse temperature whose Gibbs state has mean energy ``target``.

    Bisection on the decreasing map beta -> <E>_beta; the bracket starts at
    [-1, 1] and doubles until it straddles the target.  Once within ``tol``
    a Newton step (slope ``-Var_beta(E)``) removes the remaining bisection
    error, so Gibbs states built from the result agree to rounding.
    """
    w, _ = _spectrum(E)
    lo_e, hi_e = float(w[0]), float(w[-1])
    if hi_e - lo_e <= 1e-14 * max(1.0, abs(hi_e)):
        raise ValueError("E has a degenerate spectrum; no beta can be matched")
    if not lo_e < target < hi_e:
        raise ValueError(
            f"target energy {target!r} outside the open spectral interval ({lo_e}, {hi_e})"
        )
    # work relative to the spectral midpoint for conditioning
    mid_e = 0.5 * (lo_e + hi_e)
    w = w - mid_e
    target = target - mid_e

    lo, hi = -1.0, 1.0
    while mean_energy(w, lo) < target:
        lo *= 2.0
    while mean_energy(w, hi) > target:
        hi *= 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        m = mean_energy(w, mid)
        if abs(m - target) <= tol:
            return _newton_polish(w, target, mid)
        if m > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    mid = 0.5 * (lo + hi)
    if abs(mean_energy(w, mid) - target) > tol:
        raise InvariantViolation("beta matching", f"bisection stalled at beta={mid}")
    return mid


def _newton_polish(w: np.ndarray, target: float, beta: float) -> float:
    for _ in range(2):
        logp, _ = _log_weights(w, beta)
        p = np.exp(logp)
        m = float(p @ w)
        var = float(p @ (w - m) ** 2)
        if var <= 0.0:
            break
        nxt = beta + (m - target) / var
        if not abs(mean_energy(w, nxt) - target) < abs(m - target):
            break
        beta = nxt
    return beta


def environment_energy(E: Operator, rho: Operator) -> float:
    return float(np.real(np.trace(promote_e(E, rho.space.dim_k).mat @ rho.mat)))


def solve_beta(E: Operator, rho: Operator, tol: float = 1e-10) -> float:
    """Match ``d log Z / d beta = -Tr(E rho)`` for the environment energy."""
    if rho.space.kind is not Kind.JOINT:
        raise SpaceMismatch("solve_beta needs a joint state")
    return beta_for_energy(E, environment_energy(E, rho), tol)


# --- split, coupling subtraction, purity --------------------------------

def subtract_collective(C: Operator, rhoE: Operator) -> Operator:
    """Remove the collective mean-field part so ``tr_E(rhoE C) = 0``."""
    if C.space.kind is not Kind.JOINT:
        raise SpaceMismatch("coupling must act on the joint space")
    if rhoE.space != SpaceTag.environment(C.space.dim_e):
        raise SpaceMismatch("rhoE does not match the coupling's environment factor")
    mean_field = trace_env(promote_e(rhoE, C.space.dim_k) @ C)
    out = C - promote_k(mean_field, C.space.dim_e)
    return Operator(C.space, 0.5 * (out.mat + out.mat.conj().T))


def decohering_density(rhoK: Operator, rhoE: Operator) -> Operator:
    return tensor(rhoK, rhoE)


def split(rho: Operator, E: Operator, beta: float | None = None) -> DecoheringSplit:
    """``rho = rho' + rho''`` with ``rho' = tr_E(rho) ⊗ gibbs(E, beta)``.

    ``beta`` is matched to the environment energy of ``rho`` unless given.
    """
    if rho.space.kind is not Kind.JOINT:
        raise SpaceMismatch("split needs a joint state")
    if beta is None:
        beta = solve_beta(E, rho)
    rhoE, _ = gibbs(E, beta)
    rho_prime = tensor(trace_env(rho), rhoE)
    return DecoheringSplit(rho_prime, rho - rho_prime, beta)


@dataclass(frozen=True)
class PurityReport:
    tr_rho2: float
    tr_rhoprime2: float
    tr_rhohidden2: float
    cross_term: float

    @property
    def identity_residual(self) -> float:
        """``|Tr(rho''^2) - (1 - Tr(rho'^2))|``, equal to ``2|cross_term|`` for pure states."""
        return abs(self.tr_rhohidden2 - (1.0 - self.tr_rhoprime2))


def _tr_prod(a: np.ndarray, b: np.ndarray) -> float:
    # Tr(ab) for Hermitian a, b
    return float(np.real(np.sum(a * b.T)))


def purity_report(s: DecoheringSplit, rho: Operator) -> PurityReport:
    p, h = s.rho_prime.mat, s.rho_hidden.mat
    return PurityReport(
        tr_rho2=_tr_prod(rho.mat, rho.mat),
        tr_rhoprime2=_tr_prod(p, p),
        tr_rhohidden2=_tr_prod(h, h),
        cross_term=_tr_prod(h, p),
    )


# --- free evolution of the hidden density ---------------------------------

def free_generator(K: Operator, E: Operator) -> Operator:
    """``K ⊗ I + I ⊗ E``."""
    return promote_k(K, E.dim) + promote_e(E, K.dim)


def sigma_at(rho_hidden_0: Operator, K: Operator, E: Operator, t: float) -> SigmaState:
    """``U(t) rho''(0) U(t)^-1`` with ``U(t) = exp(-i(K+E)t)``."""
    frame = Eigenframe(free_generator(K, E))
    return SigmaState(frame.evolve(rho_hidden_0, t), t)


def rho_hidden_formal(
    times: Sequence[float],
    rho_prime_history: Sequence[Operator],
    C: Operator,
    K: Operator,
    E: Operator,
    t: float,
    sigma0: Operator,
) -> Operator:
    """Memory-integral form of the hidden density at time ``t``.

    ``-i ∫_0^t U(t-s)[C, rho'(s)]U(t-s)^-1 ds + U(t) sigma0 U(t)^-1`` with the
    integral taken by the composite trapezoid rule on ``times``, which must be a
    uniform grid starting at 0 and containing ``t`` as a node.
    """
    times = np.asarray(times, dtype=float)
    if len(times) != len(rho_prime_history):
        raise ValueError("one history sample per grid time")
    if len(times) == 0 or abs(times[0]) > 1e-12:
        raise ValueError("history grid must start at t = 0")
    if len(times) > 2:
        steps = np.diff(times)
        if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
            raise ValueError("history grid must be uniform")
    scale = max(1.0, abs(t))
    hits = np.nonzero(np.abs(times - t) <= 1e-9 * scale)[0]
    if t < 0 or len(hits) == 0:
        raise ValueError(f"grid [{times[0]}, {times[-1]}] does not contain t = {t} as a node")
    n = int(hits[0])

    frame = Eigenframe(free_generator(K, E))
    acc = np.zeros((C.dim, C.dim), dtype=complex)
    if n > 0:
        h = times[1] - times[0]
        for i in range(n + 1):
            w = 0.5 * h if i in (0, n) else h
            src = frame.to_frame(-1j * commutator(C, rho_prime_history[i]).mat)
            acc += w * frame.phases(t - times[i]) * src
    memory = frame.from_frame(acc)
    out = memory + frame.evolve(sigma0, t).mat
    return Operator(C.space, out)


# --- master equation ------------------------------------------------------

def partial_trace_env_mat(m: np.ndarray, dk: int, de: int) -> np.ndarray:
    return np.einsum("iaja->ij", m.reshape(dk, de, dk, de))


def master_rhs(rhoK: Operator, K: Operator, C: Operator, rho_hidden: Operator) -> Operator:
    """``-i[K, rho(K)] - i tr_E([C, rho''])``."""
    K._check(rhoK)
    C._check(rho_hidden)
    if C.space.dim_k != K.dim:
        raise SpaceMismatch("coupling and K disagree on the collective dimension")
    out = -1j * commutator(K, rhoK).mat - 1j * trace_env(commutator(C, rho_hidden)).mat
    return Operator(K.space, out)


@dataclass
class MasterRun:
    times: np.ndarray
    rhoK: list
    rho_hidden: list


def integrate_master(
    K: Operator,
    E: Operator,
    C: Operator,
    rhoK0: Operator,
    beta: float,
    times: Sequence[float],
    sigma0: Operator | None = None,
) -> MasterRun:
    """Integrate the reduced dynamics with a memory-integral hidden density.

    Classical RK4 on ``rho(K)`` with ``rho'' = memory + sigma``; the memory
    integral is the composite trapezoid over the stored ``rho'`` history
    (updated recursively, which is algebraically the same sum as
    ``rho_hidden_formal``), with a partial last panel at the RK stages.
    ``beta`` is held fixed for the whole run.
    """
    times = np.asarray(times, dtype=float)
    h = float(times[1] - times[0])
    dk, de = K.dim, E.dim
    rhoE, _ = gibbs(E, beta)
    frame = Eigenframe(free_generator(K, E))
    to_f, from_f = frame.to_frame, frame.from_frame
    Cf = to_f(C.mat)
    Ef_rhoE = rhoE.mat
    Km = K.mat
    sigma_f = np.zeros((dk * de, dk * de), dtype=complex) if sigma0 is None else to_f(sigma0.mat)

    def source(rk: np.ndarray) -> np.ndarray:
        # -i[C, rho'] in the eigenframe
        rp = to_f(np.kron(rk, Ef_rhoE))
        return -1j * (Cf @ rp - rp @ Cf)

    def rhs(rk: np.ndarray, hidden_f: np.ndarray) -> np.ndarray:
        comm = Cf @ hidden_f - hidden_f @ Cf
        return -1j * (Km @ rk - rk @ Km) - 1j * partial_trace_env_mat(from_f(comm), dk, de)

    ph_half, ph_full = frame.phases(0.5 * h), frame.phases(h)
    rk = np.array(rhoK0.mat, dtype=complex)
    memory = np.zeros_like(sigma_f)
    src = source(rk)
    out_k, out_h = [rk.copy()], [from_f(memory + sigma_f)]
    for n in range(len(times) - 1):
        t = times[n]
        sig_n = frame.phases(t) * sigma_f
        sig_half = frame.phases(t + 0.5 * h) * sigma_f
        sig_full = frame.phases(t + h) * sigma_f
        carried_half = ph_half * memory + 0.25 * h * ph_half * src
        carried_full = ph_full * memory + 0.5 * h * ph_full * src

        k1 = rhs(rk, memory + sig_n)
        y = rk + 0.5 * h * k1
        k2 = rhs(y, carried_half + 0.25 * h * source(y) + sig_half)
        y = rk + 0.5 * h * k2
        k3 = rhs(y, carried_half + 0.25 * h * source(y) + sig_half)
        y = rk + h * k3
        k4 = rhs(y, carried_full + 0.5 * h * source(y) + sig_full)
        rk = rk + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rk = 0.5 * (rk + rk.conj().T)

        src = source(rk)
        memory = carried_full + 0.5 * h * src
        out_k.append(rk.copy())
        out_h.append(from_f(memory + sig_full))

    return MasterRun(
        times,
        [Operator(K.space, m) for m in out_k],
        [Operator(C.space, m) for m in out_h],
    )


# --- channels and drift ---------------------------------------------------

def channel_probabilities(rhoK: Operator, channels: ChannelSet) -> np.ndarray:
    """``p_j = Tr(Π_j rho(K) Π_j)``, clamped to [0, 1] within ``PROB_TOL``."""
    p = np.array([np.real(np.trace(P.mat @ rhoK.mat @ P.mat)) for P in channels.projectors])
    if np.any(p < -PROB_TOL) or np.any(p > 1 + PROB_TOL):
        raise InvariantViolation("channel probability range", f"p = {p}")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise InvariantViolation("channel probability sum", f"sum = {p.sum():.15g}")
    return np.clip(p, 0.0, 1.0)


def drift(channels: ChannelSet, C: Operator, sigma: SigmaState | Operator) -> np.ndarray:
    """Rate of change of the channel probabilities driven by the hidden density.

    ``dp_j/dt = -i Tr((Π_j ⊗ I) [C, sigma])``.  The factor ``-i`` comes from
    the ``-i tr_E([C, rho''])`` term of the master equation; without it the
    trace of a projector against the anti-Hermitian commutator is imaginary.
    """
    s = sigma.sigma if isinstance(sigma, SigmaState) else sigma
    C._check(s)
    if channels.space.dim != C.space.dim_k:
        raise SpaceMismatch("channels and coupling disagree on the collective dimension")
    comm = commutator(C, s).mat
    de = C.space.dim_e
    vals = -1j * np.array(
        [np.trace(promote_k(P, de).mat @ comm) for P in channels.projectors], dtype=complex
    )
    if np.max(np.abs(vals.imag), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(vals))):
        raise InvariantViolation("real drift", f"imaginary residue {np.max(np.abs(vals.imag)):.3g}")
    return vals.real
