"""Concrete measurement scenarios on truncated Hilbert spaces.

* pointer-bath: a pointer on a finite site lattice coupled through its
  position to a random environment operator; the coupling commutes with
  the position projectors.
* pointer-ruler-phonon: pointer and ruler oscillators exchanging a phonon
  through ``A = X - X' - (i/omega)(P/m - P'/m')``; the coupling does not
  commute with the pointer-position projectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoherence import ChannelSet, gibbs, subtract_collective
from .hilbert import DensityMatrix, Operator, SpaceTag, tensor, trace_env


@dataclass(frozen=True)
class Scenario:
    K: Operator
    E: Operator
    C: Operator
    channels: ChannelSet
    rho0: DensityMatrix
    rho_hidden0: Operator
    beta0: float
    position: Operator | None = None

    @property
    def space(self) -> SpaceTag:
        return self.C.space

    def hamiltonian(self) -> Operator:
        dk, de = self.K.dim, self.E.dim
        H0 = np.kron(self.K.mat, np.eye(de)) + np.kron(np.eye(dk), self.E.mat)
        return Operator(self.space, H0 + self.C.mat)


# --- oscillator building blocks -------------------------------------------

def ladder(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Truncated annihilation/creation pair, ``a|k> = sqrt(k)|k-1>``.

    The truncation spoils ``[a, a†] = I`` in the last diagonal entry,
    which equals ``1 - n``.
    """
    if n < 2:
        raise ValueError(f"truncation must be at least 2, got {n}")
    a = np.diag(np.sqrt(np.arange(1, n, dtype=float)), k=1).astype(complex)
    return a, a.conj().T


def position_momentum(n: int, mass: float, omega_ref: float) -> tuple[np.ndarray, np.ndarray]:
    """Quadratures ``X = (a + a†)/sqrt(2 m w)``, ``P = i sqrt(m w / 2)(a† - a)``.

    For ``n = 2``, ``m = w = 1`` this gives ``X = σx/√2`` and ``P = σy/√2``
    with the usual ``σy = [[0, -i], [i, 0]]``.
    """
    if mass <= 0 or omega_ref <= 0:
        raise ValueError("mass and reference frequency must be positive")
    a, ad = ladder(n)
    X = (a + ad) / np.sqrt(2.0 * mass * omega_ref)
    P = 1j * np.sqrt(mass * omega_ref / 2.0) * (ad - a)
    return X, P


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    """GUE draw with unit-variance off-diagonal entries."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    return (z + z.conj().T) / 2.0


def seeded_hidden_density(space: SpaceTag, rank: int, scale: float, seed: int) -> Operator:
    """Traceless Hermitian operator with ``rank`` mixed-sign eigenvalues.

    Eigenvalues sum to zero and have Frobenius norm ``scale``; eigenvectors
    are the first ``rank`` columns of a Haar unitary.
    """
    if rank < 2:
        raise ValueError("rank must be at least 2 to be traceless and nonzero")
    if rank > space.dim:
        raise ValueError(f"rank {rank} exceeds dimension {space.dim}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    if rank == 2:
        vals = np.array([1.0, -1.0])
    else:
        vals = rng.standard_normal(rank)
        vals -= vals.mean()
    vals *= scale / np.linalg.norm(vals)
    v = haar_unitary(space.dim, rng)[:, :rank]
    m = (v * vals) @ v.conj().T
    return Operator(space, 0.5 * (m + m.conj().T))


def contiguous_blocks(n: int, n_groups: int) -> list[list[int]]:
    if not 1 <= n_groups <= n:
        raise ValueError(f"cannot split {n} levels into {n_groups} groups")
    return [list(b) for b in np.array_split(np.arange(n), n_groups)]


def check_partition(blocks, n: int) -> str | None:
    """Reason the blocks fail to partition ``range(n)``, or None."""
    flat = [int(i) for b in blocks for i in b]
    if any(len(b) == 0 for b in blocks):
        return "empty channel block"
    if sorted(flat) != list(range(n)):
        return f"channel blocks {blocks} do not partition sites 0..{n - 1}: resolution of identity fails"
    return None


# --- pointer-bath -----------------------------------------------------------

@dataclass(frozen=True)
class PointerBathParams:
    n_sites: int = 2
    n_env: int = 8
    lam: float = 0.2
    k_energies: tuple = ()
    e_energies: tuple = ()
    seed: int = 0
    beta0: float = 0.1
    channel_blocks: tuple | None = None
    amplitudes: tuple | None = None
    hidden_rank: int = 0
    hidden_scale: float = 0.0

    def __post_init__(self):
        if self.n_sites < 2 or self.n_env < 2:
            raise ValueError("n_sites and n_env must be at least 2")
        if self.lam < 0:
            raise ValueError("coupling strength must be non-negative")
        if self.k_energies and len(self.k_energies) != self.n_sites:
            raise ValueError("one collective energy per site")
        if self.e_energies and len(self.e_energies) != self.n_env:
            raise ValueError("one environment energy per level")

    def resolved_k_energies(self) -> np.ndarray:
        if self.k_energies:
            return np.asarray(self.k_energies, dtype=float)
        return np.zeros(self.n_sites)

    def resolved_e_energies(self) -> np.ndarray:
        if self.e_energies:
            return np.asarray(self.e_energies, dtype=float)
        return np.linspace(0.0, 2.0, self.n_env)


def build_pointer_bath(params: PointerBathParams) -> Scenario:
    ns, ne = params.n_sites, params.n_env
    rng = np.random.default_rng(params.seed)
    X = Operator.on_k(np.diag(np.arange(ns, dtype=float)))
    K = Operator.on_k(np.diag(params.resolved_k_energies()))
    E = Operator.on_e(np.diag(params.resolved_e_energies()))
    B = Operator.on_e(random_hermitian(ne, rng))
    rhoE, _ = gibbs(E, params.beta0)
    C = subtract_collective(params.lam * tensor(X, B), rhoE)

    blocks = params.channel_blocks or [[i] for i in range(ns)]
    reason = check_partition(blocks, ns)
    if reason:
        raise ValueError(reason)
    channels = ChannelSet.from_blocks(np.eye(ns), blocks)

    amps = np.ones(ns) if params.amplitudes is None else np.asarray(params.amplitudes, complex)
    rhoK = DensityMatrix.pure(amps, SpaceTag.collective(ns))
    rho0 = DensityMatrix.from_operator(tensor(rhoK, rhoE))
    hidden = _hidden(C.space, params.hidden_rank, params.hidden_scale, params.seed)
    return Scenario(K, E, C, channels, rho0, hidden, params.beta0, position=X)


def _hidden(space: SpaceTag, rank: int, scale: float, seed: int) -> Operator:
    if rank == 0 or scale == 0:
        return Operator.zeros(space)
    return seeded_hidden_density(space, rank, scale, seed + 1)


# --- pointer-ruler-phonon ---------------------------------------------------

@dataclass(frozen=True)
class PointerRulerParams:
    m: float = 1.0
    m_prime: float = 2.0
    omega: float = 1.0
    lam: complex = 0.1
    n_fock_pointer: int = 4
    n_fock_ruler: int = 3
    n_fock_phonon: int = 3
    omega_ref: float | None = None
    n_channels: int = 2
    beta0: float = 1.0
    extra_mode_omegas: tuple = field(default=())
    hidden_rank: int = 0
    hidden_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("phonon frequency must be positive")
        if self.m <= 0 or self.m_prime <= 0:
            raise ValueError("masses must be positive")
        if min(self.n_fock_pointer, self.n_fock_ruler, self.n_fock_phonon) < 2:
            raise ValueError("Fock truncations must be at least 2")
        if any(w <= 0 for w in self.extra_mode_omegas):
            raise ValueError("phonon frequencies must be positive")
        if self.omega_ref is not None and self.omega_ref <= 0:
            raise ValueError("reference frequency must be positive")


def exchange_operator(params: PointerRulerParams, omega: float | None = None) -> np.ndarray:
    """``A = X - X' - (i/omega)(P/m - P'/m')`` on pointer ⊗ ruler."""
    w = params.omega if omega is None else omega
    w_ref = params.omega_ref or params.omega
    X, P = position_momentum(params.n_fock_pointer, params.m, w_ref)
    Xr, Pr = position_momentum(params.n_fock_ruler, params.m_prime, w_ref)
    Ip, Ir = np.eye(params.n_fock_pointer), np.eye(params.n_fock_ruler)
    return (
        np.kron(X, Ir)
        - np.kron(Ip, Xr)
        - (1j / w) * (np.kron(P, Ir) / params.m - np.kron(Ip, Pr) / params.m_prime)
    )


def _kron_all(mats):
    out = np.eye(1)
    for m in mats:
        out = np.kron(out, m)
    return out


def pointer_channels(params: PointerRulerParams) -> tuple[ChannelSet, np.ndarray]:
    """Coarse-grained pointer-position projectors, ``⊗ I`` on the ruler."""
    w_ref = params.omega_ref or params.omega
    X, _ = position_momentum(params.n_fock_pointer, params.m, w_ref)
    xs, vecs = np.linalg.eigh(X)
    blocks = contiguous_blocks(params.n_fock_pointer, params.n_channels)
    Ir = np.eye(params.n_fock_ruler)
    projs = []
    for b in blocks:
        v = vecs[:, b]
        projs.append(Operator.on_k(np.kron(v @ v.conj().T, Ir)))
    return ChannelSet(tuple(projs)), np.kron(X, Ir)


def build_pointer_ruler_phonon(params: PointerRulerParams) -> Scenario:
    npt, nr, nph = params.n_fock_pointer, params.n_fock_ruler, params.n_fock_phonon
    w_ref = params.omega_ref or params.omega
    a_p, _ = ladder(npt)
    a_r, _ = ladder(nr)
    K = Operator.on_k(
        w_ref * (np.kron(a_p.conj().T @ a_p, np.eye(nr)) + np.kron(np.eye(npt), a_r.conj().T @ a_r))
    )

    omegas = (params.omega,) + tuple(params.extra_mode_omegas)
    b, bd = ladder(nph)
    num = bd @ b
    Iph = np.eye(nph)
    E_mat = np.zeros((nph ** len(omegas),) * 2, dtype=complex)
    C_mat = np.zeros((npt * nr * nph ** len(omegas),) * 2, dtype=complex)
    lam = complex(params.lam)
    for i, w in enumerate(omegas):
        a_i = _kron_all([b if j == i else Iph for j in range(len(omegas))])
        E_mat += w * _kron_all([num if j == i else Iph for j in range(len(omegas))])
        A = exchange_operator(params, w)
        C_mat += lam * np.kron(A.conj().T, a_i) + np.conj(lam) * np.kron(A, a_i.conj().T)
    E = Operator.on_e(E_mat)
    rhoE, _ = gibbs(E, params.beta0)
    C = subtract_collective(Operator.on_joint(C_mat, npt * nr, E.dim), rhoE)

    channels, X = pointer_channels(params)
    psi = np.zeros(npt * nr)
    psi[0] = 1.0
    rhoK = DensityMatrix.pure(psi, SpaceTag.collective(npt * nr))
    rho0 = DensityMatrix.from_operator(tensor(rhoK, rhoE))
    hidden = _hidden(C.space, params.hidden_rank, params.hidden_scale, params.seed)
    return Scenario(K, E, C, channels, rho0, hidden, params.beta0, position=Operator.on_k(X))


def build_combined(
    params: PointerRulerParams, bath_lam: float, n_bath: int = 2, seed: int = 0
) -> Scenario:
    """Pointer-ruler-phonon plus a position coupling to an extra bath factor.

    Environment = phonon(s) ⊗ bath.  No statement is made about a preferred
    collective basis.
    """
    base = build_pointer_ruler_phonon(params)
    rng = np.random.default_rng(seed)
    Eb = np.diag(np.linspace(0.0, 1.0, n_bath))
    B = random_hermitian(n_bath, rng)
    de_ph = base.E.dim
    E = Operator.on_e(np.kron(base.E.mat, np.eye(n_bath)) + np.kron(np.eye(de_ph), Eb))
    rhoE, _ = gibbs(E, params.beta0)
    # reorder base coupling from K ⊗ phonon to K ⊗ (phonon ⊗ bath)
    C_ruler = np.kron(base.C.mat, np.eye(n_bath))
    C_bath = bath_lam * np.kron(base.position.mat, np.kron(np.eye(de_ph), B))
    C = subtract_collective(Operator.on_joint(C_ruler + C_bath, base.K.dim, E.dim), rhoE)
    rho0 = DensityMatrix.from_operator(tensor(trace_env(base.rho0), rhoE))
    return Scenario(base.K, E, C, base.channels, rho0, Operator.zeros(C.space), params.beta0,
                    position=base.position)



# --- scenario diagnostics -----------------------------------------------------

def reduced_series(sc: Scenario, times) -> list[Operator]:
    """Exact ``tr_E rho(t)`` under the full Hamiltonian."""
    from .hilbert import Eigenframe

    frame = Eigenframe(sc.hamiltonian())
    return [trace_env(frame.evolve(sc.rho0, t)) for t in times]


def cross_block_norm(rhoK: Operator, channels: ChannelSet, j: int = 0, k: int = 1) -> float:
    """``max |Π_j rho(K) Π_k|``."""
    Pj, Pk = channels.projectors[j].mat, channels.projectors[k].mat
    return float(np.max(np.abs(Pj @ rhoK.mat @ Pk)))


def coherence_curve(sc: Scenario, times, j: int = 0, k: int = 1) -> np.ndarray:
    return np.array([cross_block_norm(r, sc.channels, j, k) for r in reduced_series(sc, times)])


def decoherence_time(sc: Scenario, horizon: float, n: int = 2001, level: float = np.exp(-1)):
    """First time the cross-channel block falls to ``level`` of its initial value."""
    ts = np.linspace(0.0, horizon, n)
    c = coherence_curve(sc, ts)
    below = np.nonzero(c <= level * c[0])[0]
    return float(ts[below[0]]) if len(below) else None


def plateau_window(sc: Scenario, horizon: float, n: int = 3001) -> float:
    """Four times the time taken to fall halfway to the late-time plateau.

    Finite environments do not decohere completely; the plateau is the mean
    cross-block norm over the second half of ``[0, horizon]``.
    """
    ts = np.linspace(0.0, horizon, n)
    c = coherence_curve(sc, ts)
    plateau = c[n // 2:].mean()
    idx = int(np.argmax(c <= 0.5 * (c[0] + plateau)))
    return 4.0 * float(ts[idx])
