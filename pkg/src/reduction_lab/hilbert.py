"""Dense linear algebra on a collective (K) space, an environment (E) space
and their joint product space.

Joint operators are stored with the collective factor first, so the joint
basis index is ``k * dim_e + e``.  Natural units, hbar = 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

HERMITIAN_TOL = 1e-12
GENERATOR_TOL = 1e-10
PSD_TOL = 1e-10
TRACE_TOL = 1e-12


class Kind(str, Enum):
    COLLECTIVE = "collective"
    ENVIRONMENT = "environment"
    JOINT = "joint"


class SpaceMismatch(ValueError):
    """Operands live on incompatible spaces."""


@dataclass(frozen=True)
class SpaceTag:
    """Which space an operator acts on.

    Single-factor tags carry 1 for the absent factor, so ``dim`` is always
    ``dim_k * dim_e``.
    """

    kind: Kind
    dim_k: int
    dim_e: int

    def __post_init__(self):
        if self.dim_k < 1 or self.dim_e < 1:
            raise ValueError(f"dimensions must be positive, got {self.dim_k}, {self.dim_e}")
        if self.kind is Kind.COLLECTIVE and self.dim_e != 1:
            raise ValueError("collective tag must have dim_e = 1")
        if self.kind is Kind.ENVIRONMENT and self.dim_k != 1:
            raise ValueError("environment tag must have dim_k = 1")

    @property
    def dim(self) -> int:
        return self.dim_k * self.dim_e

    @classmethod
    def collective(cls, dim_k: int) -> "SpaceTag":
        return cls(Kind.COLLECTIVE, dim_k, 1)

    @classmethod
    def environment(cls, dim_e: int) -> "SpaceTag":
        return cls(Kind.ENVIRONMENT, 1, dim_e)

    @classmethod
    def joint(cls, dim_k: int, dim_e: int) -> "SpaceTag":
        return cls(Kind.JOINT, dim_k, dim_e)


@dataclass(frozen=True, eq=False)
class Operator:
    """A dense complex matrix tagged with the space it acts on."""

    space: SpaceTag
    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator matrix must be square, got shape {m.shape}")
        if m.shape[0] != self.space.dim:
            raise SpaceMismatch(
                f"matrix of size {m.shape[0]} does not match {self.space.kind.value} "
                f"space of dimension {self.space.dim}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    # constructors
    @classmethod
    def on_k(cls, mat) -> "Operator":
        mat = np.asarray(mat)
        return cls(SpaceTag.collective(mat.shape[0]), mat)

    @classmethod
    def on_e(cls, mat) -> "Operator":
        mat = np.asarray(mat)
        return cls(SpaceTag.environment(mat.shape[0]), mat)

    @classmethod
    def on_joint(cls, mat, dim_k: int, dim_e: int) -> "Operator":
        return cls(SpaceTag.joint(dim_k, dim_e), mat)

    @classmethod
    def identity(cls, space: SpaceTag) -> "Operator":
        return cls(space, np.eye(space.dim))

    @classmethod
    def zeros(cls, space: SpaceTag) -> "Operator":
        return cls(space, np.zeros((space.dim, space.dim)))

    @property
    def dim(self) -> int:
        return self.space.dim

    def _check(self, other: "Operator") -> None:
        if not isinstance(other, Operator):
            raise TypeError(f"expected Operator, got {type(other).__name__}")
        if other.space != self.space:
            raise SpaceMismatch(f"{self.space} vs {other.space}")

    def _new(self, mat) -> "Operator":
        return Operator(self.space, mat)

    def __add__(self, other):
        self._check(other)
        return self._new(self.mat + other.mat)

    def __sub__(self, other):
        self._check(other)
        return self._new(self.mat - other.mat)

    def __matmul__(self, other):
        self._check(other)
        return self._new(self.mat @ other.mat)

    def __mul__(self, scalar):
        if isinstance(scalar, Operator):
            raise TypeError("use @ for operator products")
        return self._new(self.mat * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._new(self.mat / scalar)

    def __neg__(self):
        return self._new(-self.mat)

    def dag(self) -> "Operator":
        return self._new(self.mat.conj().T)

    def tr(self) -> complex:
        return complex(np.trace(self.mat))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.mat - self.mat.conj().T), initial=0.0))

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.hermiticity_error() <= tol

    def allclose(self, other: "Operator", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.max(np.abs(self.mat - other.mat), initial=0.0) <= atol)

    def __repr__(self):
        return f"Operator({self.space.kind.value}, dim={self.dim})"


class DensityMatrix(Operator):
    """Hermitian, unit-trace, positive semidefinite operator.

    Hermiticity defects up to ``HERMITIAN_TOL`` are symmetrized away; larger
    defects, trace errors or negative eigenvalues below ``-PSD_TOL`` raise.
    """

    def __post_init__(self):
        super().__post_init__()
        herm = self.hermiticity_error()
        if herm > HERMITIAN_TOL:
            raise ValueError(f"density matrix not Hermitian (defect {herm:.3g})")
        m = 0.5 * (self.mat + self.mat.conj().T)
        tr = np.trace(m)
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"density matrix trace {tr.real:.15g} is not 1")
        lo = np.linalg.eigvalsh(m)[0]
        if lo < -PSD_TOL:
            raise ValueError(f"density matrix has negative eigenvalue {lo:.3g}")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @classmethod
    def from_operator(cls, op: Operator) -> "DensityMatrix":
        if isinstance(op, DensityMatrix):
            return op
        return cls(op.space, op.mat)

    @classmethod
    def pure(cls, psi, space: SpaceTag) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(space, np.outer(psi, psi.conj()))

    def _new(self, mat) -> Operator:
        # arithmetic on a density matrix yields a plain operator
        return Operator(self.space, mat)

    def purity(self) -> float:
        return float(np.real(np.vdot(self.mat, self.mat)))


def tensor(a: Operator, b: Operator) -> Operator:
    """Kronecker product of a collective and an environment operator."""
    if a.space.kind is not Kind.COLLECTIVE:
        raise SpaceMismatch(f"left factor must be collective, got {a.space.kind.value}")
    if b.space.kind is not Kind.ENVIRONMENT:
        raise SpaceMismatch(f"right factor must be environment, got {b.space.kind.value}")
    return Operator(SpaceTag.joint(a.dim, b.dim), np.kron(a.mat, b.mat))


def _as_blocks(m: Operator) -> np.ndarray:
    if m.space.kind is not Kind.JOINT:
        raise SpaceMismatch(f"partial trace needs a joint operator, got {m.space.kind.value}")
    dk, de = m.space.dim_k, m.space.dim_e
    return m.mat.reshape(dk, de, dk, de)


def trace_env(m: Operator) -> Operator:
    """Partial trace over the environment factor."""
    return Operator.on_k(np.einsum("iaja->ij", _as_blocks(m)))


def trace_collective(m: Operator) -> Operator:
    """Partial trace over the collective factor."""
    return Operator.on_e(np.einsum("iaib->ab", _as_blocks(m)))


def promote_k(a: Operator, dim_e: int) -> Operator:
    """``a ⊗ I(E)``."""
    return tensor(a, Operator.identity(SpaceTag.environment(dim_e)))


def promote_e(b: Operator, dim_k: int) -> Operator:
    """``I(K) ⊗ b``."""
    return tensor(Operator.identity(SpaceTag.collective(dim_k)), b)


def commutator(a: Operator, b: Operator) -> Operator:
    a._check(b)
    return Operator(a.space, a.mat @ b.mat - b.mat @ a.mat)


def _require_generator(H: Operator) -> None:
    err = H.hermiticity_error()
    if err > GENERATOR_TOL:
        raise ValueError(f"generator is not Hermitian (defect {err:.3g})")


def propagator(H: Operator, t: float) -> Operator:
    """``exp(-i H t)`` via Hermitian eigendecomposition."""
    _require_generator(H)
    w, v = np.linalg.eigh(0.5 * (H.mat + H.mat.conj().T))
    return Operator(H.space, (v * np.exp(-1j * w * t)) @ v.conj().T)


def evolve_unitary(rho: DensityMatrix, H: Operator, t: float) -> DensityMatrix:
    """``U rho U†`` with ``U = exp(-iHt)``."""
    H._check(rho)
    U = propagator(H, t).mat
    out = U @ rho.mat @ U.conj().T
    return DensityMatrix(rho.space, 0.5 * (out + out.conj().T))


def evolve_operator(m: Operator, H: Operator, t: float) -> Operator:
    """Same conjugation as ``evolve_unitary`` for an arbitrary operator."""
    H._check(m)
    U = propagator(H, t).mat
    return Operator(m.space, U @ m.mat @ U.conj().T)


class Eigenframe:
    """Eigenbasis of a fixed Hermitian generator, for repeated evolution.

    ``to_frame``/``from_frame`` change basis; in the frame, conjugation by
    ``exp(-iHt)`` is an elementwise phase multiplication.
    """

    def __init__(self, H: Operator):
        _require_generator(H)
        self.space = H.space
        self.energies, self.vecs = np.linalg.eigh(0.5 * (H.mat + H.mat.conj().T))
        self.gaps = self.energies[:, None] - self.energies[None, :]

    def to_frame(self, m: np.ndarray) -> np.ndarray:
        return self.vecs.conj().T @ m @ self.vecs

    def from_frame(self, m: np.ndarray) -> np.ndarray:
        return self.vecs @ m @ self.vecs.conj().T

    def phases(self, t: float) -> np.ndarray:
        return np.exp(-1j * self.gaps * t)

    def evolve(self, m: Operator, t: float) -> Operator:
        return Operator(m.space, self.from_frame(self.phases(t) * self.to_frame(m.mat)))


def trace_distance(a: Operator, b: Operator) -> float:
    """Half the trace norm of ``a - b`` for Hermitian operands."""
    a._check(b)
    d = a.mat - b.mat
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
