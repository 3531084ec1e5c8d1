"""Dense operator algebra on tensor-product Hilbert spaces.

Factor order is fixed package-wide as ``[cavity mode(s), rabi qubit 1,
rabi qubit 2, external site 1, external site 2]`` with the first factor
varying slowest in the composite index.  Spins use ``|up> = index 0`` so
that ``sigma_z = diag(+1, -1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
DENSITY_TRACE_TOL = 1e-10
DENSITY_EIG_TOL = 1e-10

ROLES = ("cavity", "rabi-qubit", "external-qubit", "transmon", "qrs-level")


class InvalidDimensionError(ValueError):
    pass


class HermiticityError(ValueError):
    pass


class DensityMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class SubsystemLayout:
    """Ordered tensor factors with a role tag per factor."""

    dims: tuple[int, ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise InvalidDimensionError("layout needs at least one factor")
        if any(d < 2 for d in dims):
            raise InvalidDimensionError(f"every factor needs dimension >= 2, got {dims}")
        labels = tuple(self.labels) or tuple("rabi-qubit" if d == 2 else "cavity" for d in dims)
        if len(labels) != len(dims):
            raise InvalidDimensionError("one label per factor required")
        for lab in labels:
            if lab not in ROLES:
                raise InvalidDimensionError(f"unknown factor role {lab!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self):
        return len(self.dims)

    def slots(self, role: str) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == role]

    def sublayout(self, keep: Iterable[int]) -> "SubsystemLayout":
        keep = sorted(keep)
        return SubsystemLayout(tuple(self.dims[i] for i in keep), tuple(self.labels[i] for i in keep))


def _as_layout(layout) -> SubsystemLayout:
    if isinstance(layout, SubsystemLayout):
        return layout
    return SubsystemLayout(tuple(layout))


class Operator:
    """Immutable dense complex matrix tagged with a :class:`SubsystemLayout`."""

    __slots__ = ("layout", "data")

    def __init__(self, data, layout=None):
        arr = np.array(data, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidDimensionError(f"operator must be square, got shape {arr.shape}")
        layout = SubsystemLayout((arr.shape[0],)) if layout is None else _as_layout(layout)
        if layout.size != arr.shape[0]:
            raise InvalidDimensionError(
                f"matrix dimension {arr.shape[0]} does not match layout {layout.dims}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "layout", layout)

    def __setattr__(self, key, value):
        raise AttributeError("Operator is immutable")

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def dag(self) -> "Operator":
        return Operator(self.data.conj().T, self.layout)

    def _coerce(self, other):
        if isinstance(other, Operator):
            if other.layout.dims != self.layout.dims:
                raise InvalidDimensionError(
                    f"layout mismatch {self.layout.dims} vs {other.layout.dims}"
                )
            return other.data
        return np.asarray(other)

    def __add__(self, other):
        if np.isscalar(other) and other == 0:
            return self
        return Operator(self.data + self._coerce(other), self.layout)

    __radd__ = __add__

    def __sub__(self, other):
        return Operator(self.data - self._coerce(other), self.layout)

    def __neg__(self):
        return Operator(-self.data, self.layout)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return Operator(self.data * scalar, self.layout)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Operator(self.data / scalar, self.layout)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            return Operator(self.data @ self._coerce(other), self.layout)
        return self.data @ np.asarray(other)

    def __repr__(self):
        return f"Operator(dims={self.layout.dims}, labels={self.layout.labels})"

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.data))))
        return self.hermiticity_error() <= tol * scale

    def commutator(self, other: "Operator") -> "Operator":
        b = self._coerce(other)
        return Operator(self.data @ b - b @ self.data, self.layout)

    def expect(self, state) -> complex:
        """<psi|O|psi> for a ket, tr(O rho) for a density matrix."""
        s = state.data if isinstance(state, Operator) else np.asarray(state)
        if s.ndim == 1:
            return complex(np.vdot(s, self.data @ s))
        return complex(np.trace(self.data @ s))

    def trace(self) -> complex:
        return complex(np.trace(self.data))


class DensityMatrix(Operator):
    """Operator validated as a state: unit trace, Hermitian, PSD to tolerance."""

    __slots__ = ()

    def __init__(self, data, layout=None, *, validate: bool = True):
        super().__init__(data, layout)
        if validate:
            check_density(self.data)

    @classmethod
    def from_ket(cls, psi, layout=None) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), layout)

    def purity(self) -> float:
        return float(np.real(np.einsum("ij,ji->", self.data, self.data)))


def check_density(rho: np.ndarray, trace_tol: float = DENSITY_TRACE_TOL, eig_tol: float = DENSITY_EIG_TOL):
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise DensityMatrixError(f"trace {tr.real:.3e} differs from 1 by more than {trace_tol}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > 1e-10:
        raise DensityMatrixError(f"density matrix not Hermitian (max deviation {herm:.2e})")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lo < -eig_tol:
        raise DensityMatrixError(f"negative eigenvalue {lo:.3e}")


def fock_annihilation(n_max: int) -> Operator:
    """Truncated bosonic annihilator on ``|0>, ..., |n_max-1>``."""
    if int(n_max) < 2:
        raise InvalidDimensionError(f"Fock truncation must be >= 2, got {n_max}")
    n = int(n_max)
    return Operator(np.diag(np.sqrt(np.arange(1, n)), 1), SubsystemLayout((n,), ("cavity",)))


def fock_number(n_max: int) -> Operator:
    a = fock_annihilation(n_max)
    return a.dag() @ a


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli(axis: str) -> Operator:
    try:
        mat = _PAULI[axis.lower()]
    except (KeyError, AttributeError):
        raise ValueError(f"unknown Pauli axis {axis!r}") from None
    return Operator(mat, SubsystemLayout((2,), ("rabi-qubit",)))


def identity(layout) -> Operator:
    layout = _as_layout(layout)
    return Operator(np.eye(layout.size), layout)


def kron(*ops: np.ndarray) -> np.ndarray:
    return reduce(np.kron, ops)


def embed(op, slot: int, layout) -> Operator:
    """Return ``I x ... x op x ... x I`` with ``op`` placed at ``slot``."""
    layout = _as_layout(layout)
    mat = op.data if isinstance(op, Operator) else np.asarray(op, dtype=complex)
    if not 0 <= slot < len(layout):
        raise IndexError(f"slot {slot} out of range for {len(layout)} factors")
    if mat.shape != (layout.dims[slot],) * 2:
        raise InvalidDimensionError(
            f"operator of size {mat.shape[0]} cannot sit in slot {slot} of dimension {layout.dims[slot]}"
        )
    left = int(np.prod(layout.dims[:slot], dtype=int))
    right = int(np.prod(layout.dims[slot + 1:], dtype=int))
    return Operator(kron(np.eye(left), mat, np.eye(right)), layout)


def tensor(*ops: Operator) -> Operator:
    """Kronecker product of operators; layouts are concatenated."""
    dims: list[int] = []
    labels: list[str] = []
    for op in ops:
        dims.extend(op.layout.dims)
        labels.extend(op.layout.labels)
    return Operator(kron(*(op.data for op in ops)), SubsystemLayout(tuple(dims), tuple(labels)))


def hermitian_eigendecomposition(H: Operator, tol: float = HERMITIAN_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors (as columns).

    Raises
    ------
    HermiticityError
        If ``max|H - H^dagger|`` exceeds ``tol`` relative to ``max|H|``.
    """
    data = H.data if isinstance(H, Operator) else np.asarray(H, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(data))))
    dev = float(np.max(np.abs(data - data.conj().T)))
    if dev > tol * scale:
        raise HermiticityError(f"operator not Hermitian: max|H - H^+| = {dev:.3e}")
    vals, vecs = np.linalg.eigh(0.5 * (data + data.conj().T))
    return vals, vecs


def partial_trace(rho, keep: Sequence[int] | int) -> DensityMatrix:
    """Trace out every factor of ``rho.layout`` not listed in ``keep``."""
    if isinstance(keep, (int, np.integer)):
        keep = [int(keep)]
    keep = sorted(set(int(k) for k in keep))
    layout = rho.layout
    n = len(layout)
    if not keep or any(k < 0 or k >= n for k in keep):
        raise ValueError(f"invalid slot set {keep} for {n} factors")
    dims = layout.dims
    t = np.asarray(rho.data).reshape(dims + dims)
    # einsum with bra/ket indices; traced factors share a label
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    ket = [letters[i] for i in range(n)]
    bra = [letters[n + i] if i in keep else letters[i] for i in range(n)]
    out = [ket[i] for i in keep] + [bra[i] for i in keep]
    reduced = np.einsum("".join(ket + bra) + "->" + "".join(out), t)
    d = int(np.prod([dims[i] for i in keep]))
    return DensityMatrix(reduced.reshape(d, d), layout.sublayout(keep), validate=False)


def ket(layout, *indices: int) -> np.ndarray:
    """Computational basis vector for one index per factor."""
    layout = _as_layout(layout)
    if len(indices) != len(layout):
        raise ValueError("one index per factor required")
    vec = np.zeros(layout.size, dtype=complex)
    vec[np.ravel_multi_index(indices, layout.dims)] = 1.0
    return vec
