"""Parity-resolved spectra, dark states and selection rules."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .models import (
    DickeParams,
    QrsParams,
    build_dicke_mediator,
    build_parity,
    build_qrs,
    mode_quadratures,
    singlet_projector,
)
from .qops import Operator, SubsystemLayout, embed, fock_annihilation, hermitian_eigendecomposition

CLUSTER_TOL = 1e-9
COMMUTATOR_TOL = 1e-8
PARITY_TOL = 1e-6
DARK_TOL = 1e-8
FORBIDDEN_TOL = 1e-10

ALLOWED = "allowed"
PARITY_FORBIDDEN = "parity-forbidden"
DARK_FORBIDDEN = "dark-forbidden"


class SymmetryError(ValueError):
    """Hamiltonian and parity do not commute, or a parity label is ambiguous."""


class SweepError(RuntimeError):
    def __init__(self, value, cause):
        super().__init__(f"spectrum failed at grid point {value!r}: {cause}")
        self.value = value


@dataclass(frozen=True)
class EigenSystem:
    freqs: np.ndarray
    states: np.ndarray
    parity: np.ndarray
    dark: np.ndarray
    layout: SubsystemLayout

    def __len__(self):
        return len(self.freqs)

    def state(self, j: int) -> np.ndarray:
        return self.states[:, j]

    def nu(self, k: int, j: int = 0) -> float:
        """Transition frequency nu_k - nu_j."""
        return float(self.freqs[k] - self.freqs[j])

    def matrix(self, op: Operator | np.ndarray, levels: int | None = None) -> np.ndarray:
        """Matrix elements <psi_j|op|psi_k> over the lowest ``levels`` states."""
        V = self.states if levels is None else self.states[:, :levels]
        data = op.data if isinstance(op, Operator) else op
        return V.conj().T @ data @ V


@dataclass(frozen=True)
class TransitionTable:
    X: np.ndarray
    classes: np.ndarray

    def is_forbidden(self, j: int, k: int) -> bool:
        return self.classes[j, k] != ALLOWED


def _clusters(vals: np.ndarray, tol: float) -> list[slice]:
    out = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or vals[i] - vals[i - 1] >= tol:
            out.append(slice(start, i))
            start = i
    return out


def _rotate_clusters(vals, vecs, op: np.ndarray, tol: float, blocks=None) -> np.ndarray:
    """Diagonalize ``op`` inside each degenerate cluster (optionally per label block)."""
    vecs = vecs.copy()
    for sl in _clusters(vals, tol):
        if sl.stop - sl.start < 2:
            continue
        idx = np.arange(sl.start, sl.stop)
        groups = [idx] if blocks is None else [idx[blocks[idx] == b] for b in np.unique(blocks[idx])]
        for grp in groups:
            if len(grp) < 2:
                continue
            sub = vecs[:, grp]
            m = sub.conj().T @ op @ sub
            _, w = np.linalg.eigh(0.5 * (m + m.conj().T))
            vecs[:, grp] = sub @ w[:, ::-1]
    return vecs


def diagonalize_with_parity(H: Operator, P: Operator, cluster_tol: float = CLUSTER_TOL) -> EigenSystem:
    """Joint eigenbasis of ``H`` and the parity ``P`` with exact +-1 labels."""
    comm = float(np.max(np.abs(H.data @ P.data - P.data @ H.data)))
    if comm > COMMUTATOR_TOL:
        raise SymmetryError(f"||[H, P]||_max = {comm:.3e} exceeds {COMMUTATOR_TOL}")
    vals, vecs = hermitian_eigendecomposition(H)
    vecs = _rotate_clusters(vals, vecs, P.data, cluster_tol)
    expect = np.real(np.einsum("ij,ij->j", vecs.conj(), P.data @ vecs))
    bad = np.flatnonzero(np.abs(expect) < 1 - PARITY_TOL)
    if bad.size:
        j = int(bad[0])
        raise SymmetryError(f"parity of state {j} ambiguous: <P> = {expect[j]:.6f}")
    parity = np.where(expect > 0, 1, -1)
    return EigenSystem(vals, vecs, parity, np.zeros(len(vals), dtype=bool), H.layout)


def detect_dark_states(es: EigenSystem, identical: bool = True, cluster_tol: float = CLUSTER_TOL) -> EigenSystem:
    """Flag eigenstates living in the Rabi-qubit singlet sector.

    Degenerate clusters are first rotated (within each parity block) to
    diagonalize the singlet projector, so a dark state crossing a bright
    level is still resolved.  With a single cavity mode and only Rabi
    qubits a dark state must also be a single Fock state ``|S>|N>``.
    """
    if not identical:
        warnings.warn("Rabi qubits are not identical; no dark states flagged", stacklevel=2)
        return replace(es, dark=np.zeros(len(es), dtype=bool))
    S = singlet_projector(es.layout).data
    states = _rotate_clusters(es.freqs, es.states, S, cluster_tol, blocks=es.parity)
    weight = np.real(np.einsum("ij,ij->j", states.conj(), S @ states))
    lay = es.layout
    if lay.labels == ("cavity", "rabi-qubit", "rabi-qubit"):
        n = lay.dims[0]
        amps = states.reshape(n, 4, -1)
        singlet = np.array([0, -1, 1, 0]) / np.sqrt(2)
        per_n = np.abs(np.einsum("s,nsj->nj", singlet, amps)) ** 2
        dark = per_n.max(axis=0) > 1 - DARK_TOL
    else:
        dark = weight > 1 - DARK_TOL
    return replace(es, states=states, dark=dark)


def transition_elements(es: EigenSystem, coupling: Operator | np.ndarray, levels: int | None = None) -> TransitionTable:
    """Matrix ``X_jk = <psi_j|coupling|psi_k>`` with selection-rule labels."""
    X = es.matrix(coupling, levels)
    n = X.shape[0]
    par = es.parity[:n]
    dark = es.dark[:n]
    small = np.abs(X) < FORBIDDEN_TOL
    same = par[:, None] == par[None, :]
    one_dark = dark[:, None] ^ dark[None, :]
    classes = np.full((n, n), ALLOWED, dtype=object)
    classes[one_dark] = DARK_FORBIDDEN
    classes[same & small] = PARITY_FORBIDDEN
    return TransitionTable(X, classes)


def analyze_qrs(p: QrsParams) -> EigenSystem:
    """Diagonalize, parity-label and dark-flag the two-qubit Rabi mediator."""
    H = build_qrs(p)
    es = diagonalize_with_parity(H, build_parity(p.layout, "qrs"))
    return detect_dark_states(es, p.identical_qubits)


def analyze_mediator(H: Operator, identical: bool = True) -> EigenSystem:
    es = diagonalize_with_parity(H, build_parity(H.layout, "qrs" if len(H.layout) == 3 else "dicke"))
    return detect_dark_states(es, identical)


def forbidden_level(es: EigenSystem) -> int:
    """Lowest bright excited level sharing the ground-state parity."""
    for k in range(1, len(es)):
        if es.parity[k] == es.parity[0] and not es.dark[k]:
            return k
    raise ValueError("no parity-forbidden bright level found")


def qrs_quadrature(layout: SubsystemLayout) -> Operator:
    quads = mode_quadratures(layout)
    out = quads[0]
    for q in quads[1:]:
        out = out + q
    return out


@dataclass(frozen=True)
class SpectrumRow:
    param: float
    level_index: int
    freq: float
    parity: int
    dark: bool


SweepBuilder = Callable[[float], tuple]


def _sweep_point(build: SweepBuilder, value, levels: int) -> list[SpectrumRow]:
    try:
        built = build(value)
        H, P = built[0], built[1]
        identical = built[2] if len(built) > 2 else True
        es = diagonalize_with_parity(H, P)
        es = detect_dark_states(es, identical) if identical else es
    except Exception as exc:  # noqa: BLE001 - rewrapped with grid context
        raise SweepError(value, exc) from exc
    k = min(levels, len(es))
    return [
        SpectrumRow(float(value), j, float(es.freqs[j]), int(es.parity[j]), bool(es.dark[j]))
        for j in range(k)
    ]


def spectrum_sweep(build: SweepBuilder, grid: Iterable[float], levels: int = 8,
                   workers: int | None = None) -> list[SpectrumRow]:
    """Lowest ``levels`` eigenfrequencies per grid point, in grid order.

    ``build(value)`` returns ``(H, P)`` or ``(H, P, identical_qubits)``.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty parameter grid")
    if workers == 1:
        chunks = [_sweep_point(build, v, levels) for v in grid]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda v: _sweep_point(build, v, levels), grid))
    return [row for chunk in chunks for row in chunk]


def qrs_coupling_builder(base: QrsParams) -> SweepBuilder:
    """Sweep ``g1 = g2 = value`` on top of ``base``."""

    def build(g):
        p = replace(base, g=(g, g))
        return build_qrs(p), build_parity(p.layout, "qrs"), p.identical_qubits

    return build


@dataclass
class AuditReport:
    converged: bool
    max_shift: float
    shifts: np.ndarray
    n_fock: int
    n_fock_reference: int
    levels: int
    tol: float = field(default=1e-8)


def convergence_audit(p: QrsParams | DickeParams, levels: int = 10, extra: int = 6,
                      tol: float = 1e-8) -> AuditReport:
    """Compare the lowest ``levels`` eigenfrequencies at ``n_fock`` and ``n_fock + extra``."""
    if isinstance(p, DickeParams):
        build = build_dicke_mediator
        ref = replace(p, n_fock=tuple(n + extra for n in p.n_fock))
        n0, n1 = max(p.n_fock), max(ref.n_fock)
    else:
        build = build_qrs
        ref = replace(p, n_fock=p.n_fock + extra)
        n0, n1 = p.n_fock, ref.n_fock
    e1 = hermitian_eigendecomposition(build(p))[0][:levels]
    e2 = hermitian_eigendecomposition(build(ref))[0][:levels]
    k = min(len(e1), len(e2))
    shifts = np.abs(e1[:k] - e2[:k])
    max_shift = float(shifts.max()) if k else 0.0
    return AuditReport(bool(max_shift <= tol and k == levels), max_shift, shifts, n0, n1, levels, tol)


def selection_rule_violations(es: EigenSystem, coupling: Operator, levels: int = 12,
                              allowed_floor: float = 1e-3,
                              sector: np.ndarray | None = None) -> dict[str, list[tuple[int, int, float]]]:
    """Pairs among the lowest ``levels`` states that break the selection rules.

    ``sector`` optionally labels states by an additional conserved quantity;
    the lower bound on allowed elements then applies only within a sector.
    """
    table = transition_elements(es, coupling, levels)
    absx = np.abs(table.X)
    par = es.parity[:levels]
    dark = es.dark[:levels]
    out = {"same_parity_nonzero": [], "dark_nonzero": [], "allowed_too_small": []}
    n = absx.shape[0]
    for j in range(n):
        for k in range(j + 1, n):
            x = float(absx[j, k])
            if par[j] == par[k] and x >= FORBIDDEN_TOL:
                out["same_parity_nonzero"].append((j, k, x))
            if dark[j] != dark[k] and x >= FORBIDDEN_TOL:
                out["dark_nonzero"].append((j, k, x))
            same_sector = sector is None or sector[j] == sector[k]
            if par[j] != par[k] and not dark[j] and not dark[k] and same_sector and x <= allowed_floor:
                out["allowed_too_small"].append((j, k, x))
    return out


def symmetry_labels(es: EigenSystem, op: Operator | np.ndarray, levels: int = 12,
                    cluster_tol: float = CLUSTER_TOL, decimals: int = 6,
                    residual_tol: float = 1e-6) -> tuple[EigenSystem, np.ndarray]:
    """Resolve degenerate clusters along a commuting observable; labels for the lowest ``levels``.

    Rotations are confined to blocks of equal parity and dark flag, so the
    existing labels stay valid.  Only low levels are checked because Fock
    truncation spoils the symmetry near the cutoff.
    """
    data = op.data if isinstance(op, Operator) else np.asarray(op)
    blocks = es.parity * 2 + es.dark.astype(int)
    states = _rotate_clusters(es.freqs, es.states, data, cluster_tol, blocks=blocks)
    low = states[:, :levels]
    vals = np.real(np.einsum("ij,ij->j", low.conj(), data @ low))
    spread = np.linalg.norm(data @ low - low * vals, axis=0)
    if spread.max() > residual_tol:
        raise SymmetryError(f"observable is not diagonal in the eigenbasis (residual {spread.max():.2e})")
    return replace(es, states=states), np.round(vals, decimals)


def antisymmetric_mode_number(layout: SubsystemLayout) -> Operator:
    """``b^+ b`` with ``b = (a_1 - a_2)/sqrt(2)`` for a two-mode layout."""
    slots = layout.slots("cavity")
    if len(slots) != 2:
        raise ValueError("needs exactly two cavity modes")
    a1 = embed(fock_annihilation(layout.dims[slots[0]]), slots[0], layout)
    a2 = embed(fock_annihilation(layout.dims[slots[1]]), slots[1], layout)
    b = (a1 - a2) * (1 / np.sqrt(2))
    return b.dag() @ b


def sweep_rows_by_level(rows: Sequence[SpectrumRow]) -> dict[int, list[SpectrumRow]]:
    out: dict[int, list[SpectrumRow]] = {}
    for r in rows:
        out.setdefault(r.level_index, []).append(r)
    return out
