"""Hamiltonian and symmetry-operator builders.

All energies are in units of the cavity frequency with hbar = 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt
from typing import Sequence

import numpy as np

from .qops import (
    Operator,
    SubsystemLayout,
    embed,
    fock_annihilation,
    pauli,
)


class InvalidParametersError(ValueError):
    pass


def _pair(values, name) -> tuple[float, float]:
    if np.isscalar(values):
        values = (values, values)
    values = tuple(float(v) for v in values)
    if len(values) != 2:
        raise InvalidParametersError(f"{name} needs exactly two entries")
    return values


@dataclass(frozen=True)
class QrsParams:
    omega_cav: float = 1.0
    omega_q: tuple[float, float] = (1.0, 1.0)
    g: tuple[float, float] = (0.3, 0.3)
    n_fock: int = 16

    def __post_init__(self):
        object.__setattr__(self, "omega_q", _pair(self.omega_q, "omega_q"))
        object.__setattr__(self, "g", _pair(self.g, "g"))
        if self.omega_cav <= 0 or min(self.omega_q) <= 0:
            raise InvalidParametersError("frequencies must be positive")
        if min(self.g) < 0:
            raise InvalidParametersError("couplings must be non-negative")
        if int(self.n_fock) < 2:
            raise InvalidParametersError("n_fock must be >= 2")

    @property
    def layout(self) -> SubsystemLayout:
        return SubsystemLayout((self.n_fock, 2, 2), ("cavity", "rabi-qubit", "rabi-qubit"))

    @property
    def identical_qubits(self) -> bool:
        return self.omega_q[0] == self.omega_q[1] and self.g[0] == self.g[1]


@dataclass(frozen=True)
class FullModelParams:
    qrs: QrsParams = field(default_factory=QrsParams)
    omega_ext: tuple[float, float] = (1.0, 1.0)
    lam: tuple[float, float] = (0.02, 0.02)

    def __post_init__(self):
        object.__setattr__(self, "omega_ext", _pair(self.omega_ext, "omega_ext"))
        object.__setattr__(self, "lam", _pair(self.lam, "lam"))
        if min(self.omega_ext) <= 0:
            raise InvalidParametersError("external qubit frequencies must be positive")
        if min(self.lam) < 0:
            raise InvalidParametersError("lambda couplings must be non-negative")

    @property
    def layout(self) -> SubsystemLayout:
        return SubsystemLayout(
            (self.qrs.n_fock, 2, 2, 2, 2),
            ("cavity", "rabi-qubit", "rabi-qubit", "external-qubit", "external-qubit"),
        )


@dataclass(frozen=True)
class DickeParams:
    """Multi-mode mediator with optional three-level external sites.

    ``g_matrix[r][i]`` couples mode ``r`` to Rabi qubit ``i``;
    ``lambda_matrix[j][r]`` couples external site ``j`` to mode ``r``.
    """

    mode_freqs: tuple[float, ...] = (1.0, 1.0)
    g_matrix: tuple[tuple[float, float], ...] = ((0.3 / sqrt(2),) * 2,) * 2
    lambda_matrix: tuple[tuple[float, ...], ...] = ((0.02 / sqrt(2),) * 2,) * 2
    omega_q: tuple[float, float] = (1.0, 1.0)
    omega_ext: tuple[float, float] = (1.0, 1.0)
    n_fock: int | tuple[int, ...] = 8
    external_levels: int = 2
    anharmonicity: float = 0.0
    defaults_flagged: bool = False

    def __post_init__(self):
        modes = tuple(float(w) for w in self.mode_freqs)
        if not modes:
            raise InvalidParametersError("manifold needs at least one mode")
        if min(modes) <= 0:
            raise InvalidParametersError("mode frequencies must be positive")
        g = np.asarray(self.g_matrix, dtype=float)
        lam = np.asarray(self.lambda_matrix, dtype=float)
        if g.shape != (len(modes), 2):
            raise InvalidParametersError(f"g_matrix must be ({len(modes)}, 2), got {g.shape}")
        if lam.shape != (2, len(modes)):
            raise InvalidParametersError(f"lambda_matrix must be (2, {len(modes)}), got {lam.shape}")
        if (g < 0).any() or (lam < 0).any():
            raise InvalidParametersError("couplings must be non-negative")
        nf = (self.n_fock,) * len(modes) if np.isscalar(self.n_fock) else tuple(self.n_fock)
        if len(nf) != len(modes) or min(nf) < 2:
            raise InvalidParametersError("one n_fock >= 2 per mode required")
        if self.external_levels not in (2, 3):
            raise InvalidParametersError("external_levels must be 2 or 3")
        object.__setattr__(self, "mode_freqs", modes)
        object.__setattr__(self, "g_matrix", tuple(map(tuple, g.tolist())))
        object.__setattr__(self, "lambda_matrix", tuple(map(tuple, lam.tolist())))
        object.__setattr__(self, "omega_q", _pair(self.omega_q, "omega_q"))
        object.__setattr__(self, "omega_ext", _pair(self.omega_ext, "omega_ext"))
        object.__setattr__(self, "n_fock", tuple(int(n) for n in nf))
        if min(self.omega_q) <= 0 or min(self.omega_ext) <= 0:
            raise InvalidParametersError("frequencies must be positive")

    @classmethod
    def degenerate(cls, g: float = 0.3, lam: float = 0.02, modes: int = 2, omega_cav: float = 1.0,
                   omega_q=(1.0, 1.0), omega_ext=(1.0, 1.0), n_fock=8, **kw) -> "DickeParams":
        """Degenerate manifold with couplings split as ``g/sqrt(M)``, ``lam/sqrt(M)``.

        These splittings keep the collective (bright-mode) coupling equal to
        the single-mode case; they are defaults, not values from a device.
        """
        s = sqrt(modes)
        return cls(
            mode_freqs=(omega_cav,) * modes,
            g_matrix=((g / s, g / s),) * modes,
            lambda_matrix=((lam / s,) * modes,) * 2,
            omega_q=omega_q,
            omega_ext=omega_ext,
            n_fock=n_fock,
            defaults_flagged=True,
            **kw,
        )

    @property
    def n_modes(self) -> int:
        return len(self.mode_freqs)

    @property
    def ext_role(self) -> str:
        return "external-qubit" if self.external_levels == 2 else "transmon"

    @property
    def layout(self) -> SubsystemLayout:
        d = self.external_levels
        return SubsystemLayout(
            self.n_fock + (2, 2, d, d),
            ("cavity",) * self.n_modes + ("rabi-qubit", "rabi-qubit", self.ext_role, self.ext_role),
        )

    @property
    def mediator_layout(self) -> SubsystemLayout:
        return SubsystemLayout(self.n_fock + (2, 2), ("cavity",) * self.n_modes + ("rabi-qubit",) * 2)


@dataclass(frozen=True)
class DriveParams:
    amplitude: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0
    target: int = 0

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidParametersError("drive amplitude must be non-negative")
        if self.target not in (0, 1):
            raise InvalidParametersError("target must be external qubit 0 or 1")


def quadrature(n_fock: int) -> Operator:
    a = fock_annihilation(n_fock)
    return a + a.dag()


def build_qrs(p: QrsParams) -> Operator:
    """Two-qubit quantum Rabi Hamiltonian on ``[n_fock, 2, 2]``."""
    lay = p.layout
    a = fock_annihilation(p.n_fock)
    x = embed(a + a.dag(), 0, lay)
    H = p.omega_cav * embed(a.dag() @ a, 0, lay)
    for i in range(2):
        H = H + 0.5 * p.omega_q[i] * embed(pauli("z"), 1 + i, lay)
        H = H + p.g[i] * (embed(pauli("x"), 1 + i, lay) @ x)
    return H


def build_full(p: FullModelParams) -> Operator:
    """QRS plus two external qubits dipole-coupled to the cavity quadrature."""
    lay = p.layout
    q = p.qrs
    a = fock_annihilation(q.n_fock)
    x = embed(a + a.dag(), 0, lay)
    H = q.omega_cav * embed(a.dag() @ a, 0, lay)
    for i in range(2):
        H = H + 0.5 * q.omega_q[i] * embed(pauli("z"), 1 + i, lay)
        H = H + q.g[i] * (embed(pauli("x"), 1 + i, lay) @ x)
    for j in range(2):
        H = H + 0.5 * p.omega_ext[j] * embed(pauli("z"), 3 + j, lay)
        H = H + p.lam[j] * (embed(pauli("x"), 3 + j, lay) @ x)
    return H


def transmon_ops(omega: float, anharmonicity: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated transmon (H, charge coupling, parity factor) in basis (|1>, |0>, |2>).

    The first two basis states coincide with the qubit convention
    (excited first) so dropping ``|2>`` recovers ``(omega/2) tau_z`` and ``tau_x``.
    """
    h = np.diag([0.5 * omega, -0.5 * omega, 1.5 * omega - anharmonicity]).astype(complex)
    n = np.zeros((3, 3), dtype=complex)
    n[0, 1] = n[1, 0] = 1.0
    n[0, 2] = n[2, 0] = sqrt(2.0)
    parity = np.diag([1.0, -1.0, -1.0]).astype(complex)
    return h, n, parity


def _external_ops(levels: int, omega: float, anharmonicity: float):
    if levels == 2:
        return 0.5 * omega * pauli("z").data, pauli("x").data, pauli("z").data
    return transmon_ops(omega, anharmonicity)


def build_dicke_mediator(p: DickeParams) -> Operator:
    """Multi-mode two-qubit Rabi mediator ``H'_QRS`` on ``[n_1..n_M, 2, 2]``."""
    lay = p.mediator_layout
    M = p.n_modes
    H = Operator(np.zeros((lay.size, lay.size)), lay)
    for r in range(M):
        a = fock_annihilation(p.n_fock[r])
        H = H + p.mode_freqs[r] * embed(a.dag() @ a, r, lay)
    for i in range(2):
        H = H + 0.5 * p.omega_q[i] * embed(pauli("z"), M + i, lay)
    for r in range(M):
        x = embed(quadrature(p.n_fock[r]), r, lay)
        for i in range(2):
            if p.g_matrix[r][i]:
                H = H + p.g_matrix[r][i] * (embed(pauli("x"), M + i, lay) @ x)
    return H


def build_dicke(p: DickeParams) -> Operator:
    """Generalized Dicke model: multi-mode mediator plus two external sites."""
    lay = p.layout
    M = p.n_modes
    H = Operator(np.zeros((lay.size, lay.size)), lay)
    for r in range(M):
        a = fock_annihilation(p.n_fock[r])
        H = H + p.mode_freqs[r] * embed(a.dag() @ a, r, lay)
    for i in range(2):
        H = H + 0.5 * p.omega_q[i] * embed(pauli("z"), M + i, lay)
    xs = [embed(quadrature(p.n_fock[r]), r, lay) for r in range(M)]
    for r in range(M):
        for i in range(2):
            if p.g_matrix[r][i]:
                H = H + p.g_matrix[r][i] * (embed(pauli("x"), M + i, lay) @ xs[r])
    for j in range(2):
        h, n, _ = _external_ops(p.external_levels, p.omega_ext[j], p.anharmonicity)
        H = H + embed(h, M + 2 + j, lay)
        nj = embed(n, M + 2 + j, lay)
        for r in range(M):
            if p.lambda_matrix[j][r]:
                H = H + p.lambda_matrix[j][r] * (nj @ xs[r])
    return H


def dicke_as_full(p: FullModelParams) -> DickeParams:
    """Single-mode Dicke parameters equivalent to a full-model parameter set."""
    q = p.qrs
    return DickeParams(
        mode_freqs=(q.omega_cav,),
        g_matrix=(q.g,),
        lambda_matrix=((p.lam[0],), (p.lam[1],)),
        omega_q=q.omega_q,
        omega_ext=p.omega_ext,
        n_fock=q.n_fock,
    )


_KIND_ROLES = {
    "qrs": {"cavity", "rabi-qubit"},
    "full": {"cavity", "rabi-qubit", "external-qubit"},
    "dicke": {"cavity", "rabi-qubit", "external-qubit", "transmon"},
}


def build_parity(layout: SubsystemLayout, kind: str = "qrs") -> Operator:
    """Z2 parity: ``exp(i pi n)`` per mode times ``sigma_z`` per spin-like factor.

    Three-level external sites use ``-(-1)^n`` so the operator restricted
    to the two lowest levels is ``tau_z``.
    """
    if kind not in _KIND_ROLES:
        raise ValueError(f"unknown parity kind {kind!r}")
    roles = set(layout.labels)
    if not roles <= _KIND_ROLES[kind] or "cavity" not in roles or layout.labels.count("rabi-qubit") != 2:
        raise InvalidParametersError(f"layout {layout.labels} inconsistent with parity kind {kind!r}")
    if kind == "qrs" and len(layout) != 3:
        raise InvalidParametersError("QRS parity expects [cavity, qubit, qubit]")
    if kind == "full" and len(layout) != 5:
        raise InvalidParametersError("full-model parity expects five factors")
    diag = np.ones(1)
    for d, role in zip(layout.dims, layout.labels):
        if role == "cavity":
            f = (-1.0) ** np.arange(d)
        elif d == 2:
            f = np.array([1.0, -1.0])
        elif d == 3:
            f = np.array([1.0, -1.0, -1.0])
        else:
            raise InvalidParametersError(f"no parity factor for {role} of dimension {d}")
        diag = np.kron(diag, f)
    return Operator(np.diag(diag), layout)


def drive_term(p: DriveParams, t: float, layout: SubsystemLayout) -> Operator:
    """``Omega cos(nu t + phi) tau_x`` on the targeted external qubit."""
    slots = layout.slots("external-qubit") or layout.slots("transmon")
    if len(slots) != 2:
        raise InvalidParametersError("layout has no pair of external sites")
    slot = slots[p.target]
    d = layout.dims[slot]
    x = pauli("x").data if d == 2 else transmon_ops(1.0, 0.0)[1]
    return p.amplitude * np.cos(p.frequency * t + p.phase) * embed(x, slot, layout)


def singlet_projector(layout: SubsystemLayout) -> Operator:
    """Projector onto the Rabi-qubit spin singlet, identity elsewhere."""
    slots = layout.slots("rabi-qubit")
    if len(slots) != 2 or slots[1] != slots[0] + 1:
        raise InvalidParametersError("layout needs two adjacent Rabi qubits")
    s = np.array([0, -1, 1, 0], dtype=complex) / sqrt(2)  # (|du> - |ud>)/sqrt2
    left = int(np.prod(layout.dims[: slots[0]], dtype=int))
    right = int(np.prod(layout.dims[slots[1] + 1:], dtype=int))
    return Operator(np.kron(np.kron(np.eye(left), np.outer(s, s.conj())), np.eye(right)), layout)


def mode_quadratures(layout: SubsystemLayout) -> list[Operator]:
    return [embed(quadrature(layout.dims[r]), r, layout) for r in layout.slots("cavity")]


def spin_operators(layout: SubsystemLayout, axis: str = "x", role: str = "rabi-qubit") -> list[Operator]:
    return [embed(pauli(axis), s, layout) for s in layout.slots(role)]


def pair(values: Sequence[float] | float) -> tuple[float, float]:
    return _pair(values, "value")
