"""Dispersive effective qubit-qubit Hamiltonian mediated by the QRS.

The reduced space is ``{psi_0, psi_1} x qubit x qubit`` with the QRS factor
ordered ``(psi_0, psi_1)``, so ``Z_p = |psi_1><psi_1| - |psi_0><psi_0|`` is
``diag(-1, +1)``.

Two channel sets are supported:

``"doublet"``
    The closed form with a single ``psi_0 <-> psi_1`` channel entering
    through ``|chi_10|^2``:
    ``H_eff = H_0 + (1/2)|chi_10|^2 Z_p (x) S_12``.

``"allowed"``
    Second-order sums over every parity-allowed transition out of
    ``psi_0`` and ``psi_1``.  Restricted to the ``psi_0 <-> psi_1`` channel
    its exchange term coincides with ``"doublet"``; the Stark shifts carry
    the sign obtained from perturbation theory.  Near the forbidden
    resonance the ``psi_0 -> psi_4`` channel dominates the exchange, so
    this is the form that tracks the full model.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import pi

import numpy as np

from .models import pair
from .qops import Operator, SubsystemLayout, hermitian_eigendecomposition, kron, pauli
from .spectral import FORBIDDEN_TOL, EigenSystem, forbidden_level, qrs_quadrature

CHANNELS = ("doublet", "allowed")

REDUCED_LAYOUT = SubsystemLayout((2, 2, 2), ("qrs-level", "external-qubit", "external-qubit"))

_UP = np.diag([1.0, 0.0]).astype(complex)
_DOWN = np.diag([0.0, 1.0]).astype(complex)
_X = pauli("x").data
_Z = pauli("z").data
_I2 = np.eye(2)


class ResonanceError(ValueError):
    """An external qubit is too close to an allowed QRS transition."""


class SearchWindowError(LookupError):
    pass


@dataclass(frozen=True)
class EffectiveParams:
    chi10: complex
    nu10: float
    delta: tuple[float, float]
    mu: tuple[float, float]
    j_eff: float
    omega_ext: tuple[float, float]
    lam: tuple[float, float]
    channels: str
    exchange_by_level: tuple[float, float]
    stark_up: np.ndarray  # [qrs level, qubit]
    stark_down: np.ndarray

    @property
    def exchange(self) -> float:
        """``<psi0 ud|H_eff|psi0 du>`` (QRS in its ground state)."""
        return self.exchange_by_level[0]

    @property
    def half_period(self) -> float:
        """Transfer time ``pi / (2 |exchange|)``; infinite when uncoupled."""
        c = abs(self.exchange)
        return pi / (2 * c) if c > 0 else float("inf")

    @property
    def closed_form_half_period(self) -> float:
        """``pi / (2 |J_eff|)`` from the closed-form coupling."""
        return pi / (2 * abs(self.j_eff)) if self.j_eff else float("inf")


@dataclass(frozen=True)
class EffectiveHamiltonian:
    operator: Operator
    h0: Operator
    interaction: Operator
    params: EffectiveParams

    @property
    def layout(self) -> SubsystemLayout:
        return self.operator.layout


def _qrs_x_rows(es: EigenSystem, coupling) -> np.ndarray:
    coupling = qrs_quadrature(es.layout) if coupling is None else coupling
    data = coupling.data if isinstance(coupling, Operator) else coupling
    V = es.states
    return V[:, :2].conj().T @ data @ V


def effective_params(es: EigenSystem, omega_ext, lam, coupling=None, channels: str = "doublet",
                     resonance_factor: float = 10.0) -> EffectiveParams:
    """Dispersive parameters for external qubits at ``omega_ext`` coupled with ``lam``.

    Raises
    ------
    ResonanceError
        When ``|Delta_10^j| < resonance_factor * lam_j`` (dispersive
        assumption violated), or, for ``channels="allowed"``, when any
        channel has ``lam_j |X_mk| > |Delta| / resonance_factor``.
    """
    if channels not in CHANNELS:
        raise ValueError(f"channels must be one of {CHANNELS}")
    w = pair(omega_ext)
    lam = pair(lam)
    X = _qrs_x_rows(es, coupling)
    chi = complex(X[0, 1])
    nu10 = es.nu(1)
    delta = tuple(wj - nu10 for wj in w)
    mu = tuple(wj + nu10 for wj in w)
    for j in range(2):
        if lam[j] and abs(delta[j]) < resonance_factor * lam[j]:
            raise ResonanceError(
                f"qubit {j + 1}: |Delta_10| = {abs(delta[j]):.4g} < {resonance_factor} * lambda = {resonance_factor * lam[j]:.4g}"
            )
    chi2 = abs(chi) ** 2
    j_eff = chi2 * lam[0] * lam[1] * (1 / mu[0] + 1 / mu[1] - 1 / delta[0] - 1 / delta[1])

    up = np.zeros((2, 2))
    down = np.zeros((2, 2))
    if channels == "doublet":
        zp = (-1.0, 1.0)
        exch = tuple(0.5 * chi2 * z * lam[0] * lam[1] * (1 / mu[0] + 1 / mu[1] - 1 / delta[0] - 1 / delta[1])
                     for z in zp)
        for m in range(2):
            for j in range(2):
                up[m, j] = zp[m] * chi2 * lam[j] ** 2 / delta[j]
                down[m, j] = -zp[m] * chi2 * lam[j] ** 2 / mu[j]
    else:
        exch_l = [0.0, 0.0]
        for m in range(2):
            for k in range(len(es)):
                x2 = abs(X[m, k]) ** 2
                if k == m or abs(X[m, k]) < FORBIDDEN_TOL:
                    continue
                nu_km = es.nu(k, m)
                d = [wj - nu_km for wj in w]
                u = [wj + nu_km for wj in w]
                for j in range(2):
                    if lam[j] * np.sqrt(x2) * resonance_factor > abs(d[j]):
                        raise ResonanceError(
                            f"qubit {j + 1} near-resonant with QRS transition {m}->{k} "
                            f"(detuning {d[j]:.4g}, coupling {lam[j] * np.sqrt(x2):.4g})"
                        )
                    up[m, j] += x2 * lam[j] ** 2 / d[j]
                    down[m, j] -= x2 * lam[j] ** 2 / u[j]
                exch_l[m] += x2 * lam[0] * lam[1] * 0.5 * (1 / d[0] + 1 / d[1] - 1 / u[0] - 1 / u[1])
        exch = tuple(exch_l)
    return EffectiveParams(chi, nu10, delta, mu, float(j_eff), w, lam, channels,
                           tuple(float(c) for c in exch), up, down)


def build_effective(ep: EffectiveParams) -> EffectiveHamiltonian:
    """Assemble ``H_eff`` on the reduced layout ``[qrs-level, qubit, qubit]``."""
    zp = np.diag([-1.0, 1.0])
    h0 = 0.5 * ep.nu10 * kron(zp, _I2, _I2)
    h0 = h0 + 0.5 * ep.omega_ext[0] * kron(np.eye(2), _Z, _I2) + 0.5 * ep.omega_ext[1] * kron(np.eye(2), _I2, _Z)
    xx = kron(_X, _X)
    up = [kron(_UP, _I2), kron(_I2, _UP)]
    dn = [kron(_DOWN, _I2), kron(_I2, _DOWN)]
    hint = np.zeros((8, 8), dtype=complex)
    for m in range(2):
        proj = np.zeros((2, 2))
        proj[m, m] = 1.0
        block = ep.exchange_by_level[m] * xx
        for j in range(2):
            block = block + ep.stark_up[m, j] * up[j] + ep.stark_down[m, j] * dn[j]
        hint += np.kron(proj, block)
    h0_op = Operator(h0, REDUCED_LAYOUT)
    hint_op = Operator(hint, REDUCED_LAYOUT)
    return EffectiveHamiltonian(h0_op + hint_op, h0_op, hint_op, ep)


def reduced_ket(level: int, s1: int, s2: int) -> np.ndarray:
    """``|psi_level>|s1 s2>`` in the reduced space (0 = up, 1 = down)."""
    v = np.zeros(8, dtype=complex)
    v[np.ravel_multi_index((level, s1, s2), (2, 2, 2))] = 1.0
    return v


@dataclass(frozen=True)
class HybridizationReport:
    energies: tuple[float, float]
    gap: float
    overlap_symmetric: float
    overlap_antisymmetric: float
    degenerate: bool
    target: float

    def as_dict(self) -> dict:
        return {
            "energy_lower": self.energies[0],
            "energy_upper": self.energies[1],
            "gap": self.gap,
            "overlap_symmetric": self.overlap_symmetric,
            "overlap_antisymmetric": self.overlap_antisymmetric,
            "degenerate": self.degenerate,
            "target": self.target,
        }


def hybridization_check(full_H: Operator, es: EigenSystem, target: float | None = None,
                        window: float = 0.02, degenerate_tol: float = 1e-9) -> HybridizationReport:
    """Locate the hybridized pair near ``psi_0|ud>, psi_0|du>`` in the full model.

    ``target`` is the excitation energy above the full ground state
    (default ``nu_k - nu_0`` for the lowest parity-forbidden bright level).
    """
    if target is None:
        target = es.nu(forbidden_level(es))
    E, W = hermitian_eigendecomposition(full_H)
    rel = E - E[0]
    cand = np.flatnonzero(np.abs(rel - target) < window)
    if cand.size < 2:
        raise SearchWindowError(f"fewer than two states within {window} of E = {target:.6f}")
    psi0 = es.state(0)
    ud = np.kron(psi0, np.array([0, 1, 0, 0], dtype=complex))
    du = np.kron(psi0, np.array([0, 0, 1, 0], dtype=complex))
    amp_ud = ud.conj() @ W[:, cand]
    amp_du = du.conj() @ W[:, cand]
    weight = np.abs(amp_ud) ** 2 + np.abs(amp_du) ** 2
    pick = cand[np.argsort(weight)[::-1][:2]]
    pick = np.sort(pick)
    sym = (ud + du) / np.sqrt(2)
    anti = (ud - du) / np.sqrt(2)
    ov_s = float(max(abs(sym.conj() @ W[:, i]) ** 2 for i in pick))
    ov_a = float(max(abs(anti.conj() @ W[:, i]) ** 2 for i in pick))
    gap = float(abs(E[pick[1]] - E[pick[0]]))
    return HybridizationReport((float(rel[pick[0]]), float(rel[pick[1]])), gap, ov_s, ov_a,
                               gap < degenerate_tol, float(target))
