"""Thermal states, unitary and Lindblad evolution, information measures."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import eig, expm, lu_factor, lu_solve
from scipy.sparse.linalg import expm_multiply

from .qops import (
    DensityMatrix,
    Operator,
    SubsystemLayout,
    hermitian_eigendecomposition,
    pauli,
)
from .spectral import FORBIDDEN_TOL, EigenSystem, qrs_quadrature
from .models import spin_operators

RTOL = 1e-9
ATOL = 1e-11
# norm contract 1e-9 over ~1e3 periods needs a tighter setting than RTOL
UNITARY_RTOL = 1e-12
UNITARY_ATOL = 1e-14
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-7
NORM_TOL = 1e-9
ENTROPY_CLAMP = 1e-14


class AccuracyError(RuntimeError):
    """Integration drifted beyond the trace, positivity or norm contract."""


class IntegrationError(RuntimeError):
    """The adaptive integrator failed (typically step-size underflow)."""


@dataclass(frozen=True)
class ThermalParams:
    theta: float
    scale: object | None = None

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be non-negative")

    @classmethod
    def from_temperature(cls, temperature_k: float, scale) -> "ThermalParams":
        return cls(scale.theta(temperature_k), scale)


@dataclass
class Trajectory:
    """Time grid plus named observables (and optionally the states)."""

    times: np.ndarray
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    states: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or (len(self.times) > 1 and np.any(np.diff(self.times) <= 0)):
            raise ValueError("times must be a strictly increasing 1-D grid")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.observables[name]

    def rows(self) -> Iterable[tuple[float, str, float]]:
        for i, t in enumerate(self.times):
            for name, vals in self.observables.items():
                yield float(t), name, float(vals[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "observable_name", "value"])
            for t, name, v in self.rows():
                w.writerow([f"{t:.12g}", name, f"{v:.12g}"])


# ---------------------------------------------------------------- thermal


def gibbs_state(H: Operator, thermal: ThermalParams | float) -> DensityMatrix:
    """``exp(-H/theta)/Z``; at ``theta = 0`` the uniform mixture over the ground space."""
    theta = thermal.theta if isinstance(thermal, ThermalParams) else float(thermal)
    if theta < 0:
        raise ValueError("theta must be non-negative")
    vals, vecs = hermitian_eigendecomposition(H)
    shifted = vals - vals[0]
    if theta == 0:
        w = (shifted < 1e-9).astype(float)
    elif np.isinf(theta):
        w = np.ones_like(vals)
    else:
        w = np.exp(-shifted / theta)
    w /= w.sum()
    rho = (vecs * w) @ vecs.conj().T
    return DensityMatrix(0.5 * (rho + rho.conj().T), H.layout)


# ---------------------------------------------------------------- dissipators


@dataclass(frozen=True)
class DressedJump:
    """Downward (or, with detailed balance, upward) dressed transition j <- k."""

    j: int
    k: int
    rate: float
    gamma_x: float
    gamma_q: float

    def operator(self, es: EigenSystem) -> Operator:
        O = np.outer(es.state(self.j), es.state(self.k).conj())
        return Operator(O, es.layout)


def _clean(X: np.ndarray) -> np.ndarray:
    # selection-rule zeros are round-off; make them exact
    X = X.copy()
    X[np.abs(X) < FORBIDDEN_TOL] = 0.0
    return X


def dressed_jump_operators(es: EigenSystem, kappa: float, gamma: float, mediator, levels: int | None = None,
                           detailed_balance_theta: float | None = None) -> list[DressedJump]:
    """Dressed-state decay channels ``|psi_j><psi_k|`` for ``j < k``.

    ``Gamma_X^{jk} = sum_r (kappa/omega_r) nu_kj |X^r_jk|^2`` and
    ``Gamma_gamma^{jk} = sum_i (gamma/omega_q_i) nu_kj |<psi_j|sigma^x_i|psi_k>|^2``.
    ``mediator`` is a :class:`QrsParams` or :class:`DickeParams` supplying
    mode and qubit frequencies.  Zero-rate channels are dropped.
    """
    n = len(es) if levels is None else min(levels, len(es))
    if kappa == 0 and gamma == 0:
        return []
    mode_freqs = getattr(mediator, "mode_freqs", None) or (mediator.omega_cav,)
    from .models import mode_quadratures

    quads = mode_quadratures(es.layout)
    sx = spin_operators(es.layout, "x")
    Xr = [_clean(es.matrix(q, n)) for q in quads]
    Sx = [_clean(es.matrix(s, n)) for s in sx]
    out = []
    for k in range(n):
        for j in range(k):
            nu = es.nu(k, j)
            if nu <= 0:
                continue
            gx = sum(kappa / w * nu * abs(X[j, k]) ** 2 for w, X in zip(mode_freqs, Xr))
            gq = sum(gamma / wq * nu * abs(S[j, k]) ** 2 for wq, S in zip(mediator.omega_q, Sx))
            if gx + gq > 0:
                out.append(DressedJump(j, k, gx + gq, gx, gq))
                if detailed_balance_theta:
                    f = np.exp(-nu / detailed_balance_theta)
                    out.append(DressedJump(k, j, (gx + gq) * f, gx * f, gq * f))
    return out


@dataclass
class LindbladSpec:
    H: Operator
    dressed_jumps: list[tuple[Operator, float]] = field(default_factory=list)
    local_jumps: list[tuple[Operator, float]] = field(default_factory=list)

    def __post_init__(self):
        for O, r in self.jumps:
            if r < 0:
                raise ValueError(f"negative rate {r}")
            if O.dim != self.H.dim:
                raise ValueError("jump operator dimension does not match H")

    @property
    def jumps(self) -> list[tuple[Operator, float]]:
        return list(self.dressed_jumps) + list(self.local_jumps)

    @property
    def layout(self) -> SubsystemLayout:
        return self.H.layout


def dissipator(O: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``D[O]rho = (2 O rho O^+ - rho O^+ O - O^+ O rho) / 2``."""
    Od = O.conj().T
    OdO = Od @ O
    return O @ rho @ Od - 0.5 * (rho @ OdO + OdO @ rho)


def liouvillian(H, jumps: Sequence[tuple[object, float]]) -> sp.csr_matrix:
    """Sparse generator acting on row-major ``vec(rho)``."""
    h = sp.csr_matrix(H.data if isinstance(H, Operator) else H)
    d = h.shape[0]
    eye = sp.identity(d, format="csr", dtype=complex)
    L = -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for O, rate in jumps:
        if rate == 0:
            continue
        o = sp.csr_matrix(O.data if isinstance(O, Operator) else O)
        odo = (o.conj().T @ o).tocsr()
        L = L + rate * (sp.kron(o, o.conj()) - 0.5 * sp.kron(odo, eye) - 0.5 * sp.kron(eye, odo.T))
    return L.tocsr()


def _uniform(times: np.ndarray) -> bool:
    if len(times) < 3:
        return True
    dt = np.diff(times)
    return bool(np.allclose(dt, dt[0], rtol=1e-12, atol=1e-12 * max(1.0, abs(times[-1]))))


class SpectralPropagator:
    """``exp(L t)`` through a dense eigendecomposition of the generator.

    After one ``O(n^3)`` factorization any time, on or off a grid, costs a
    diagonal scaling.  The decomposition is rejected (``AccuracyError``)
    when the eigenvector matrix is ill-conditioned or the residual
    ``||L R - R diag(lam)||`` is not at round-off level.
    """

    def __init__(self, L, max_condition: float = 1e10, residual_tol: float = 1e-10):
        Ld = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=complex)
        self.eigenvalues, self.vectors = eig(Ld)
        scale = max(np.abs(Ld).max(), 1.0)
        resid = np.abs(Ld @ self.vectors - self.vectors * self.eigenvalues).max() / scale
        cond = np.linalg.cond(self.vectors)
        if not np.isfinite(cond) or cond > max_condition or resid > residual_tol:
            raise AccuracyError(f"generator not safely diagonalizable (cond {cond:.2e}, residual {resid:.2e})")
        if self.eigenvalues.real.max() > 1e-9 * scale:
            raise AccuracyError("generator has a growing mode")
        self.condition = float(cond)
        self._lu = lu_factor(self.vectors)

    def coefficients(self, vecs: np.ndarray) -> np.ndarray:
        return lu_solve(self._lu, np.asarray(vecs, dtype=complex))

    def observe(self, A: np.ndarray, vecs: np.ndarray, times) -> np.ndarray:
        """``A exp(L t) vecs`` for each time; shape ``(T, rows(A), cols(vecs))``."""
        AR = np.asarray(A) @ self.vectors
        C = self.coefficients(vecs)
        ph = np.exp(np.outer(np.asarray(times, dtype=float), self.eigenvalues))
        return np.einsum("aj,tj,jm->tam", AR, ph, C)

    def apply(self, vecs: np.ndarray, times) -> np.ndarray:
        return self.observe(np.eye(len(self.eigenvalues)), vecs, times)


DENSE_LIMIT = 4096
KRYLOV_WORK_RATIO = 0.2  # break-even of nnz * ||L||_1 * span against n^3, measured


def _auto_method(L, span: float) -> str:
    n = L.shape[0]
    if n > DENSE_LIMIT:
        return "krylov"
    if sp.issparse(L):
        nnz, norm = L.nnz, float(abs(L).sum(axis=0).max())
    else:
        nnz, norm = np.count_nonzero(L), float(np.abs(L).sum(axis=0).max())
    return "krylov" if nnz * norm * span < KRYLOV_WORK_RATIO * n ** 3 else "dense"


def propagate(L: sp.spmatrix, vecs: np.ndarray, times: np.ndarray, t0: float = 0.0,
              method: str = "auto") -> np.ndarray:
    """``exp(L (t - t0)) vecs`` for every ``t`` in ``times``; shape ``(T, n, m)``.

    ``method="dense"`` steps with the dense propagator ``expm(L dt)`` (one
    exponential per distinct step), ``"krylov"`` uses the sparse action
    ``expm_multiply``.  ``"auto"`` compares the Krylov work
    ``nnz * ||L||_1 * span`` with the cubic dense cost and never goes dense
    above ``DENSE_LIMIT``.
    """
    times = np.asarray(times, dtype=float)
    vecs = np.asarray(vecs, dtype=complex)
    single = vecs.ndim == 1
    if single:
        vecs = vecs[:, None]
    if times[0] < t0:
        raise ValueError("times must start at or after t0")
    if method == "auto":
        method = _auto_method(L, float(times[-1] - t0))
    if method not in ("dense", "krylov"):
        raise ValueError(f"unknown propagation method {method!r}")
    if method == "dense":
        Ld = L.toarray() if sp.issparse(L) else np.asarray(L)
        cache: dict[float, np.ndarray] = {}

        def step(dt, v):
            key = round(dt, 12)
            if key not in cache:
                cache[key] = expm(Ld * dt)
            return cache[key] @ v
    else:
        def step(dt, v):
            return expm_multiply(L * dt, v)

    start = vecs if times[0] == t0 else step(times[0] - t0, vecs)
    if method == "krylov" and len(times) > 2 and _uniform(times):
        out = expm_multiply(L, start, start=0.0, stop=times[-1] - times[0], num=len(times), endpoint=True)
    else:
        dts = np.diff(times)
        if len(dts) and _uniform(times):
            dts = np.full_like(dts, (times[-1] - times[0]) / (len(times) - 1))
        out = [start]
        cur = start
        for dt in dts:
            cur = step(dt, cur)
            out.append(cur)
        out = np.array(out)
    return out[:, :, 0] if single else out


def _check_state(rho: np.ndarray, t: float) -> None:
    tr = np.trace(rho)
    if abs(tr - 1) > TRACE_TOL:
        raise AccuracyError(f"trace drift {abs(tr - 1):.2e} at t = {t:.6g}")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lo < -POSITIVITY_TOL:
        raise AccuracyError(f"negative eigenvalue {lo:.2e} at t = {t:.6g}")


Observable = Callable[[np.ndarray], float]


def _observe(observables: Mapping[str, Observable] | None, states, times) -> dict[str, np.ndarray]:
    if not observables:
        return {}
    return {name: np.array([f(s) for s in states]) for name, f in observables.items()}


def evolve_lindblad(spec: LindbladSpec, rho0, times, observables: Mapping[str, Observable] | None = None,
                    store_states: bool = True, check: bool = True,
                    hamiltonian_t: Callable[[float], np.ndarray] | None = None) -> Trajectory:
    """Integrate the master equation from ``times[0]``.

    A time-independent generator is propagated with the exact action of
    its exponential.  Passing ``hamiltonian_t`` (an extra ``H(t)`` added to
    ``spec.H``) switches to adaptive DOP853 at rtol 1e-9 / atol 1e-11.
    Every sampled state is checked for trace drift and positivity.
    """
    times = np.asarray(times, dtype=float)
    rho0 = rho0.data if isinstance(rho0, Operator) else np.asarray(rho0, dtype=complex)
    d = spec.H.dim
    if rho0.shape != (d, d):
        raise ValueError("initial state does not match the Hamiltonian dimension")
    if hamiltonian_t is None:
        L = liouvillian(spec.H, spec.jumps)
        flat = propagate(L, rho0.ravel(), times, t0=times[0])
        states = flat.reshape(len(times), d, d)
    else:
        H0 = spec.H.data
        jumps = [(O.data, r) for O, r in spec.jumps if r]

        def rhs(t, y):
            rho = y.reshape(d, d)
            H = H0 + hamiltonian_t(t)
            out = -1j * (H @ rho - rho @ H)
            for O, r in jumps:
                out = out + r * dissipator(O, rho)
            return out.ravel()

        sol = solve_ivp(rhs, (times[0], times[-1]), rho0.ravel(), method="DOP853", t_eval=times,
                        rtol=RTOL, atol=ATOL)
        if not sol.success:
            raise IntegrationError(sol.message)
        states = sol.y.T.reshape(len(times), d, d)
    if check:
        for t, rho in zip(times, states):
            _check_state(rho, t)
    obs = _observe(observables, states, times)
    return Trajectory(times, obs, states if store_states else None)


def evolve_unitary(H, state0, times, observables: Mapping[str, Observable] | None = None,
                   store_states: bool = True) -> Trajectory:
    """Schrodinger/von Neumann evolution of a ket or density matrix.

    ``H`` is an :class:`Operator` (evolved exactly through its
    eigendecomposition) or a callable ``t -> ndarray`` (adaptive DOP853).
    """
    times = np.asarray(times, dtype=float)
    s0 = state0.data if isinstance(state0, Operator) else np.asarray(state0, dtype=complex)
    is_ket = s0.ndim == 1
    if isinstance(H, Operator):
        E, V = hermitian_eigendecomposition(H)
        dt = times - times[0]
        if is_ket:
            c = V.conj().T @ s0
            states = (V @ (np.exp(-1j * np.outer(E, dt)) * c[:, None])).T
        else:
            r = V.conj().T @ s0 @ V
            states = np.empty((len(times),) + s0.shape, dtype=complex)
            for i, t in enumerate(dt):
                ph = np.exp(-1j * E * t)
                states[i] = V @ (ph[:, None] * r * ph.conj()[None, :]) @ V.conj().T
    else:
        d = s0.shape[0]

        def rhs(t, y):
            Ht = H(t)
            if is_ket:
                return -1j * (Ht @ y)
            rho = y.reshape(d, d)
            return (-1j * (Ht @ rho - rho @ Ht)).ravel()

        sol = solve_ivp(rhs, (times[0], times[-1]), s0.ravel().astype(complex), method="DOP853",
                        t_eval=times, rtol=UNITARY_RTOL, atol=UNITARY_ATOL)
        if not sol.success:
            raise IntegrationError(sol.message)
        states = sol.y.T if is_ket else sol.y.T.reshape((len(times),) + s0.shape)
    norms = np.linalg.norm(states, axis=1) ** 2 if is_ket else np.real(np.einsum("tii->t", states))
    drift = float(np.max(np.abs(norms - norms[0])))
    if drift > NORM_TOL:
        raise AccuracyError(f"norm drift {drift:.2e} exceeds {NORM_TOL}")
    obs = _observe(observables, states, times)
    return Trajectory(times, obs, states if store_states else None)


# ---------------------------------------------------------------- measures


def state_fidelity(rho, chi) -> float:
    """``<chi|rho|chi>`` (or ``|<chi|psi>|^2`` for a ket)."""
    r = rho.data if isinstance(rho, Operator) else np.asarray(rho)
    chi = np.asarray(chi, dtype=complex).ravel()
    if r.shape[0] != chi.shape[0]:
        raise ValueError(f"dimension mismatch: state {r.shape[0]} vs chi {chi.shape[0]}")
    if r.ndim == 1:
        return float(abs(np.vdot(chi, r)) ** 2)
    val = np.vdot(chi, r @ chi)
    return float(np.clip(val.real, 0.0, 1.0))


_YY = np.kron(pauli("y").data, pauli("y").data)


def concurrence(rho) -> float:
    """Wootters concurrence of a two-qubit density matrix.

    The ``lambda_i`` are taken as singular values of the symmetric matrix
    ``tau = W^T (sigma_y x sigma_y) W`` with ``rho = W W^+``.  This avoids square
    roots of near-zero eigenvalues of ``rho rho~``, which would amplify
    round-off to ~1e-8 for rank-deficient states.
    """
    r = rho.data if isinstance(rho, Operator) else np.asarray(rho, dtype=complex)
    if r.shape != (4, 4):
        raise ValueError("concurrence needs a 4x4 two-qubit density matrix")
    w, v = np.linalg.eigh(0.5 * (r + r.conj().T))
    keep = w > ENTROPY_CLAMP
    W = v[:, keep] * np.sqrt(w[keep])
    lam = np.zeros(4)
    if W.shape[1]:
        sv = np.linalg.svd(W.T @ _YY @ W, compute_uv=False)
        lam[: len(sv)] = sv
    lam = np.sort(lam)[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def _binary_entropy(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def entanglement_of_formation(rho) -> float:
    """EoF in ebits from the Wootters concurrence."""
    r = rho.data if isinstance(rho, Operator) else np.asarray(rho, dtype=complex)
    if r.shape != (4, 4):
        raise ValueError("entanglement of formation needs a 4x4 density matrix")
    from .qops import check_density

    check_density(r, trace_tol=1e-8, eig_tol=1e-8)
    c = concurrence(r)
    return _binary_entropy(0.5 * (1 + np.sqrt(max(0.0, 1 - c * c))))


def von_neumann_entropy(rho) -> float:
    """``-sum p ln p`` in nats; eigenvalues below 1e-14 count as zero."""
    r = rho.data if isinstance(rho, Operator) else np.asarray(rho, dtype=complex)
    p = np.linalg.eigvalsh(0.5 * (r + r.conj().T))
    p = p[p > ENTROPY_CLAMP]
    return float(max(0.0, -np.sum(p * np.log(p))))


def qrs_quadrature_matrix(es: EigenSystem, levels: int | None = None) -> np.ndarray:
    return es.matrix(qrs_quadrature(es.layout), levels)
