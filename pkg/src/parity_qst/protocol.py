"""Transfer and state-transfer experiments built on the lower-level modules.

Dissipative runs use a dressed model: the mediator is diagonalized once,
its spectrum is truncated to levels with ``nu_k - nu_0 <= qrs_cutoff`` and
the external sites couple through the truncated quadrature matrices.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import pi, sqrt
from typing import Sequence

import numpy as np

from .dynamics import (
    TRACE_TOL,
    AccuracyError,
    LindbladSpec,
    SpectralPropagator,
    Trajectory,
    concurrence,
    dressed_jump_operators,
    entanglement_of_formation,
    evolve_unitary,
    gibbs_state,
    liouvillian,
    propagate,
    von_neumann_entropy,
)
from .effective import EffectiveParams, build_effective, effective_params, reduced_ket
from .models import (
    DickeParams,
    FullModelParams,
    QrsParams,
    _external_ops,
    build_dicke,
    build_dicke_mediator,
    build_full,
    build_qrs,
    mode_quadratures,
)
from .qops import DensityMatrix, Operator, SubsystemLayout, hermitian_eigendecomposition, kron, pauli
from .spectral import EigenSystem, analyze_mediator, analyze_qrs, forbidden_level
from .units import PhysicalScale

SCHEMES = ("fibonacci", "seeded-uniform")
QST_METHODS = ("auto", "dressed", "exact")
GOLDEN_ANGLE = pi * (3.0 - sqrt(5.0))

# reference device: T = 100 mK, omega_cav = 2 pi x 8.13 GHz, rates as Gamma/2pi in MHz
REFERENCE_TEMPERATURE_K = 0.1
REFERENCE_RATES_MHZ = {"kappa": 0.10, "gamma": 15.0, "gamma_local": 0.48, "gamma_phi": 0.15}

_SX = pauli("x").data
_SY = pauli("y").data
_SZ = pauli("z").data
_UP = np.array([1.0, 0.0], dtype=complex)
_DOWN = np.array([0.0, 1.0], dtype=complex)


class SampleError(RuntimeError):
    def __init__(self, index: int, state: "BlochState", cause: str):
        super().__init__(f"Bloch sample {index} (theta={state.theta_angle:.6f}, phi={state.phi_angle:.6f}): {cause}")
        self.index = index
        self.state = state


# ---------------------------------------------------------------- Bloch sampling


@dataclass(frozen=True)
class BlochState:
    """``|chi> = cos(theta)|up> + sin(theta) e^{i phi}|down>``.

    ``theta_angle`` is the half polar angle: the Bloch vector has polar
    angle ``2 * theta_angle``.
    """

    theta_angle: float
    phi_angle: float

    def __post_init__(self):
        if not (0.0 <= self.theta_angle <= pi):
            raise ValueError("theta_angle must lie in [0, pi]")
        if not (0.0 <= self.phi_angle < 2 * pi):
            raise ValueError("phi_angle must lie in [0, 2 pi)")

    @classmethod
    def from_vector(cls, x: float, y: float, z: float) -> "BlochState":
        polar = float(np.arccos(np.clip(z, -1.0, 1.0)))
        phi = float(np.arctan2(y, x)) % (2 * pi)
        return cls(0.5 * polar, phi)

    def ket(self) -> np.ndarray:
        return np.cos(self.theta_angle) * _UP + np.sin(self.theta_angle) * np.exp(1j * self.phi_angle) * _DOWN

    def bloch_vector(self) -> np.ndarray:
        a = 2 * self.theta_angle
        return np.array([np.sin(a) * np.cos(self.phi_angle), np.sin(a) * np.sin(self.phi_angle), np.cos(a)])


def bloch_samples(n: int, scheme: str = "fibonacci", seed: int = 0) -> list[BlochState]:
    """Pure input states spread over the Bloch sphere.

    ``fibonacci`` places ``z_i = 1 - (2i + 1)/n`` with azimuths advancing by
    the golden angle.  ``seeded-uniform`` draws ``z ~ U[-1, 1]`` and
    ``phi ~ U[0, 2 pi)`` from a PCG64 stream seeded with ``(seed, i)`` so a
    sample does not depend on ``n``.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown sampling scheme {scheme!r}; choose from {SCHEMES}")
    out = []
    for i in range(n):
        if scheme == "fibonacci":
            z = 1.0 - (2 * i + 1) / n
            phi = (i * GOLDEN_ANGLE) % (2 * pi)
        else:
            rng = np.random.default_rng([seed, i])
            z, phi = rng.uniform(-1.0, 1.0), rng.uniform(0.0, 2 * pi)
        polar = float(np.arccos(z))
        out.append(BlochState(0.5 * polar, float(phi)))
    return out


def bloch_vectors(samples: Sequence[BlochState]) -> np.ndarray:
    return np.array([s.bloch_vector() for s in samples])


# ---------------------------------------------------------------- configuration


Model = FullModelParams | DickeParams


@dataclass(frozen=True)
class LossRates:
    """Dimensionless rates (units of omega_cav)."""

    kappa: float = 0.0
    gamma: float = 0.0
    gamma_local: tuple[float, float] = (0.0, 0.0)
    gamma_phi: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for name in ("gamma_local", "gamma_phi"):
            v = getattr(self, name)
            object.__setattr__(self, name, (float(v), float(v)) if np.isscalar(v) else tuple(float(x) for x in v))
        vals = [self.kappa, self.gamma, *self.gamma_local, *self.gamma_phi]
        if min(vals) < 0:
            raise ValueError("loss rates must be non-negative")

    @classmethod
    def from_mhz(cls, scale: PhysicalScale, kappa=0.0, gamma=0.0, gamma_local=0.0, gamma_phi=0.0) -> "LossRates":
        def conv(v):
            return scale.rate(v) if np.isscalar(v) else tuple(scale.rate(x) for x in v)

        return cls(conv(kappa), conv(gamma), conv(gamma_local), conv(gamma_phi))

    @property
    def lossless(self) -> bool:
        return self.kappa == 0 and self.gamma == 0 and not any(self.gamma_local) and not any(self.gamma_phi)


@dataclass(frozen=True)
class QstConfig:
    model: Model
    theta: float = 0.0
    rates: LossRates = field(default_factory=LossRates)
    bloch_samples: int = 4000
    scheme: str = "fibonacci"
    seed: int = 0
    t_max: float | None = None
    n_times: int = 600
    qrs_cutoff: float = 3.0
    channels: str = "allowed"
    detailed_balance: bool = False
    refine: bool = True
    method: str = "auto"

    def __post_init__(self):
        if self.bloch_samples < 1 or self.n_times < 2:
            raise ValueError("sample and time-grid counts must be positive")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown sampling scheme {self.scheme!r}")
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.qrs_cutoff <= 0:
            raise ValueError("qrs_cutoff must be positive")
        if self.method not in QST_METHODS:
            raise ValueError(f"method must be one of {QST_METHODS}")


@dataclass(frozen=True)
class TransferConfig:
    model: Model
    t_max: float | None = None
    n_times: int = 800
    channels: str = "allowed"
    effective_only: bool = False

    def __post_init__(self):
        if self.n_times < 2:
            raise ValueError("n_times must be at least 2")


def mediator_system(model: Model) -> tuple[Operator, EigenSystem]:
    if isinstance(model, FullModelParams):
        return build_qrs(model.qrs), analyze_qrs(model.qrs)
    H = build_dicke_mediator(model)
    return H, analyze_mediator(H, model.omega_q[0] == model.omega_q[1])


def full_hamiltonian(model: Model) -> Operator:
    return build_full(model) if isinstance(model, FullModelParams) else build_dicke(model)


def _mediator_params(model: Model):
    return model.qrs if isinstance(model, FullModelParams) else model


def _lambda_matrix(model: Model) -> np.ndarray:
    if isinstance(model, FullModelParams):
        return np.array([[model.lam[0]], [model.lam[1]]])
    return np.asarray(model.lambda_matrix, dtype=float)


def _coupling_direction(model: Model, es: EigenSystem) -> tuple[Operator, tuple[float, float]]:
    """Single quadrature seen by the external sites and the matching strengths."""
    lam = _lambda_matrix(model)
    norms = np.linalg.norm(lam, axis=1)
    ref = lam[int(np.argmax(norms))]
    if norms.max() == 0:
        return sum(mode_quadratures(es.layout)[1:], mode_quadratures(es.layout)[0]), (0.0, 0.0)
    unit = ref / np.linalg.norm(ref)
    for j in range(2):
        if norms[j] and not np.allclose(lam[j] / norms[j], unit, atol=1e-12):
            raise ValueError("external sites couple to different mode combinations; no single effective channel")
    quads = mode_quadratures(es.layout)
    op = quads[0] * unit[0]
    for q, u in zip(quads[1:], unit[1:]):
        op = op + q * u
    return op, (float(norms[0]), float(norms[1]))


def model_effective(model: Model, channels: str = "allowed", es: EigenSystem | None = None) -> EffectiveParams:
    es = mediator_system(model)[1] if es is None else es
    coupling, lam = _coupling_direction(model, es)
    return effective_params(es, model.omega_ext, lam, coupling=coupling, channels=channels)


def reference_model(g: float = 0.3, lam: float = 0.02, n_fock: int = 16) -> FullModelParams:
    """Identical resonant Rabi qubits with external qubits tuned to ``nu_3 - nu_0``."""
    qrs = QrsParams(g=(g, g), n_fock=n_fock)
    w = analyze_qrs(qrs).nu(forbidden_level(analyze_qrs(qrs)))
    return FullModelParams(qrs=qrs, omega_ext=(w, w), lam=(lam, lam))


def reference_dicke(g: float = 0.3, lam: float = 0.02, modes: int = 2, n_fock: int = 8, **kw) -> DickeParams:
    """Degenerate manifold with external sites at the forbidden mediator transition."""
    base = DickeParams.degenerate(g=g, lam=lam, modes=modes, n_fock=n_fock, **kw)
    es = mediator_system(base)[1]
    w = es.nu(forbidden_level(es))
    return replace(base, omega_ext=(w, w))


def reference_rates(scale: PhysicalScale | None = None) -> LossRates:
    return LossRates.from_mhz(scale or PhysicalScale(), **REFERENCE_RATES_MHZ)


def reference_qst_config(mediator: str = "rabi", samples: int = 4000, **kw) -> QstConfig:
    scale = PhysicalScale()
    model = reference_model() if mediator == "rabi" else reference_dicke()
    if mediator != "rabi":
        kw.setdefault("qrs_cutoff", 2.2)  # free-mode ladder doubles the level count
    return QstConfig(model=model, theta=scale.theta(REFERENCE_TEMPERATURE_K), rates=reference_rates(scale),
                     bloch_samples=samples, **kw)


# ---------------------------------------------------------------- thermal checks


@dataclass(frozen=True)
class ThermalProductReport:
    fidelity: float
    uhlmann: float
    normalized_overlap: float
    theta: float


def _sqrt_psd(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def thermal_product_check(model: Model, theta: float) -> ThermalProductReport:
    """Compare the full Gibbs state with ``rho_th(mediator) (x) |dd><dd|``.

    ``fidelity`` is ``tr(rho_Gibbs rho_p)``; Uhlmann fidelity and the
    normalized Hilbert-Schmidt overlap are returned alongside.
    """
    H = full_hamiltonian(model)
    Hm, _ = mediator_system(model)
    rho_g = gibbs_state(H, theta).data
    rho_m = gibbs_state(Hm, theta).data
    d = H.layout.dims[-1]
    down = np.zeros(d, dtype=complex)
    down[1] = 1.0
    dd = np.kron(down, down)
    rho_p = np.kron(rho_m, np.outer(dd, dd))
    f = float(np.real(np.sum(rho_g * rho_p.T)))
    s = _sqrt_psd(rho_g)
    ev = np.linalg.eigvalsh(s @ rho_p @ s)
    uhl = float(np.sum(np.sqrt(np.clip(ev, 0.0, None))) ** 2)
    norm = f / sqrt(float(np.real(np.sum(rho_g * rho_g.T))) * float(np.real(np.sum(rho_p * rho_p.T))))
    return ThermalProductReport(f, min(uhl, 1.0), norm, float(theta))


def prepare_qst_state(model: Model, theta: float, chi: BlochState) -> DensityMatrix:
    """``rho_th(mediator) (x) |chi><chi| (x) |down><down|`` on the full layout."""
    Hm, _ = mediator_system(model)
    rho_m = gibbs_state(Hm, theta).data
    d = full_hamiltonian_layout(model).dims[-1]
    c = np.zeros(d, dtype=complex)
    c[:2] = chi.ket()
    dn = np.zeros(d, dtype=complex)
    dn[1] = 1.0
    return DensityMatrix(kron(rho_m, np.outer(c, c.conj()), np.outer(dn, dn)), full_hamiltonian_layout(model))


def full_hamiltonian_layout(model: Model) -> SubsystemLayout:
    return model.layout


# ---------------------------------------------------------------- dressed model


@dataclass
class DressedModel:
    """Mediator eigenbasis truncated to ``levels`` states plus two external sites."""

    es: EigenSystem
    levels: int
    H: Operator
    jumps: list[tuple[Operator, float]]
    local_jumps: list[tuple[Operator, float]]
    ext_dim: int

    @property
    def layout(self) -> SubsystemLayout:
        return self.H.layout

    def thermal_mediator(self, theta: float) -> np.ndarray:
        nu = self.es.freqs[: self.levels] - self.es.freqs[0]
        if theta == 0:
            p = (nu < 1e-9).astype(float)
        else:
            p = np.exp(-nu / theta)
        return np.diag(p / p.sum()).astype(complex)

    def spec(self) -> LindbladSpec:
        return LindbladSpec(self.H, self.jumps, self.local_jumps)


def _truncation(es: EigenSystem, cutoff: float) -> int:
    nu = es.freqs - es.freqs[0]
    k = int(np.searchsorted(nu, cutoff, side="right"))
    while k < len(nu) and nu[k] - nu[k - 1] < 1e-9:  # never split a degenerate cluster
        k += 1
    return max(k, 2)


def dressed_model(model: Model, rates: LossRates = LossRates(), qrs_cutoff: float = 3.0,
                  detailed_balance_theta: float | None = None, es: EigenSystem | None = None) -> DressedModel:
    es = mediator_system(model)[1] if es is None else es
    K = _truncation(es, qrs_cutoff)
    levels = model.external_levels if isinstance(model, DickeParams) else 2
    anh = model.anharmonicity if isinstance(model, DickeParams) else 0.0
    role = "external-qubit" if levels == 2 else "transmon"
    lay = SubsystemLayout((K, levels, levels), ("qrs-level", role, role))
    eye_k = np.eye(K)
    eye_e = np.eye(levels)
    nu = es.freqs[:K] - es.freqs[0]
    H = kron(np.diag(nu), eye_e, eye_e).astype(complex)
    lam = _lambda_matrix(model)
    Xr = [es.matrix(q, K) for q in mode_quadratures(es.layout)]
    ext = [_external_ops(levels, model.omega_ext[j], anh) for j in range(2)]
    for j in range(2):
        h, n, _ = ext[j]
        local = [h, eye_e] if j == 0 else [eye_e, h]
        H = H + kron(eye_k, *local)
        C = sum(lam[j, r] * Xr[r] for r in range(len(Xr)))
        nn = [n, eye_e] if j == 0 else [eye_e, n]
        H = H + kron(C, *nn)
    H = 0.5 * (H + H.conj().T)
    jumps = []
    for dj in dressed_jump_operators(es, rates.kappa, rates.gamma, _mediator_params(model), levels=K,
                                     detailed_balance_theta=detailed_balance_theta):
        P = np.zeros((K, K), dtype=complex)
        P[dj.j, dj.k] = 1.0
        jumps.append((Operator(kron(P, eye_e, eye_e), lay), dj.rate))
    local_jumps = []
    for j in range(2):
        _, n, z = ext[j]
        for op, rate in ((n, rates.gamma_local[j]), (z, rates.gamma_phi[j])):
            if rate:
                fac = [op, eye_e] if j == 0 else [eye_e, op]
                local_jumps.append((Operator(kron(eye_k, *fac), lay), rate))
    return DressedModel(es, K, Operator(H, lay), jumps, local_jumps, levels)


# ---------------------------------------------------------------- QST


@dataclass
class QstResult:
    trajectory: Trajectory
    samples: list[BlochState]
    per_sample: np.ndarray  # (n_samples, n_times)
    channel: np.ndarray  # (n_times, 3, 3) Bloch matrix M
    offset: np.ndarray  # (n_times, 3)
    peak: float
    peak_time: float
    peak_envelope: float
    peak_envelope_time: float
    levels: int
    effective: EffectiveParams
    refined: bool

    @property
    def per_sample_min(self) -> np.ndarray:
        return self.per_sample.min(axis=1)

    @property
    def per_sample_max(self) -> np.ndarray:
        return self.per_sample.max(axis=1)


def _qubit_inputs(rho_m: np.ndarray, d: int) -> list[np.ndarray]:
    dn = np.zeros((d, d), dtype=complex)
    dn[1, 1] = 1.0
    out = []
    for op in (np.eye(2), _SX, _SY, _SZ):
        big = np.zeros((d, d), dtype=complex)
        big[:2, :2] = op
        out.append(kron(rho_m, big, dn))
    return out


def _bloch_channel(vecs: np.ndarray, K: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Bloch matrix ``M_ji`` and offset ``c_j`` of the map onto the second site."""
    T = vecs.shape[0]
    R = vecs.transpose(0, 2, 1).reshape(T, 4, K * d, d, K * d, d)
    q2 = np.einsum("tcmamb->tcab", R)[:, :, :2, :2]
    paulis = np.stack([_SX, _SY, _SZ])
    proj = np.real(np.einsum("jba,tcab->tcj", paulis, q2)) / 2
    return proj[:, 1:, :].transpose(0, 2, 1), proj[:, 0, :]


def _sample_fidelities(M: np.ndarray, c: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``(1 + r . (M r + c)) / 2`` for every sample and time; shape ``(S, T)``."""
    out = np.einsum("tji,si->stj", M, r) + c[None, :, :]
    return 0.5 * (1.0 + np.einsum("sj,stj->st", r, out))


def _envelope(M: np.ndarray) -> np.ndarray:
    sv = np.linalg.svd(M[:, :2, :2], compute_uv=False).sum(axis=1)
    return 0.5 + (M[:, 2, 2] + sv) / 6


def _quadratic_peak(t: np.ndarray, f: np.ndarray) -> tuple[float, float]:
    k = int(np.argmax(f))
    if k == 0 or k == len(f) - 1:
        return float(f[k]), float(t[k])
    y0, y1, y2 = f[k - 1], f[k], f[k + 1]
    den = y0 - 2 * y1 + y2
    if den >= 0:
        return float(y1), float(t[k])
    h = t[k + 1] - t[k]
    s = 0.5 * (y0 - y2) / den
    return float(y1 - 0.25 * (y0 - y2) * s), float(t[k] + s * h)


def _best_lobe(t: np.ndarray, f: np.ndarray, evaluate, candidates: int = 8) -> tuple[float, float]:
    """Quadratic vertex of the highest local maxima, re-evaluated exactly."""
    k = np.flatnonzero((f[1:-1] >= f[:-2]) & (f[1:-1] >= f[2:])) + 1
    if k.size == 0:
        i = int(np.argmax(f))
        return float(f[i]), float(t[i])
    k = k[np.argsort(f[k])[::-1][:candidates]]
    guesses = np.array([_quadratic_peak(t[i - 1:i + 2], f[i - 1:i + 2])[1] for i in k])
    order = np.argsort(guesses)
    vals = np.asarray(evaluate(guesses[order]))
    j = int(np.argmax(vals))
    best_t, best_f = float(guesses[order][j]), float(vals[j])
    i = int(np.argmax(f[k]))
    if f[k][i] > best_f:
        return float(f[k][i]), float(t[k][i])
    return best_f, best_t


def qst_time_grid(cfg: QstConfig, eff: EffectiveParams) -> np.ndarray:
    t_max = cfg.t_max if cfg.t_max is not None else 2.5 * eff.half_period
    if not np.isfinite(t_max):
        raise ValueError("no transfer channel: give t_max explicitly")
    return np.linspace(0.0, t_max, cfg.n_times)


def _site2_readout(K: int, d: int) -> np.ndarray:
    """Rows ``vec(O^T)`` so that ``row . vec(rho)`` gives ``tr(rho)`` and ``tr(sigma_j q2)/2``."""
    rows = [np.eye(K * d * d).ravel()]
    for s in (_SX, _SY, _SZ):
        big = np.zeros((d, d), dtype=complex)
        big[:2, :2] = s
        rows.append(0.5 * kron(np.eye(K * d), big).T.ravel())
    return np.array(rows)


def _dressed_channel(cfg: QstConfig, es: EigenSystem):
    dm = dressed_model(cfg.model, cfg.rates, cfg.qrs_cutoff,
                       cfg.theta if cfg.detailed_balance and cfg.theta > 0 else None, es)
    K, d = dm.levels, dm.ext_dim
    L = liouvillian(dm.H, dm.jumps + dm.local_jumps)
    rho_m = dm.thermal_mediator(cfg.theta)
    V = np.stack([x.ravel() for x in _qubit_inputs(rho_m, d)], axis=1)
    A = _site2_readout(K, d)
    try:
        prop = SpectralPropagator(L)

        def evolve(ts):
            return prop.observe(A, V, ts)
    except AccuracyError:
        def evolve(ts):
            return np.einsum("an,tnm->tam", A, propagate(L, V, ts, t0=0.0))

    def channel(ts):
        y = np.real(evolve(np.asarray(ts, dtype=float)))
        drift = float(np.max(np.abs(y[:, 0, 0] - 2.0))) / 2
        if drift > TRACE_TOL:
            raise AccuracyError(f"trace drift {drift:.2e}")
        return y[:, 1:, 1:], y[:, 1:, 0]

    return channel, K


THERMAL_WEIGHT_FLOOR = 1e-14


def _exact_channel(model: Model, es: EigenSystem, theta: float):
    """Lossless channel from the untruncated model.

    The thermal mediator state is split into its eigen-components; each
    pair of kets ``|psi_k>|up, down>``, ``|psi_k>|down, down>`` is evolved
    exactly, so no level truncation enters.
    """
    H = full_hamiltonian(model)
    E, W = hermitian_eigendecomposition(H)
    nu = es.freqs - es.freqs[0]
    p = (nu < 1e-9).astype(float) if theta == 0 else np.exp(-nu / theta)
    p = p / p.sum()
    keep = np.flatnonzero(p > THERMAL_WEIGHT_FLOOR)
    d = model.layout.dims[-1]
    up = np.zeros(d, dtype=complex)
    dn = np.zeros(d, dtype=complex)
    up[0] = dn[1] = 1.0
    cu = np.stack([W.conj().T @ np.kron(es.state(k), np.kron(up, dn)) for k in keep], axis=1)
    cd = np.stack([W.conj().T @ np.kron(es.state(k), np.kron(dn, dn)) for k in keep], axis=1)
    w = p[keep]

    def channel(ts):
        M = np.empty((len(ts), 3, 3))
        c = np.empty((len(ts), 3))
        paulis = np.stack([_SX, _SY, _SZ])
        for i, t in enumerate(ts):
            ph = np.exp(-1j * E * t)[:, None]
            U = (W @ (ph * cu)).reshape(-1, d, len(keep))[:, :2, :]
            Dn = (W @ (ph * cd)).reshape(-1, d, len(keep))[:, :2, :]
            # B[a][b] = sum_k p_k tr_rest |a_k(t)><b_k(t)| on site 2
            B = {}
            for a, X in (("u", U), ("d", Dn)):
                for b, Y in (("u", U), ("d", Dn)):
                    B[a + b] = np.einsum("mik,mjk,k->ij", X, Y.conj(), w)
            E_I = B["uu"] + B["dd"]
            E_ops = [B["ud"] + B["du"], -1j * B["ud"] + 1j * B["du"], B["uu"] - B["dd"]]
            proj = lambda R: np.real(np.einsum("jba,ab->j", paulis, R)) / 2  # noqa: E731
            c[i] = proj(E_I)
            M[i] = np.stack([proj(R) for R in E_ops], axis=1)
        return M, c

    return channel


def run_qst_fidelity(cfg: QstConfig, times: np.ndarray | None = None) -> QstResult:
    """Bloch-sphere-averaged fidelity of transferring ``|chi>`` from site 1 to site 2."""
    _, es = mediator_system(cfg.model)
    try:
        eff = model_effective(cfg.model, cfg.channels, es)
    except ValueError:
        eff = model_effective(cfg.model, "doublet", es)
    times = qst_time_grid(cfg, eff) if times is None else np.asarray(times, dtype=float)
    method = cfg.method
    if method == "auto":
        method = "exact" if cfg.rates.lossless and not cfg.detailed_balance else "dressed"
    if method == "exact":
        if not cfg.rates.lossless:
            raise ValueError("the exact channel is only available without losses")
        channel = _exact_channel(cfg.model, es, cfg.theta)
        K = len(es)
    else:
        channel, K = _dressed_channel(cfg, es)

    M, c = channel(times)
    samples = bloch_samples(cfg.bloch_samples, cfg.scheme, cfg.seed)
    r = bloch_vectors(samples)
    per = _sample_fidelities(M, c, r)
    bad = np.flatnonzero(~np.isfinite(per).all(axis=1) | (per.min(axis=1) < -1e-9) | (per.max(axis=1) > 1 + 1e-9))
    if bad.size:
        i = int(bad[0])
        raise SampleError(i, samples[i], "fidelity left [0, 1]")
    avg = per.mean(axis=0)
    env = _envelope(M)
    exact = 0.5 + np.trace(M, axis1=1, axis2=2) / 6
    k_env = int(np.argmax(env))
    peak_env, t_env = _quadratic_peak(times, env)
    peak, t_peak = _quadratic_peak(times, avg)
    refined = False
    if cfg.refine and len(times) > 2:
        # the lab-frame average oscillates at the site-2 frequency and the
        # envelope carries a comparable ripple, so scan a window wide enough
        # to hold the slow maximum at 1/20 of the fast period
        period = 2 * pi / max(cfg.model.omega_ext[1], 1e-3)
        slow = eff.half_period if np.isfinite(eff.half_period) else times[-1]
        span = max(0.1 * slow, 3 * period, 2 * (times[1] - times[0]))
        lo = max(times[0], times[k_env] - span)
        hi = times[k_env] + span
        fine = np.linspace(lo, hi, int(np.ceil((hi - lo) / period * 20)) + 1)
        Mf, cf = channel(fine)
        f_avg = _sample_fidelities(Mf, cf, r).mean(axis=0)
        p_fine, t_fine = _best_lobe(fine, f_avg, lambda ts: _sample_fidelities(*channel(ts), r).mean(axis=0))
        if p_fine > peak:
            peak, t_peak = p_fine, t_fine
        e_fine, te_fine = _quadratic_peak(fine, _envelope(Mf))
        if e_fine > peak_env:
            peak_env, t_env = e_fine, te_fine
        refined = True
    traj = Trajectory(times, {
        "fidelity_avg": avg,
        "fidelity_envelope": env,
        "fidelity_sphere_exact": exact,
        "fidelity_min": per.min(axis=0),
        "fidelity_max": per.max(axis=0),
    })
    traj.meta.update({"method": method, "levels": K, "theta": cfg.theta, "scheme": cfg.scheme, "samples": cfg.bloch_samples})
    return QstResult(traj, samples, per, M, c, peak, t_peak, peak_env, t_env, K, eff, refined)


def peak_versus_temperature(cfg: QstConfig, thetas: Sequence[float], workers: int | None = None,
                            samples: int | None = None) -> list[tuple[float, float]]:
    """Peak averaged fidelity at each temperature; results in input order."""
    def one(th):
        c = replace(cfg, theta=float(th), bloch_samples=samples or cfg.bloch_samples)
        return float(th), run_qst_fidelity(c).peak

    if workers == 1:
        return [one(th) for th in thetas]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, thetas))


# ---------------------------------------------------------------- transfer


@dataclass
class TransferResult:
    full: Trajectory | None
    effective: Trajectory
    effective_params: EffectiveParams
    half_period_full: float | None
    half_period_effective: float
    half_period_formula: float

    def report(self) -> dict:
        return {
            "half_period_omega_cav": self.half_period_full if self.half_period_full else self.half_period_effective,
            "half_period_full": self.half_period_full,
            "half_period_effective": self.half_period_effective,
            "half_period_formula": self.half_period_formula,
            "exchange_effective": self.effective_params.exchange,
            "j_eff_formula": self.effective_params.j_eff,
            "channels": self.effective_params.channels,
        }


def _lobe_center(t: np.ndarray, f: np.ndarray) -> float | None:
    """Centre of the first lobe of ``f`` above 1/2.

    The midpoint of the interpolated up- and down-crossings of 1/2 is
    insensitive to the small fast ripple riding on the exchange oscillation.
    """
    above = np.flatnonzero(f >= 0.5)
    if above.size == 0 or above[0] == 0:
        return None
    i = int(above[0])
    below = np.flatnonzero((f < 0.25) & (np.arange(len(f)) > i))
    if below.size == 0:
        return None
    j = int(above[above < below[0]][-1])
    if j + 1 >= len(f):
        return None

    def cross(a, b):
        return t[a] + (0.5 - f[a]) * (t[b] - t[a]) / (f[b] - f[a])

    return float(0.5 * (cross(i - 1, i) + cross(j, j + 1)))


def _transfer_grid(cfg: TransferConfig, eff: EffectiveParams) -> np.ndarray:
    t_max = cfg.t_max if cfg.t_max is not None else 2.0 * eff.half_period
    if not np.isfinite(t_max):
        raise ValueError("no transfer channel: give t_max explicitly")
    return np.linspace(0.0, t_max, cfg.n_times)


def _full_initial(model: Model, es: EigenSystem, s1: int, s2: int) -> np.ndarray:
    d = model.layout.dims[-1]
    a = np.zeros(d, dtype=complex)
    b = np.zeros(d, dtype=complex)
    a[s1] = b[s2] = 1.0
    return np.kron(es.state(0), np.kron(a, b))


def _ext_pair_states(states: np.ndarray, ext_dim: int) -> np.ndarray:
    """Reduced external-pair density matrices from global kets ``(T, D)``."""
    T = states.shape[0]
    psi = states.reshape(T, -1, ext_dim * ext_dim)
    return np.einsum("tma,tmb->tab", psi, psi.conj())


def _qubit_block(rho: np.ndarray, d: int) -> np.ndarray:
    if d == 2:
        return rho
    r = rho.reshape(d, d, d, d)[:2, :2, :2, :2].reshape(4, 4)
    return r


def _transfer_observables(states: np.ndarray, e_ud: np.ndarray, e_du: np.ndarray, ext_dim: int) -> dict:
    p_ud = np.abs(states @ e_ud.conj()) ** 2
    p_du = np.abs(states @ e_du.conj()) ** 2
    rho_e = _ext_pair_states(states, ext_dim)
    eof, ent = [], []
    for r in rho_e:
        ent.append(von_neumann_entropy(r))
        q = _qubit_block(r, ext_dim)
        tr = np.real(np.trace(q))
        eof.append(entanglement_of_formation(q / tr) if ext_dim == 2 else concurrence(q / tr))
    return {
        "P_up_down": p_ud,
        "P_down_up": p_du,
        "leakage": 1.0 - p_ud - p_du,
        "eof": np.array(eof),
        "entropy_qrs": np.array(ent),
    }


def run_population_inversion(cfg: TransferConfig) -> TransferResult:
    """Lossless exchange ``|psi0 ud> -> |psi0 du>`` under the full and effective models.

    Both trajectories carry ``P_up_down``, ``P_down_up``, ``leakage``,
    ``eof`` (external pair, ebits) and ``entropy_qrs`` (mediator, nats).
    For a pure global state the mediator entropy equals that of the pair.
    """
    _, es = mediator_system(cfg.model)
    eff = model_effective(cfg.model, cfg.channels, es)
    times = _transfer_grid(cfg, eff)
    h_eff = build_effective(eff).operator
    tr_e = evolve_unitary(h_eff, reduced_ket(0, 0, 1), times)
    obs_e = _transfer_observables(tr_e.states, reduced_ket(0, 0, 1), reduced_ket(0, 1, 0), 2)
    eff_traj = Trajectory(times, obs_e)
    full_traj = None
    t_full = None
    if not cfg.effective_only:
        H = full_hamiltonian(cfg.model)
        d = cfg.model.layout.dims[-1]
        ud = _full_initial(cfg.model, es, 0, 1)
        du = _full_initial(cfg.model, es, 1, 0)
        tr_f = evolve_unitary(H, ud, times)
        full_traj = Trajectory(times, _transfer_observables(tr_f.states, ud, du, d))
        t_full = _lobe_center(times, full_traj["P_down_up"])
    t_eff = _lobe_center(times, eff_traj["P_down_up"]) or eff.half_period
    return TransferResult(full_traj, eff_traj, eff, t_full, t_eff, eff.closed_form_half_period)


def run_correlations(cfg: TransferConfig) -> dict[str, Trajectory]:
    """Entanglement of formation and mediator entropy for both models."""
    res = run_population_inversion(cfg)
    keep = ("eof", "entropy_qrs")
    out = {"effective": Trajectory(res.effective.times, {k: res.effective[k] for k in keep})}
    if res.full is not None:
        out["full"] = Trajectory(res.full.times, {k: res.full[k] for k in keep})
    return out


def effective_correlations(eff: EffectiveParams, times: np.ndarray) -> Trajectory:
    """EoF and exact mediator entropy under ``H_eff`` from ``|psi0 ud>``."""
    tr = evolve_unitary(build_effective(eff).operator, reduced_ket(0, 0, 1), times)
    psi = tr.states.reshape(len(times), 2, 4)
    eof, ent = [], []
    for p in psi:
        rho_e = p.T @ p.conj()
        rho_q = p @ p.conj().T
        eof.append(entanglement_of_formation(rho_e))
        ent.append(von_neumann_entropy(rho_q))
    return Trajectory(times, {"eof": np.array(eof), "entropy_qrs": np.array(ent)})


# ---------------------------------------------------------------- drive


def drive_preparation(model: Model, amplitude: float = 0.01, qrs_cutoff: float = 3.0,
                      n_times: int = 400) -> Trajectory:
    """Resonant pulse on site 1 from ``|psi0 dd>`` in the lossless dressed model.

    Runs for one nominal pi-pulse duration ``pi / amplitude`` and records the
    population of ``|psi0 ud>``.
    """
    dm = dressed_model(model, LossRates(), qrs_cutoff)
    K, d = dm.levels, dm.ext_dim
    _, n, _ = _external_ops(d, model.omega_ext[0], 0.0)
    drive = kron(np.eye(K), n, np.eye(d))
    w = model.omega_ext[0]
    H0 = dm.H.data

    def H(t):
        return H0 + amplitude * np.cos(w * t) * drive

    psi0 = np.zeros(K * d * d, dtype=complex)
    psi0[np.ravel_multi_index((0, 1, 1), (K, d, d))] = 1.0
    target = np.zeros_like(psi0)
    target[np.ravel_multi_index((0, 0, 1), (K, d, d))] = 1.0
    times = np.linspace(0.0, pi / amplitude, n_times)
    return evolve_unitary(H, psi0, times, observables={"P_up_down": lambda s: abs(np.vdot(target, s)) ** 2})
