"""Reference dynamics that do not use the hierarchy.

``dense_von_neumann`` evolves system (x) truncated Fock bath exactly. It also
keeps the purified amplitude W with rho_T = W W^dagger,

    W(t) = U(t) (rho_S^{1/2} (x) rho_B^{1/2}) (1 (x) exp(i H_B t)),

from which ``ordered_moments`` builds the ordered bath moments. Within the
purification, a thermal mode a splits into a pair (b, b') with
a = sqrt(n+1) b + sqrt(n) b'^dagger; acting on W the two annihilators read

    b W  = sqrt(n+1) a W - sqrt(n) W a,
    b' W = sqrt(n+1) W a^dagger - sqrt(n) a^dagger W,

and the moment for (u, v) is tr_B[(D_u W)(D_v W)^dagger] with D_u the product of
these maps. The right factor exp(i H_B t) lets the auxiliary mode carry the
negative frequency.

``analytic_dephasing`` is the exact solution for a coupling that commutes with
the system Hamiltonian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from . import bath as _bath
from .dynamics import SystemSpec, validate_density_matrix
from .errors import DimensionBudget, IndexOutOfRange, LeakageExceeded, NotDephasing

DIMENSION_BUDGET = 4096


@dataclass(frozen=True)
class FockConfig:
    couplings: tuple
    frequencies: tuple
    M: int
    beta: float

    def __post_init__(self):
        c = tuple(float(x) for x in np.atleast_1d(self.couplings))
        w = tuple(float(x) for x in np.atleast_1d(self.frequencies))
        if len(c) != len(w) or not c:
            raise ValueError("couplings and frequencies must be non-empty and equal length")
        if self.M < 2:
            raise ValueError("Fock cutoff M must be >= 2")
        if not self.beta > 0:
            raise ValueError("beta must be > 0 or inf")
        object.__setattr__(self, "couplings", c)
        object.__setattr__(self, "frequencies", w)

    @classmethod
    def from_modes(cls, modes: _bath.DiscreteModes, M, beta):
        return cls(modes.couplings, modes.frequencies, M, beta)

    @property
    def N(self):
        return len(self.frequencies)

    @property
    def bath_dim(self):
        return self.M ** self.N

    def occupations(self):
        return _bath.BathThermalState(self.beta).occupation(np.array(self.frequencies))

    def thermal_tail_bound(self):
        """Thermal population of the top Fock level of each mode."""
        if math.isinf(self.beta):
            return np.zeros(self.N)
        x = self.beta * np.array(self.frequencies)
        return np.exp(-x * (self.M - 1)) * -np.expm1(-x) / -np.expm1(-x * self.M)


@dataclass
class OracleTrajectory:
    times: np.ndarray
    rho: np.ndarray  # (n, d, d) reduced density matrices
    leakage: np.ndarray  # (n,) max top-level population over modes
    rho_total: list = None
    amplitude: list = None
    trace_error: float = 0.0
    hermiticity_error: float = 0.0


class _FockOperators:
    def __init__(self, fock: FockConfig, d: int):
        M, N = fock.M, fock.N
        self.d = d
        self.B = fock.bath_dim
        a1 = np.diag(np.sqrt(np.arange(1, M, dtype=float)), 1)
        eye_m = np.eye(M)
        self.a = []  # bath-space annihilators
        for j in range(N):
            op = np.ones((1, 1))
            for i in range(N):
                op = np.kron(op, a1 if i == j else eye_m)
            self.a.append(op)
        self.H_B = sum(w * a.T @ a for w, a in zip(fock.frequencies, self.a))
        self.F = sum(c * (a + a.T) / math.sqrt(2.0) for c, a in zip(fock.couplings, self.a))
        self.top = [np.kron(np.kron(np.eye(M ** j), np.diag(np.eye(M)[M - 1])),
                            np.eye(M ** (N - j - 1))).diagonal().real for j in range(N)]

    def full(self, A_sys, A_bath):
        return np.kron(A_sys, A_bath)


def _thermal_bath(ops: _FockOperators, fock: FockConfig):
    if math.isinf(fock.beta):
        rho = np.zeros((ops.B, ops.B))
        rho[0, 0] = 1.0
        return rho
    e = ops.H_B.diagonal().real
    p = np.exp(-fock.beta * (e - e.min()))
    return np.diag(p / p.sum())


def total_hamiltonian(sys: SystemSpec, ops: _FockOperators, interaction="linear"):
    d, B = sys.d, ops.B
    H = np.kron(sys.H, np.eye(B)) + np.kron(np.eye(d), ops.H_B)
    if interaction == "linear":
        if sys.Q is None:
            raise ValueError("linear interaction needs Q")
        H = H + np.kron(sys.Q, ops.F)
    elif interaction == "quadratic":
        if sys.alpha0 and sys.Q0 is not None:
            H = H + sys.alpha0 * np.kron(sys.Q0, np.eye(B))
        if sys.alpha1 and sys.Q1 is not None:
            H = H + sys.alpha1 * np.kron(sys.Q1, ops.F)
        if sys.alpha2:
            if sys.Q2 is None:
                raise ValueError("alpha2 is non-zero but Q2 is missing")
            H = H + sys.alpha2 * np.kron(sys.Q2, ops.F @ ops.F)
    else:
        raise ValueError("interaction must be 'linear' or 'quadratic'")
    return H


def _partial_trace_bath(X, d, B):
    return np.einsum("ibkb->ik", X.reshape(d, B, d, B))


def dense_von_neumann(sys: SystemSpec, fock: FockConfig, rho0, times, interaction="linear",
                      method="eigh", keep_total=False, keep_amplitude=False,
                      leakage_tol=1e-6, rtol=1e-10, atol=1e-12,
                      budget=DIMENSION_BUDGET) -> OracleTrajectory:
    """Evolve rho_S(0) (x) thermal bath under the full Hamiltonian.

    ``method="eigh"`` propagates with the eigen-decomposition of the total
    Hamiltonian (exact up to rounding); ``"rk45"`` integrates the Liouville
    equation for the amplitude W with scipy's adaptive Runge-Kutta.
    """
    d = sys.d
    D = d * fock.bath_dim
    if D > budget:
        raise DimensionBudget(f"total dimension {D} exceeds budget {budget}")
    rho0 = validate_density_matrix(rho0, d)
    times = np.asarray(times, dtype=float)
    ops = _FockOperators(fock, d)
    H = total_hamiltonian(sys, ops, interaction)
    rho_b = _thermal_bath(ops, fock)
    ev, vec = np.linalg.eigh(0.5 * (rho0 + rho0.conj().T))
    sqrt_s = (vec * np.sqrt(np.clip(ev, 0.0, None))) @ vec.conj().T
    W0 = np.kron(sqrt_s, np.sqrt(rho_b))
    hb_full = np.kron(np.eye(d), ops.H_B).diagonal().real  # H_B is diagonal in Fock basis

    if method == "eigh":
        E, V = np.linalg.eigh(H)
        W0e = V.conj().T @ W0

        def amplitude(t):
            return (V * np.exp(-1j * E * t)) @ W0e
    elif method == "rk45":
        Hc = H.astype(complex)

        def f(_t, y):
            return (-1j * (Hc @ y.reshape(D, D))).ravel()
        sol = solve_ivp(f, (0.0, float(times.max(initial=0.0)) or 1.0), W0.astype(complex).ravel(),
                        method="RK45", t_eval=np.sort(np.unique(times)), rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(sol.message)
        lut = {float(t): sol.y[:, i].reshape(D, D) for i, t in enumerate(sol.t)}

        def amplitude(t):
            return lut[float(t)]
    else:
        raise ValueError("method must be 'eigh' or 'rk45'")

    rho_out = np.empty((times.size, d, d), dtype=complex)
    leak = np.empty(times.size)
    totals = [] if keep_total else None
    amps = [] if keep_amplitude else None
    trace_err = herm_err = 0.0
    for i, t in enumerate(times):
        W = amplitude(t) * np.exp(1j * hb_full * t)[None, :]
        rho_t = W @ W.conj().T
        rho_out[i] = _partial_trace_bath(rho_t, d, ops.B)
        bath_pop = np.einsum("ibib->b", rho_t.reshape(d, ops.B, d, ops.B)).real
        leak[i] = max(float(bath_pop @ top) for top in ops.top)
        trace_err = max(trace_err, abs(np.trace(rho_t) - 1.0))
        herm_err = max(herm_err, float(np.max(np.abs(rho_t - rho_t.conj().T))))
        if leakage_tol is not None and leak[i] > leakage_tol:
            raise LeakageExceeded(f"top Fock level holds {leak[i]:.3e} at t={t:.6g}")
        if totals is not None:
            totals.append(rho_t)
        if amps is not None:
            amps.append(W)
    return OracleTrajectory(times, rho_out, leak, totals, amps, trace_err, herm_err)


def thermofield_labels(fock: FockConfig, keep_zero=False):
    """(mode, sign) per term, in the order used by ``discrete_to_decomposition``."""
    modes = _bath.DiscreteModes(fock.couplings, fock.frequencies)
    return [(t.mode, t.sign) for t in
            _bath.thermofield_terms(modes, _bath.BathThermalState(fock.beta), keep_zero)]


def ordered_moments(W, fock: FockConfig, u, v, d=None, labels=None):
    """tr_B[(D_u W)(D_v W)^dagger] for the purified amplitude W at one time.

    ``labels`` lists (mode, sign) per term; the default follows
    :func:`thermofield_labels`.
    """
    W = np.asarray(W)
    B = fock.bath_dim
    if d is None:
        d = W.shape[0] // B
    if W.shape != (d * B, d * B):
        raise ValueError("amplitude does not match the Fock configuration")
    labels = thermofield_labels(fock) if labels is None else list(labels)
    u = np.asarray(u, dtype=int)
    v = np.asarray(v, dtype=int)
    if u.shape != (len(labels),) or v.shape != (len(labels),) or np.any(u < 0) or np.any(v < 0):
        raise IndexOutOfRange(f"u and v need {len(labels)} non-negative entries")
    ops = _FockOperators(fock, d)
    nbar = fock.occupations()
    eye_d = np.eye(d)
    a_full = [np.kron(eye_d, a) for a in ops.a]

    def apply(counts, X):
        for k, nk in enumerate(counts):
            j, sign = labels[k]
            if j >= fock.N:
                raise IndexOutOfRange(f"term {k} refers to mode {j}")
            a = a_full[j]
            p, m = math.sqrt(nbar[j] + 1.0), math.sqrt(nbar[j])
            for _ in range(nk):
                if sign > 0:
                    X = p * (a @ X) - m * (X @ a)
                else:
                    X = p * (X @ a.T) - m * (a.T @ X)
        return X

    return _partial_trace_bath(apply(u, W) @ apply(v, W).conj().T, d, B)


def analytic_dephasing(sys: SystemSpec, model, state: _bath.BathThermalState, rho0, times):
    """Exact reduced dynamics for H_S = (eps/2) sigma_z, Q = sigma_z.

    rho_01(t) = rho_01(0) exp(-i eps t - Gamma(t)),
    Gamma(t) = 4 int_0^t (t - tau) Re C(tau) dtau; populations are constant.
    """
    H, Q = sys.H, sys.Q
    if Q is None or np.max(np.abs(H @ Q - Q @ H)) > 1e-12:
        raise NotDephasing("coupling does not commute with the system Hamiltonian")
    if sys.d != 2 or np.max(np.abs(Q - np.diag([1.0, -1.0]))) > 1e-12 \
            or abs(H[0, 1]) > 1e-12:
        raise ValueError("exact dephasing is implemented for H diagonal and Q = sigma_z")
    rho0 = validate_density_matrix(rho0, 2)
    eps = (H[0, 0] - H[1, 1]).real
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, 2, 2), dtype=complex)
    for i, t in enumerate(times):
        g = _bath.dephasing_exponent(model, state, t)
        c = rho0[0, 1] * np.exp(-1j * eps * t - g)
        out[i] = [[rho0[0, 0], c], [np.conj(c), rho0[1, 1]]]
    return out


def unitary_reference(H, rho0, times):
    """exp(-iHt) rho0 exp(iHt), for closed-system checks."""
    out = []
    for t in np.asarray(times, dtype=float):
        U = sla.expm(-1j * np.asarray(H) * t)
        out.append(U @ rho0 @ U.conj().T)
    return np.array(out)
