"""Exponential decompositions C(t) ~ sum_k eta_k exp(-gamma_k t).

Four producers share one container, :class:`BathDecomposition`:

* ``discrete_to_decomposition``: exact, from a finite mode list.
* ``matsubara_decomposition`` / ``pade_decomposition``: contour integration of
  the FDT integral for rational J(w); they differ only in the pole expansion of
  the Bose function 1/(1 - exp(-x)).
* ``prony_fit``: Hankel (matrix-pencil) fit of sampled C(t).

Every continuous decomposition carries a :class:`DecompositionReport` that
records the largest deviation from the quadrature correlation function on a
uniform grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import bath as _bath
from .errors import EigenSolveFailure, IllConditioned, ModelUnsupported, UnpairedTerms, UnstableRoots

DEFAULT_SAMPLES = 256


@dataclass(frozen=True)
class DecompositionReport:
    max_residual: float
    horizon: float
    samples: int
    t_min: float = 0.0
    reference: str = "quadrature"
    discarded: tuple = ()
    table: tuple = ()

    def __post_init__(self):
        if not self.max_residual >= 0:
            raise ValueError("max_residual must be >= 0")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")

    def to_dict(self):
        return {
            "max_residual": self.max_residual,
            "horizon": self.horizon,
            "samples": self.samples,
            "t_min": self.t_min,
            "reference": self.reference,
            "discarded": [[z.real, z.imag] for z in self.discarded],
            "table": [dict(row) for row in self.table],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            max_residual=d["max_residual"],
            horizon=d["horizon"],
            samples=d["samples"],
            t_min=d.get("t_min", 0.0),
            reference=d.get("reference", "quadrature"),
            discarded=tuple(complex(a, b) for a, b in d.get("discarded", [])),
            table=tuple(d.get("table", [])),
        )


@dataclass(frozen=True, eq=False)
class BathDecomposition:
    """Exponential terms (eta_k, gamma_k) with an optional conjugate pairing.

    ``pairing[k]`` is the index kbar with gamma_kbar = conj(gamma_k), or None.
    ``modes`` is set for discrete baths: (mode index, +1 | -1) per term, where
    -1 marks the auxiliary (negative-frequency) thermofield mode.
    """

    eta: np.ndarray
    gamma: np.ndarray
    pairing: tuple = None
    origin: str = "custom"
    report: DecompositionReport = None
    modes: tuple = None
    sqrt_eta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=complex)).copy()
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=complex)).copy()
        if eta.shape != gamma.shape or eta.ndim != 1 or eta.size == 0:
            raise ValueError("eta and gamma must be equal-length non-empty vectors")
        if np.any(gamma.real < -1e-12 * np.maximum(1.0, np.abs(gamma))):
            bad = [int(k) for k in np.flatnonzero(gamma.real < 0)]
            raise ValueError(f"terms {bad} grow in time (Re gamma < 0)")
        gamma.real[gamma.real < 0] = 0.0
        pairing = self.pairing
        if pairing is None:
            pairing = (None,) * eta.size
        pairing = tuple(None if p is None else int(p) for p in pairing)
        if len(pairing) != eta.size:
            raise ValueError("pairing must have one entry per term")
        eta.flags.writeable = False
        gamma.flags.writeable = False
        # principal branch, fixed once for every consumer
        sq = np.sqrt(eta)
        sq.flags.writeable = False
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "pairing", pairing)
        object.__setattr__(self, "sqrt_eta", sq)

    @property
    def K(self):
        return self.eta.size

    @property
    def phases(self):
        return np.angle(self.eta)

    @property
    def pairing_total(self):
        return all(p is not None for p in self.pairing)

    def kbar(self):
        if not self.pairing_total:
            missing = [k for k, p in enumerate(self.pairing) if p is None]
            raise UnpairedTerms(missing)
        return np.array(self.pairing, dtype=np.intp)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.exp(-np.multiply.outer(t, self.gamma)) @ self.eta
        return out[()] if out.ndim == 0 else out

    def sum_eta(self):
        return complex(self.eta.sum())

    def with_report(self, report):
        return replace(self, report=report)

    def table(self):
        return tuple({"eta_re": float(e.real), "eta_im": float(e.imag),
                      "gamma_re": float(g.real), "gamma_im": float(g.imag),
                      "kbar": p}
                     for e, g, p in zip(self.eta, self.gamma, self.pairing))

    def to_dict(self):
        d = {"origin": self.origin, "terms": list(self.table())}
        if self.modes is not None:
            d["modes"] = [list(m) for m in self.modes]
        if self.report is not None:
            d["report"] = self.report.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        terms = d["terms"]
        return cls(
            eta=[complex(r["eta_re"], r["eta_im"]) for r in terms],
            gamma=[complex(r["gamma_re"], r["gamma_im"]) for r in terms],
            pairing=tuple(r.get("kbar") for r in terms),
            origin=d.get("origin", "custom"),
            report=DecompositionReport.from_dict(d["report"]) if "report" in d else None,
            modes=tuple(tuple(m) for m in d["modes"]) if "modes" in d else None,
        )


# -- certification -----------------------------------------------------------

def default_horizon(gamma):
    gamma = np.asarray(gamma, dtype=complex)
    damped = gamma.real[gamma.real > 1e-12 * np.maximum(1.0, np.abs(gamma))]
    if damped.size:
        return 10.0 / damped.min()
    return 10.0 * 2.0 * math.pi / np.abs(gamma).min()


def certification_grid(T, n=DEFAULT_SAMPLES, include_zero=True):
    """Uniform grid on [0, T]; (0, T] when C(0) is not finite."""
    if include_zero:
        return np.linspace(0.0, T, n)
    return T * np.arange(1, n + 1) / n


def _reference_values(model, state, times):
    if isinstance(model, _bath.DiscreteModes):
        return _bath.discrete_correlation_sum(model, state, times)
    return _bath.correlation_function_many(model, state, times)


def _with_midpoints(times):
    mid = 0.5 * (times[1:] + times[:-1])
    return np.sort(np.concatenate([times, mid]))


def certify(dec: BathDecomposition, model, state, T=None, n=DEFAULT_SAMPLES):
    """Attach the max |C(t) - sum_k eta_k exp(-gamma_k t)| over the grid.

    Grid midpoints are checked too, so the figure also bounds the error between
    the fitting nodes of a Prony decomposition.
    """
    T = default_horizon(dec.gamma) if T is None else float(T)
    times = _with_midpoints(certification_grid(T, n, include_zero=model.finite_variance))
    ref = _reference_values(model, state, times)
    resid = float(np.max(np.abs(ref - dec(times))))
    report = DecompositionReport(max_residual=resid, horizon=T, samples=len(times),
                                 t_min=float(times[0]), table=dec.table())
    return dec.with_report(report)


def residual_on(dec, model, state, times):
    """max residual on an arbitrary caller-supplied set of times."""
    ref = _reference_values(model, state, np.asarray(times, dtype=float))
    return float(np.max(np.abs(ref - dec(times))))


# -- discrete baths ----------------------------------------------------------

def discrete_to_decomposition(bath: _bath.DiscreteModes, state: _bath.BathThermalState,
                              keep_zero=False) -> BathDecomposition:
    """Thermofield terms (c^2 (n+1)/2, i w) and (c^2 n/2, -i w) of each mode.

    The two terms of a mode are recorded as a pair only when their amplitudes
    coincide; use :func:`pairing_map` to pair on the rates alone. Zero-weight
    terms (beta = inf) are dropped unless ``keep_zero`` is set.
    """
    terms = _bath.thermofield_terms(bath, state, keep_zero=keep_zero)
    eta = np.array([t.eta for t in terms], dtype=complex)
    gamma = np.array([1j * t.eps for t in terms])
    pairing = [None] * len(terms)
    by_mode = {}
    for k, t in enumerate(terms):
        by_mode.setdefault(t.mode, []).append(k)
    for ks in by_mode.values():
        if len(ks) == 2 and eta[ks[0]] == eta[ks[1]]:
            pairing[ks[0]], pairing[ks[1]] = ks[1], ks[0]
    modes = tuple((t.mode, t.sign) for t in terms)
    report = DecompositionReport(max_residual=0.0,
                                 horizon=default_horizon(gamma), samples=0,
                                 reference="exact", table=())
    dec = BathDecomposition(eta, gamma, tuple(pairing), "discrete", None, modes)
    return dec.with_report(replace(report, table=dec.table()))


# -- Bose-function pole expansions -------------------------------------------

def bose_matsubara_poles(K):
    """Poles xi_k = 2 pi k with unit residues."""
    return 2.0 * math.pi * np.arange(1, K + 1, dtype=float), np.ones(K)


def _tridiagonal_eigs(offdiag):
    m = len(offdiag) + 1
    mat = np.diag(offdiag, 1) + np.diag(offdiag, -1)
    try:
        ev = np.linalg.eigvalsh(mat)
    except np.linalg.LinAlgError as exc:
        raise EigenSolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(ev)) or ev.size != m:
        raise EigenSolveFailure("non-finite eigenvalues in Pade construction")
    return np.sort(ev)[::-1]


def bose_pade_poles(K):
    """[K-1/K] Pade poles and residues of the Bose function.

    1/(1 - exp(-x)) ~ 1/x + 1/2 + sum_j 2 R_j x / (x^2 + xi_j^2).
    Poles come from a 2K x 2K symmetric tridiagonal matrix with off-diagonal
    1/sqrt((2m+1)(2m+3)), m = 1..2K-1; the numerator zeros come from the
    (2K-1) x (2K-1) matrix with 1/sqrt((2m+3)(2m+5)).
    """
    if K < 1:
        raise ValueError("Pade expansion needs K >= 1")
    m = np.arange(1, 2 * K)
    ev = _tridiagonal_eigs(1.0 / np.sqrt((2 * m + 1) * (2 * m + 3)))
    xi = np.sort(2.0 / ev[:K])
    if K > 1:
        m2 = np.arange(1, 2 * K - 1)
        ev2 = _tridiagonal_eigs(1.0 / np.sqrt((2 * m2 + 3) * (2 * m2 + 5)))
        zeta = 2.0 / ev2[:K - 1]
    else:
        zeta = np.zeros(0)
    R = np.empty(K)
    for j in range(K):
        num = np.prod(zeta**2 - xi[j] ** 2)
        den = np.prod(np.delete(xi, j) ** 2 - xi[j] ** 2)
        R[j] = 0.5 * K * (2 * K + 3) * num / den
    if not (np.all(np.isfinite(R)) and np.all(xi > 0)):
        raise EigenSolveFailure("invalid Pade poles or residues")
    return xi, R


def bose_approximant(x, xi, R):
    x = np.asarray(x, dtype=complex)
    return 1.0 / x + 0.5 + sum(2.0 * r * x / (x * x + p * p) for p, r in zip(xi, R))


# -- contour integration for rational J --------------------------------------

def _rational_decomposition(model, state, xi, R, origin):
    if not hasattr(model, "rational_form"):
        raise ModelUnsupported(f"{type(model).__name__} has no rational form for residues")
    if state.zero_temperature:
        raise ModelUnsupported("pole expansions need a finite beta")
    beta = state.beta
    num, den = model.rational_form()
    if abs(np.polyval(num, 0.0)) > 0:
        raise ModelUnsupported("J(0) must vanish")
    poles = np.roots(den)
    dden = np.polyder(den)
    scale = max(1.0, float(np.abs(poles).max()))
    if np.min(np.abs(np.subtract.outer(poles, poles)) + np.eye(len(poles)) * scale) < 1e-8 * scale:
        raise ModelUnsupported("J(w) has a repeated pole")
    eta, gamma = [], []
    # e^{-iwt} decays in the lower half plane; C(t) = -2i sum Res
    for p in poles[poles.imag < 0]:
        bose = 1.0 / (-np.expm1(-beta * p))
        eta.append(-2j * np.polyval(num, p) / np.polyval(dden, p) * bose)
        gamma.append(1j * p)
    for x, r in zip(xi, R):
        nu = x / beta
        if np.min(np.abs(poles + 1j * nu)) < 1e-8 * scale:
            raise ModelUnsupported("a Bose pole coincides with a pole of J(w)")
        jval = np.polyval(num, -1j * nu) / np.polyval(den, -1j * nu)
        eta.append(-2j * (r / beta) * jval)
        gamma.append(nu)
    eta = np.array(eta, dtype=complex)
    gamma = np.array(gamma, dtype=complex)
    # rates sitting on the real axis are real up to root-finding noise
    gamma.imag[np.abs(gamma.imag) < 1e-13 * np.maximum(1.0, np.abs(gamma))] = 0.0
    eta.imag[np.abs(eta.imag) < 1e-15 * np.maximum(1.0, np.abs(eta))] = 0.0
    dec = BathDecomposition(eta, gamma, None, origin)
    try:
        return pairing_map(dec)
    except UnpairedTerms:
        return dec


def matsubara_decomposition(model, state, K: int, certify_result=True, T=None,
                            n=DEFAULT_SAMPLES) -> BathDecomposition:
    if K < 0:
        raise ValueError("K must be >= 0")
    xi, R = bose_matsubara_poles(K)
    dec = _rational_decomposition(model, state, xi, R, "matsubara")
    return certify(dec, model, state, T, n) if certify_result else dec


def pade_decomposition(model, state, K: int, certify_result=True, T=None,
                       n=DEFAULT_SAMPLES) -> BathDecomposition:
    xi, R = bose_pade_poles(K)
    dec = _rational_decomposition(model, state, xi, R, "pade")
    return certify(dec, model, state, T, n) if certify_result else dec


# -- Prony fitting -----------------------------------------------------------

def prony_fit(times, values, K: int, rank_tol=1e-12) -> BathDecomposition:
    """Fit K exponentials to uniformly sampled complex data.

    Roots are extracted from the K-dimensional dominant subspace of the sample
    Hankel matrix (matrix pencil); amplitudes follow by linear least squares.
    Roots outside the unit circle are discarded and listed in the report.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=complex)
    if K < 1:
        raise ValueError("K must be >= 1")
    if t.ndim != 1 or t.shape != y.shape or t.size < 2 * K:
        raise ValueError("need at least 2K samples on one time axis")
    dt = t[1] - t[0]
    if dt <= 0 or not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0.0):
        raise ValueError("samples must lie on a uniform increasing grid")
    N = t.size
    rows = N // 2 + 1
    hankel = np.lib.stride_tricks.sliding_window_view(y, N - rows + 1)
    u, s, vh = np.linalg.svd(hankel, full_matrices=False)
    if s.size < K or s[K - 1] <= rank_tol * s[0]:
        raise IllConditioned(f"sample Hankel matrix has numerical rank < {K}")
    v = vh[:K].T
    z = np.linalg.eigvals(np.linalg.pinv(v[:-1]) @ v[1:])
    growing = z[np.abs(z) > 1.0 + 1e-12]
    z = z[np.abs(z) <= 1.0 + 1e-12]
    if z.size == 0:
        raise UnstableRoots(f"all {K} roots lie outside the unit circle")
    gamma = -np.log(z) / dt
    gamma = np.where(gamma.real < 0, 1j * gamma.imag, gamma)
    basis = np.exp(-np.outer(t - t[0], gamma))
    amp = np.linalg.lstsq(basis, y, rcond=None)[0]
    eta = amp * np.exp(gamma * t[0])
    dec = BathDecomposition(eta, gamma, None, "prony")
    try:
        dec = pairing_map(dec)
    except UnpairedTerms:
        pass
    resid = float(np.max(np.abs(y - dec(t))))
    report = DecompositionReport(max_residual=resid, horizon=float(t[-1]), samples=N,
                                 t_min=float(t[0]), reference="samples",
                                 discarded=tuple(complex(-np.log(r) / dt) for r in growing),
                                 table=dec.table())
    return dec.with_report(report)


def prony_decomposition(model, state, K: int, T=None, n=DEFAULT_SAMPLES) -> BathDecomposition:
    """Prony fit of the quadrature C(t) on the certification grid.

    The horizon defaults to the Pade K = 1 horizon of the same bath when the
    model admits one, else to 10 / cutoff.
    """
    if T is None:
        T = 10.0 / model.cutoff_scale
        if hasattr(model, "rational_form") and not state.zero_temperature:
            T = default_horizon(_rational_decomposition(model, state, *bose_pade_poles(1), "pade").gamma)
    times = certification_grid(T, n, include_zero=model.finite_variance)
    values = _reference_values(model, state, times)
    dec = prony_fit(times, values, K)
    discarded = dec.report.discarded
    dec = certify(dec, model, state, T, n)
    return dec.with_report(replace(dec.report, discarded=discarded))


# -- pairing -----------------------------------------------------------------

def pairing_map(dec: BathDecomposition, tol=1e-8) -> BathDecomposition:
    """Pair every term with the term whose rate is its complex conjugate.

    Real rates pair with themselves. Raises :class:`UnpairedTerms` listing the
    terms left without a partner.
    """
    g = dec.gamma
    K = dec.K
    kbar = [None] * K
    for k in range(K):
        if kbar[k] is not None:
            continue
        scale = max(1.0, abs(g[k]))
        if abs(g[k].imag) <= tol * scale:
            kbar[k] = k
            continue
        cands = [j for j in range(K) if j != k and kbar[j] is None
                 and abs(g[j] - np.conj(g[k])) <= tol * scale]
        if cands:
            j = min(cands, key=lambda j: abs(g[j] - np.conj(g[k])))
            kbar[k], kbar[j] = j, k
    missing = [k for k in range(K) if kbar[k] is None]
    if missing:
        raise UnpairedTerms(missing)
    out = replace(dec, pairing=tuple(kbar))
    if out.report is not None:
        out = out.with_report(replace(out.report, table=out.table()))
    return out
