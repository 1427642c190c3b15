"""Spectral densities, thermal bath states and bath correlation functions.

Conventions (hbar = 1):

    F = sum_j c_j x_j,   H_B = sum_j w_j (p_j^2 + x_j^2) / 2
    J(w) = (pi/2) sum_j c_j^2 [delta(w - w_j) - delta(w + w_j)]
    C(t) = <F(t) F(0)>_B = (1/pi) int dw exp(-i w t) J(w) / (1 - exp(-beta w))

For a continuous density the integral is folded onto the positive axis,

    C(t) = (1/pi) int_0^inf dw J(w) [coth(beta w / 2) cos(w t) - i sin(w t)],

and evaluated with QUADPACK's Fourier integrator (QAWF).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from scipy import integrate, optimize, special

from .errors import DiscreteModelHasNoDensity, ModelUnsupported, QuadratureFailure

__all__ = [
    "DrudeLorentz",
    "BrownianOscillator",
    "OhmicExponential",
    "DiscreteModes",
    "SpectralDensityModel",
    "BathThermalState",
    "ThermofieldTerm",
    "spectral_density_value",
    "reorganization_energy",
    "correlation_function",
    "correlation_function_many",
    "discrete_correlation_sum",
    "thermofield_terms",
    "dephasing_exponent",
    "discretize_bath",
]


def _positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class DrudeLorentz:
    """J(w) = 2 lam gamma w / (w^2 + gamma^2)."""

    lam: float
    gamma: float

    def __post_init__(self):
        _positive("lam", self.lam)
        _positive("gamma", self.gamma)

    def J(self, w):
        w = np.asarray(w, dtype=float)
        return 2.0 * self.lam * self.gamma * w / (w * w + self.gamma**2)

    @property
    def reorganization(self):
        return self.lam

    @property
    def cutoff_scale(self):
        return self.gamma

    @property
    def finite_variance(self):
        # J ~ 1/w at large w, so <F^2> = C(0) diverges logarithmically
        return False

    def rational_form(self):
        """(numerator, denominator) polynomial coefficients in w, highest first."""
        return (np.array([2.0 * self.lam * self.gamma, 0.0]),
                np.array([1.0, 0.0, self.gamma**2]))


@dataclass(frozen=True)
class BrownianOscillator:
    """J(w) = 2 lam w0^2 zeta w / ((w0^2 - w^2)^2 + zeta^2 w^2)."""

    lam: float
    w0: float
    zeta: float

    def __post_init__(self):
        _positive("lam", self.lam)
        _positive("w0", self.w0)
        _positive("zeta", self.zeta)

    def J(self, w):
        w = np.asarray(w, dtype=float)
        num = 2.0 * self.lam * self.w0**2 * self.zeta * w
        return num / ((self.w0**2 - w * w) ** 2 + (self.zeta * w) ** 2)

    @property
    def reorganization(self):
        return self.lam

    @property
    def cutoff_scale(self):
        return max(self.w0, self.zeta)

    @property
    def finite_variance(self):
        return True

    def rational_form(self):
        w0sq = self.w0**2
        return (np.array([2.0 * self.lam * w0sq * self.zeta, 0.0]),
                np.array([1.0, 0.0, self.zeta**2 - 2.0 * w0sq, 0.0, w0sq * w0sq]))


@dataclass(frozen=True)
class OhmicExponential:
    """J(w) = (pi/2) alpha wc^(1-s) |w|^s exp(-|w|/wc) sign(w)."""

    alpha: float
    s: float
    wc: float

    def __post_init__(self):
        _positive("alpha", self.alpha)
        _positive("s", self.s)
        _positive("wc", self.wc)

    def J(self, w):
        w = np.asarray(w, dtype=float)
        a = np.abs(w)
        return (0.5 * math.pi * self.alpha * self.wc ** (1.0 - self.s)
                * np.sign(w) * a**self.s * np.exp(-a / self.wc))

    @property
    def reorganization(self):
        return 0.5 * self.alpha * self.wc * math.gamma(self.s)

    @property
    def cutoff_scale(self):
        return self.wc

    @property
    def finite_variance(self):
        return True


@dataclass(frozen=True)
class DiscreteModes:
    """Finite set of harmonic modes, coupling amplitudes c_j at frequencies w_j."""

    couplings: tuple
    frequencies: tuple

    def __post_init__(self):
        c = tuple(float(x) for x in self.couplings)
        w = tuple(float(x) for x in self.frequencies)
        object.__setattr__(self, "couplings", c)
        object.__setattr__(self, "frequencies", w)
        if len(c) != len(w) or not c:
            raise ValueError("couplings and frequencies must be non-empty and equal length")
        for x in w:
            _positive("mode frequency", x)
        if len(set(w)) != len(w):
            raise ValueError("mode frequencies must be distinct")

    @property
    def reorganization(self):
        return sum(c * c / (2.0 * w) for c, w in zip(self.couplings, self.frequencies))

    @property
    def cutoff_scale(self):
        return max(self.frequencies)

    @property
    def finite_variance(self):
        return True


SpectralDensityModel = Union[DrudeLorentz, BrownianOscillator, OhmicExponential, DiscreteModes]
CONTINUOUS_MODELS = (DrudeLorentz, BrownianOscillator, OhmicExponential)


@dataclass(frozen=True)
class BathThermalState:
    beta: float

    def __post_init__(self):
        if not (self.beta > 0):
            raise ValueError(f"beta must be > 0 or inf, got {self.beta!r}")

    @property
    def zero_temperature(self):
        return math.isinf(self.beta)

    def occupation(self, w):
        """Bose occupation 1/(exp(beta w) - 1); zero at beta = inf."""
        if self.zero_temperature:
            return np.zeros_like(np.asarray(w, dtype=float))
        return 1.0 / np.expm1(self.beta * np.asarray(w, dtype=float))


def spectral_density_value(model, w):
    if isinstance(model, DiscreteModes):
        raise DiscreteModelHasNoDensity("a discrete mode list has no pointwise density")
    return float(model.J(w))


def reorganization_energy(model):
    """(1/pi) int_0^inf J(w)/w dw."""
    return model.reorganization


def _coth_weighted(model, beta, w):
    """J(w) coth(beta w / 2) for w >= 0, with the w -> 0 limit 2 J'(0) / beta."""
    if math.isinf(beta):
        return float(model.J(w))
    if w <= 0.0:
        h = 1e-8 * model.cutoff_scale
        return 2.0 * float(model.J(h)) / (beta * h)
    x = 0.5 * beta * w
    if x < 1e-4:
        return float(model.J(w)) * (1.0 / x + x / 3.0)
    return float(model.J(w)) / math.tanh(x)


def _quad(f, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, **kw)[:2]
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(f"quadrature did not converge: {exc}") from exc
    if not math.isfinite(val) or err > 1e-7 * max(1.0, abs(val)):
        raise QuadratureFailure(f"quadrature error estimate {err:.3e} too large", abserr=err)
    return val


def discrete_correlation_sum(model: DiscreteModes, state: BathThermalState, t):
    """sum_j c_j^2/2 [(n_j + 1) exp(-i w_j t) + n_j exp(i w_j t)]."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    for c, w in zip(model.couplings, model.frequencies):
        n = state.occupation(w)
        out += 0.5 * c * c * ((n + 1.0) * np.exp(-1j * w * t) + n * np.exp(1j * w * t))
    return out[()] if out.ndim == 0 else out


def _discrete_fdt(model, state, t):
    # the delta comb inserted into the FDT integral, term by term
    total = 0j
    for c, w in zip(model.couplings, model.frequencies):
        weight = 0.5 * c * c
        if state.zero_temperature:
            total += weight * np.exp(-1j * w * t)
        else:
            total += weight * np.exp(-1j * w * t) / (-np.expm1(-state.beta * w))
            total -= weight * np.exp(1j * w * t) / (-np.expm1(state.beta * w))
    return complex(total)


def correlation_function(model, state: BathThermalState, t: float) -> complex:
    """Bath correlation function C(t) from the fluctuation-dissipation theorem."""
    t = float(t)
    if isinstance(model, DiscreteModes):
        return _discrete_fdt(model, state, t)
    if not isinstance(model, CONTINUOUS_MODELS):
        raise ModelUnsupported(f"unknown spectral density {type(model).__name__}")
    beta = state.beta
    real_part = lambda w: _coth_weighted(model, beta, w)
    if t == 0.0:
        if not model.finite_variance:
            raise QuadratureFailure(
                f"C(0) diverges for {type(model).__name__}: J(w) decays only as 1/w",
                abserr=math.inf)
        return complex(_quad(real_part, 0.0, math.inf, limit=400) / math.pi, 0.0)
    a = abs(t)
    re = _quad(real_part, 0.0, math.inf, weight="cos", wvar=a, limlst=200, limit=400)
    im = -_quad(lambda w: float(model.J(w)), 0.0, math.inf, weight="sin", wvar=a,
                limlst=200, limit=400)
    if t < 0:
        im = -im
    return complex(re, im) / math.pi


def correlation_function_many(model, state, times):
    return np.array([correlation_function(model, state, t) for t in np.ravel(times)])


class ThermofieldTerm(NamedTuple):
    """One thermofield quasi-mode of a discrete bath: eta exp(-i eps t) in C(t)."""

    mode: int
    sign: int  # +1: physical mode (eps = +w), -1: auxiliary mode (eps = -w)
    eta: float
    eps: float


def thermofield_terms(model: DiscreteModes, state: BathThermalState, keep_zero=False):
    """Expand a discrete bath into its doubled (b, b') mode list.

    Each mode j contributes (c_j^2 (n_j+1)/2, +w_j) and (c_j^2 n_j/2, -w_j).
    Zero-weight terms (the auxiliary modes at beta = inf) are dropped unless
    ``keep_zero`` is set.
    """
    terms = []
    for j, (c, w) in enumerate(zip(model.couplings, model.frequencies)):
        n = float(state.occupation(w))
        terms.append(ThermofieldTerm(j, +1, 0.5 * c * c * (n + 1.0), w))
        minus = ThermofieldTerm(j, -1, 0.5 * c * c * n, -w)
        if minus.eta != 0.0 or keep_zero:
            terms.append(minus)
    return terms


def _sin_half_sq_over_w2(w, t):
    # (1 - cos w t) / w^2 evaluated without cancellation
    x = 0.5 * w * t
    if abs(x) < 1e-8:
        return 0.5 * t * t
    return 2.0 * (math.sin(x) / w) ** 2


def dephasing_exponent(model, state: BathThermalState, t: float) -> float:
    """Gamma(t) = 4 int_0^t (t - tau) Re C(tau) dtau.

    Evaluated in the frequency domain,
    (4/pi) int_0^inf J(w) coth(beta w/2) (1 - cos w t) / w^2 dw.
    """
    t = float(t)
    if t == 0.0:
        return 0.0
    if isinstance(model, DiscreteModes):
        total = 0.0
        for c, w in zip(model.couplings, model.frequencies):
            n = float(state.occupation(w))
            total += 2.0 * c * c * (2.0 * n + 1.0) * _sin_half_sq_over_w2(w, t)
        return total
    beta = state.beta
    a = abs(t)
    split = max(20.0 * model.cutoff_scale, 50.0 / a)
    head = _quad(lambda w: _coth_weighted(model, beta, w) * _sin_half_sq_over_w2(w, a),
                 0.0, split, limit=2000, points=[model.cutoff_scale])
    tail_g = lambda w: _coth_weighted(model, beta, w) / (w * w)
    tail = _quad(tail_g, split, math.inf, limit=400)
    tail -= _quad(lambda u: tail_g(u + split), 0.0, math.inf, weight="cos", wvar=a,
                  limlst=200) * math.cos(a * split)
    tail += _quad(lambda u: tail_g(u + split), 0.0, math.inf, weight="sin", wvar=a,
                  limlst=200) * math.sin(a * split)
    return 4.0 * (head + tail) / math.pi


def _cumulative_reorganization(model, w):
    if isinstance(model, DrudeLorentz):
        return 2.0 * model.lam / math.pi * math.atan(w / model.gamma)
    if isinstance(model, OhmicExponential):
        return model.reorganization * special.gammainc(model.s, w / model.wc)
    return _quad(lambda x: float(model.J(x)) / x if x > 0 else 0.0, 0.0, w,
                 limit=400, points=[model.cutoff_scale] if w > model.cutoff_scale else None) / math.pi


def _reorganization_quantile(model, q):
    lam = model.reorganization
    if isinstance(model, DrudeLorentz):
        return model.gamma * math.tan(0.5 * math.pi * q / lam)
    if isinstance(model, OhmicExponential):
        return model.wc * special.gammaincinv(model.s, q / lam)
    hi = model.cutoff_scale
    while _cumulative_reorganization(model, hi) < q:
        hi *= 2.0
    return optimize.brentq(lambda w: _cumulative_reorganization(model, w) - q, 0.0, hi,
                           xtol=1e-14 * hi, rtol=1e-13)


def discretize_bath(model, state: BathThermalState, N: int,
                    scheme: str = "equal-reorganization") -> DiscreteModes:
    """Replace a continuous density by N discrete modes.

    ``equal-reorganization`` splits [0, wmax) with wmax = 10 * cutoff into N - 1
    uniform bins plus one tail bin [wmax, inf). Each bin becomes one mode at
    the bin's reorganization median, carrying exactly the bin's reorganization,
    so sum_j c_j^2 / (2 w_j) = lam holds to rounding. ``gauss-legendre`` uses the
    N-point rule on [0, wmax]. Both schemes are temperature independent;
    ``state`` is accepted for interface symmetry.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if isinstance(model, DiscreteModes):
        raise DiscreteModelHasNoDensity("model is already discrete")
    wmax = 10.0 * model.cutoff_scale
    if scheme == "equal-reorganization":
        edges = np.linspace(0.0, wmax, N)[1:]
        cum = np.array([0.0] + [_cumulative_reorganization(model, e) for e in edges]
                       + [model.reorganization])
        share = np.diff(cum)
        w = np.array([_reorganization_quantile(model, lo + 0.5 * sh)
                      for lo, sh in zip(cum[:-1], share)])
        c = np.sqrt(2.0 * w * share)
    elif scheme == "gauss-legendre":
        x, wt = np.polynomial.legendre.leggauss(N)
        w = 0.5 * wmax * (x + 1.0)
        c = np.sqrt(2.0 / math.pi * 0.5 * wmax * wt * model.J(w))
    else:
        raise ValueError(f"unknown discretization scheme {scheme!r}")
    return DiscreteModes(tuple(c), tuple(w))
