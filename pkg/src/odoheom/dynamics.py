"""Hierarchy generators: linear maps acting on all blocks of an ODO state.

Each generator has the form

    d rho_i/dt = S_H rho_i + diag_i rho_i + sum_g sum_j P_g[i, j] S_g rho_j

where S_H and S_g are d^2 x d^2 superoperators (left/right multiplications or
commutators with a coupling operator) and P_g are sparse count x count matrices
that collect every hierarchy neighbour sharing that superoperator. Blocks are
row-major flattened, so left multiplication by A is kron(A, I) and right
multiplication by B is kron(I, B.T).

Blocks may be stored rescaled, rho_n = s_n * stored_n, with
log s_n = 1/2 sum_slots (log n! + n log w_slot); every neighbour coefficient is
transformed accordingly, and ordinal 0 always has s = 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import InvalidDensityMatrix, PairingRequired, ShapeMismatch, UnpairedTerms
from .hierarchy import OUTSIDE, HierarchySpace

HERMITIAN_TOL = 1e-12


def _check_hermitian(name, A, d):
    A = np.asarray(A, dtype=complex)
    if A.shape != (d, d):
        raise ShapeMismatch(f"{name} must be {d}x{d}, got {A.shape}")
    if np.max(np.abs(A - A.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ValueError(f"{name} is not Hermitian")
    A = A.copy()
    A.flags.writeable = False
    return A


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """System Hamiltonian and coupling operators.

    ``Q`` is the linear coupling Q F. The quadratic family is
    alpha0 Q0 + alpha1 Q1 F + alpha2 Q2 F^2; when it is used and Q1 is not given,
    Q is taken as Q1.
    """

    H: np.ndarray
    Q: np.ndarray = None
    Q0: np.ndarray = None
    Q1: np.ndarray = None
    Q2: np.ndarray = None
    alpha0: float = 0.0
    alpha1: float = 1.0
    alpha2: float = 0.0

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=complex))
        d = H.shape[0]
        if d < 1 or H.shape != (d, d):
            raise ShapeMismatch("H must be a square matrix")
        object.__setattr__(self, "H", _check_hermitian("H", H, d))
        for name in ("Q", "Q0", "Q1", "Q2"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _check_hermitian(name, val, d))
        if self.Q1 is None and self.Q is not None:
            object.__setattr__(self, "Q1", self.Q)
        if self.Q is None and self.Q1 is not None:
            object.__setattr__(self, "Q", self.Q1)
        for name in ("alpha0", "alpha1", "alpha2"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def d(self):
        return self.H.shape[0]


@dataclass(eq=False)
class ODOState:
    """All hierarchy blocks; ``data[i]`` is stored block i, see ``scale``."""

    space: HierarchySpace
    data: np.ndarray  # (count, d, d) complex
    scale: np.ndarray = None  # (count,) with rho_i = scale[i] * data[i]; None means 1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 3 or self.data.shape[0] != self.space.count \
                or self.data.shape[1] != self.data.shape[2]:
            raise ShapeMismatch(
                f"state data must be ({self.space.count}, d, d), got {self.data.shape}")

    @property
    def d(self):
        return self.data.shape[1]

    def block(self, ordinal):
        """Physical (unscaled) block."""
        b = self.data[ordinal]
        return b if self.scale is None else b * self.scale[ordinal]

    def physical(self):
        if self.scale is None:
            return self.data.copy()
        return self.data * self.scale[:, None, None]

    def copy(self):
        return ODOState(self.space, self.data.copy(), self.scale)


def validate_density_matrix(rho, d=None, tol=1e-10):
    rho = np.atleast_2d(np.asarray(rho, dtype=complex))
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or (d is not None and rho.shape[0] != d):
        raise InvalidDensityMatrix(f"density matrix has shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise InvalidDensityMatrix("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise InvalidDensityMatrix(f"density matrix has trace {np.trace(rho).real:.6g}")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise InvalidDensityMatrix("density matrix is not positive semidefinite")
    return rho


def initial_state(space: HierarchySpace, rho0, scale=None) -> ODOState:
    """Tier-0 block set to rho0, every other block exactly zero."""
    rho0 = validate_density_matrix(rho0)
    d = rho0.shape[0]
    data = np.zeros((space.count, d, d), dtype=complex)
    data[0] = rho0
    return ODOState(space, data, scale)


# -- superoperators on row-major flattened blocks ----------------------------

def left_super(A):
    return np.kron(A, np.eye(A.shape[0]))


def right_super(B):
    return np.kron(np.eye(B.shape[0]), B.T)


def commutator_super(A):
    return left_super(A) - right_super(A)


def log_scale(space: HierarchySpace, weights):
    """log s_n for slot weights w (one per slot)."""
    w = np.asarray(weights, dtype=float)
    logw = np.log(np.where(w > 0, w, 1.0))
    n = space.indices
    return 0.5 * (gammaln(n + 1.0).sum(axis=1) + n @ logw)


class _Couplings:
    """Accumulates (row, col, value) triplets per superoperator label."""

    def __init__(self, count):
        self.count = count
        self.parts = {}

    def add(self, label, rows, cols, vals):
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        vals = np.broadcast_to(np.asarray(vals, dtype=complex), rows.shape)
        keep = (cols != OUTSIDE) & (vals != 0)
        if not np.any(keep):
            return
        self.parts.setdefault(label, []).append((rows[keep], cols[keep], vals[keep]))

    def matrices(self, logs):
        out = {}
        for label, chunks in self.parts.items():
            rows = np.concatenate([c[0] for c in chunks])
            cols = np.concatenate([c[1] for c in chunks])
            vals = np.concatenate([c[2] for c in chunks])
            if logs is not None:
                vals = vals * np.exp(logs[cols] - logs[rows])
            out[label] = sp.csr_matrix((vals, (rows, cols)), shape=(self.count, self.count))
        return out


def _diagonal_or_none(S):
    if np.count_nonzero(S - np.diag(np.diag(S))) == 0:
        return np.ascontiguousarray(np.diag(S))
    return None


@dataclass(eq=False)
class HierarchyGenerator:
    """Assembled right-hand side for one hierarchy, system and decomposition."""

    space: HierarchySpace
    d: int
    h_super: np.ndarray
    diag: np.ndarray
    terms: list  # [(P csr, S dense)]
    rates: np.ndarray
    scale: np.ndarray = None
    kind: str = ""
    h_norm: float = field(default=0.0)

    def _check(self, state: ODOState):
        if state.space is not self.space and state.space.count != self.space.count:
            raise ShapeMismatch("state and generator use different hierarchy spaces")
        if state.d != self.d:
            raise ShapeMismatch(f"state blocks are {state.d}x{state.d}, generator expects {self.d}")

    def __post_init__(self):
        # diagonal superoperators (couplings diagonal in the working basis) act
        # by broadcasting instead of a d^2 x d^2 product
        self._plan = [(P, _diagonal_or_none(S), S.T) for P, S in self.terms]
        hd = _diagonal_or_none(self.h_super)
        self._h_plan = (hd, self.h_super.T)

    def apply_flat(self, x):
        """RHS on a (count, d^2) array of stored blocks."""
        hd, hT = self._h_plan
        if hd is not None:
            out = x * (hd[None, :] + self.diag[:, None])
        else:
            out = x @ hT
            out += self.diag[:, None] * x
        for P, sd, ST in self._plan:
            y = P @ x
            if sd is not None:
                y *= sd
            else:
                y = y @ ST
            out += y
        return out

    def __call__(self, state: ODOState) -> ODOState:
        self._check(state)
        x = state.data.reshape(self.space.count, self.d * self.d)
        y = self.apply_flat(x).reshape(state.data.shape)
        return ODOState(self.space, y, self.scale)

    def initial_state(self, rho0) -> ODOState:
        st = initial_state(self.space, rho0, self.scale)
        self._check(st)
        return st

    def dense_matrix(self, max_dim=2000):
        """Explicit (count d^2)^2 matrix for small spectral checks."""
        n = self.space.count * self.d * self.d
        if n > max_dim:
            raise ShapeMismatch(f"dense generator of dimension {n} exceeds {max_dim}")
        eye = sp.identity(self.space.count, format="csr")
        M = sp.kron(eye, self.h_super) + sp.kron(sp.diags(self.diag), np.eye(self.d * self.d))
        for P, S in self.terms:
            M = M + sp.kron(P, S)
        return M.toarray()


def _finish(space, sys_d, H, diag, couplings, supers, rates, logs, kind):
    mats = couplings.matrices(logs)
    terms = [(mats[label], supers[label]) for label in sorted(mats)]
    scale = None if logs is None else np.exp(logs)
    if scale is not None:
        scale.flags.writeable = False
    return HierarchyGenerator(space=space, d=sys_d, h_super=-1j * commutator_super(H),
                              diag=diag, terms=terms, rates=np.asarray(rates, dtype=complex),
                              scale=scale, kind=kind,
                              h_norm=float(np.linalg.norm(H, 2)))


def _require_space(space, side, K):
    if space.side != side:
        raise ShapeMismatch(f"generator needs a {side}-side hierarchy, got {space.side}")
    if space.K != K:
        raise ShapeMismatch(f"hierarchy has K={space.K}, decomposition has {K} terms")


def _require_linear(sys):
    if sys.Q is None:
        raise ValueError("system has no linear coupling operator Q")


# -- double side ---------------------------------------------------------------

def build_continuous_double(space: HierarchySpace, sys: SystemSpec, dec, rescale=True):
    """Double-side generator on (u, v) blocks.

    drho/dt = -i[H, rho] - sum_k (u_k g_k + v_k g_k*) rho
              - i sum_k [Q, r_k rho_{u_k+} + r_k* rho_{v_k+}]
              - i sum_k (u_k r_k Q rho_{u_k-} - v_k r_k* rho_{v_k-} Q),   r_k = sqrt(eta_k)
    """
    _require_space(space, "double", dec.K)
    _require_linear(sys)
    K = dec.K
    r = dec.sqrt_eta
    g = dec.gamma
    n = space.indices
    u, v = n[:, :K], n[:, K:]
    diag = -(u @ g + v @ g.conj())
    rows = np.arange(space.count)
    cp = _Couplings(space.count)
    for k in range(K):
        cp.add("comm", rows, space.raise_table[k], -1j * r[k])
        cp.add("comm", rows, space.raise_table[K + k], -1j * np.conj(r[k]))
        cp.add("left", rows, space.lower_table[k], -1j * r[k] * u[:, k])
        cp.add("right", rows, space.lower_table[K + k], 1j * np.conj(r[k]) * v[:, k])
    Q = sys.Q
    supers = {"comm": commutator_super(Q), "left": left_super(Q), "right": right_super(Q)}
    logs = log_scale(space, np.ones(space.slots)) if rescale else None
    return _finish(space, sys.d, sys.H, diag, cp, supers, g, logs, "continuous-double")


def build_discrete_double(space: HierarchySpace, sys: SystemSpec, dec, rescale=False):
    """Double-side generator for thermofield terms (zeta_k^2, i eps_k).

    Identical to :func:`build_continuous_double` once zeta_k = sqrt(eta_k) is real
    and gamma_k = i eps_k is imaginary, which is checked here.
    """
    if np.any(np.abs(dec.eta.imag) > 0) or np.any(dec.eta.real < 0):
        raise ValueError("discrete-bath terms need real non-negative amplitudes")
    if np.any(dec.gamma.real != 0):
        raise ValueError("discrete-bath terms need purely imaginary rates")
    gen = build_continuous_double(space, sys, dec, rescale=rescale)
    gen.kind = "discrete-double"
    return gen


# -- single side and quadratic ---------------------------------------------------

def _kbar(dec):
    try:
        return dec.kbar()
    except UnpairedTerms as exc:
        raise PairingRequired(f"single-side dynamics needs every term paired; unpaired: {exc}") from exc


def _lowered_by_pair(space, k, kk):
    """Ordinal of n with one quantum removed from k and one from kk."""
    first = space.lower_table[k]
    out = np.full(space.count, OUTSIDE, dtype=np.int64)
    ok = first != OUTSIDE
    out[ok] = space.lower_table[kk][first[ok]]
    return out


def _raised_by_pair(space, k, kk):
    first = space.raise_table[k]
    out = np.full(space.count, OUTSIDE, dtype=np.int64)
    ok = first != OUTSIDE
    out[ok] = space.raise_table[kk][first[ok]]
    return out


def _moved(space, k, kk):
    """Ordinal of n with one quantum moved from slot k to slot kk."""
    first = space.lower_table[k]
    out = np.full(space.count, OUTSIDE, dtype=np.int64)
    ok = first != OUTSIDE
    out[ok] = space.raise_table[kk][first[ok]]
    return out


def _single_side_weights(dec):
    w = np.abs(dec.eta)
    return np.where(w > 0, w, 1.0)


def build_quadratic(space: HierarchySpace, sys: SystemSpec, dec, f2mean=None, rescale=True,
                    include_mixed=True, right_lowering="same"):
    """Single-side generator for alpha0 Q0 + alpha1 Q1 F + alpha2 Q2 F^2.

    With alpha2 = 0 this is the linear single-side hierarchy
        drho_n/dt = -i[H, rho_n] - sum_k n_k g_k rho_n - i sum_k [Q, rho_{n_k+}]
                    - i sum_k n_k (eta_k Q rho_{n_k-} - eta_kbar* rho_{n_k-} Q).
    The F^2 term contributes a double-raise, a double-lower, a mean-field shift
    alpha2 Re<F^2> Q2 (``f2mean`` defaults to the sum of amplitudes), and the
    mixed term
        -2i alpha2 sum_kk' n_k (eta_k Q2 rho_{n_k- k'+} - eta_kbar* rho_{n_k- k'+} Q2)
    which comes from the cross contraction in F (F rho); ``include_mixed=False``
    drops it (this is wrong for alpha2 != 0 and kept only for comparison).

    ``right_lowering="paired"`` reads the right-multiplied lowering term from
    rho_{n_kbar-} instead of rho_{n_k-}; also kept only for comparison.
    """
    _require_space(space, "single", dec.K)
    kbar = _kbar(dec)
    if right_lowering not in ("same", "paired"):
        raise ValueError("right_lowering must be 'same' or 'paired'")
    K = dec.K
    eta = dec.eta
    eta_r = np.conj(eta[kbar])  # amplitude of the right-hand contraction
    g = dec.gamma
    n = space.indices
    rows = np.arange(space.count)
    a0, a1, a2 = sys.alpha0, sys.alpha1, sys.alpha2
    H = sys.H.copy()
    if a0 != 0.0:
        if sys.Q0 is None:
            raise ValueError("alpha0 is non-zero but Q0 is missing")
        H = H + a0 * sys.Q0
    cp = _Couplings(space.count)
    supers = {}
    if a1 != 0.0:
        _require_linear(sys)
        Q1 = sys.Q1
        supers.update({"1comm": commutator_super(Q1), "1left": left_super(Q1),
                       "1right": right_super(Q1)})
        for k in range(K):
            cp.add("1comm", rows, space.raise_table[k], -1j * a1)
            cp.add("1left", rows, space.lower_table[k], -1j * a1 * eta[k] * n[:, k])
            src = space.lower_table[k if right_lowering == "same" else kbar[k]]
            cp.add("1right", rows, src, 1j * a1 * eta_r[k] * n[:, k])
    if a2 != 0.0:
        if sys.Q2 is None:
            raise ValueError("alpha2 is non-zero but Q2 is missing")
        Q2 = sys.Q2
        # <F^2> = C(0) is real; sum(eta) picks up an imaginary part when Im C(t)
        # jumps at t = 0 (Lorentzian tails), which is dropped here
        f2 = (complex(eta.sum()) if f2mean is None else complex(f2mean)).real
        H = H + a2 * f2 * Q2
        supers.update({"2comm": commutator_super(Q2), "2left": left_super(Q2),
                       "2right": right_super(Q2)})
        for k in range(K):
            for kk in range(K):
                cp.add("2comm", rows, _raised_by_pair(space, k, kk), -1j * a2)
                mult = n[:, k] * (n[:, kk] - (k == kk))
                down = _lowered_by_pair(space, k, kk)
                cp.add("2left", rows, down, -1j * a2 * eta[k] * eta[kk] * mult)
                cp.add("2right", rows, down, 1j * a2 * eta_r[k] * eta_r[kk] * mult)
                if include_mixed:
                    moved = _moved(space, k, kk)
                    cp.add("2left", rows, moved, -2j * a2 * eta[k] * n[:, k])
                    cp.add("2right", rows, moved, 2j * a2 * eta_r[k] * n[:, k])
    diag = -(n @ g)
    logs = log_scale(space, _single_side_weights(dec)) if rescale else None
    return _finish(space, sys.d, H, diag, cp, supers, g, logs, "quadratic")


def build_single_side(space: HierarchySpace, sys: SystemSpec, dec, rescale=True,
                      right_lowering="same"):
    _require_linear(sys)
    linear = SystemSpec(H=sys.H, Q=sys.Q, alpha1=1.0)
    gen = build_quadratic(space, linear, dec, rescale=rescale, right_lowering=right_lowering)
    gen.kind = "single-side"
    return gen


# -- one-shot right-hand sides -----------------------------------------------------

def _rescaled_like(state):
    return state.scale is not None


def rhs_discrete_double(state: ODOState, sys: SystemSpec, dec) -> ODOState:
    gen = build_discrete_double(state.space, sys, dec, rescale=_rescaled_like(state))
    return gen(state)


def rhs_continuous_double(state: ODOState, sys: SystemSpec, dec) -> ODOState:
    gen = build_continuous_double(state.space, sys, dec, rescale=_rescaled_like(state))
    return gen(state)


def rhs_single_side(state: ODOState, sys: SystemSpec, dec) -> ODOState:
    gen = build_single_side(state.space, sys, dec, rescale=_rescaled_like(state))
    return gen(state)


def rhs_quadratic(state: ODOState, sys: SystemSpec, dec, f2mean=None, include_mixed=True) -> ODOState:
    gen = build_quadratic(state.space, sys, dec, f2mean=f2mean,
                          rescale=_rescaled_like(state), include_mixed=include_mixed)
    return gen(state)
