"""Physical quantities read off a hierarchy state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ODOState
from .errors import TierTooShallow


@dataclass(frozen=True)
class ReducedDensity:
    rho: np.ndarray
    hermiticity_defect: float
    trace_defect: float


def reduced_density(state: ODOState) -> ReducedDensity:
    """Tier-0 block with its Hermiticity and trace defects."""
    rho = state.block(0).copy()
    return ReducedDensity(rho, float(np.max(np.abs(rho - rho.conj().T))),
                          float(abs(np.trace(rho) - 1.0)))


def f_squared_mean(dec) -> complex:
    """<F^2> of the bath, i.e. the sum of all amplitudes (C at t = 0)."""
    return complex(np.sum(dec.eta))


def _tier_blocks(state, tier):
    sp = state.space
    lo, hi = sp.tier_starts[tier], sp.tier_starts[tier + 1]
    return range(lo, hi)


def correlated_moment(state: ODOState, A, order: int, dec=None) -> complex:
    """tr(A F^order rho_T) from a single-side state.

    order 1: sum_k tr(A rho_{0_k+});
    order 2: sum_k eta_k tr(A rho_0) + sum_kk' tr(A rho_{0_kk'++}), where the
    double sum runs over ordered pairs (k, k'); ``dec`` supplies eta.
    """
    sp = state.space
    if sp.side != "single":
        raise ValueError("correlated moments are defined on single-side states")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if sp.L < order:
        raise TierTooShallow(f"order {order} needs tier >= {order}, hierarchy has L={sp.L}")
    A = np.asarray(A, dtype=complex)
    if A.ndim == 0:
        A = A * np.eye(state.d)

    def tr(i):
        return np.einsum("ij,ji->", A, state.block(i))

    if order == 1:
        return complex(sum(tr(i) for i in _tier_blocks(state, 1)))
    if dec is None:
        raise ValueError("order 2 needs the decomposition amplitudes")
    total = f_squared_mean(dec) * tr(0)
    for i in _tier_blocks(state, 2):
        n = sp.indices[i]
        # ordered pairs: off-diagonal blocks (k != k') appear twice
        mult = 1 if n.max() == 2 else 2
        total += mult * tr(i)
    return complex(total)
