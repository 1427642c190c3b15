"""Time stepping for hierarchy generators: fixed-step RK4 and adaptive RK45.

Both integrators land exactly on every snapshot time. The tier-0 trace is
checked after every accepted step and a drift beyond ``trace_tol`` aborts.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import HierarchyGenerator, ODOState
from .errors import NonFiniteState, StepLimitExceeded, TraceDriftExceeded


@dataclass(frozen=True)
class PropagationConfig:
    t_final: float
    method: str = "rk45"
    dt: float = None
    rtol: float = 1e-8
    atol: float = 1e-10
    snapshot_times: tuple = None
    max_steps: int = 1_000_000
    trace_tol: float = 1e-8
    keep_states: bool = False
    first_step: float = None

    def __post_init__(self):
        if not self.t_final > 0:
            raise ValueError("t_final must be > 0")
        if self.method not in ("rk4", "rk45"):
            raise ValueError("method must be 'rk4' or 'rk45'")
        if self.method == "rk4" and not (self.dt is not None and self.dt > 0):
            raise ValueError("fixed-step rk4 needs dt > 0")
        if self.method == "rk45" and not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rk45 needs rtol > 0 and atol > 0")
        snaps = self.snapshot_times
        if snaps is None:
            snaps = (0.0, self.t_final)
        snaps = tuple(float(s) for s in snaps)
        if any(b < a for a, b in zip(snaps, snaps[1:])):
            raise ValueError("snapshot_times must be sorted")
        if snaps and (snaps[0] < 0 or snaps[-1] > self.t_final * (1 + 1e-12)):
            raise ValueError("snapshot_times must lie in [0, t_final]")
        object.__setattr__(self, "snapshot_times", snaps)

    @classmethod
    def uniform(cls, t_final, count, **kw):
        return cls(t_final=t_final, snapshot_times=tuple(np.linspace(0.0, t_final, count)), **kw)


@dataclass
class Trajectory:
    times: np.ndarray
    rho: np.ndarray  # (snapshots, d, d) tier-0 blocks
    states: list = None  # ODOState per snapshot when requested
    steps: int = 0
    rejected: int = 0
    rhs_calls: int = 0
    max_error_estimate: float = 0.0
    max_trace_drift: float = 0.0
    max_hermiticity_defect: float = 0.0
    wall_time: float = 0.0
    telemetry: dict = field(default_factory=dict)


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_A_ROWS = [np.array(row + [0.0] * (7 - len(row))) for row in _A]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def initial_step(gen: HierarchyGenerator, t_final):
    scales = []
    if gen.h_norm > 0:
        scales.append(0.01 / gen.h_norm)
    gmax = np.abs(gen.rates).max() if gen.rates.size else 0.0
    if gmax > 0:
        scales.append(0.1 / gmax)
    return min(scales + [0.01 * t_final])


def _error_norm(err, y0, y1, rtol, atol, count):
    """Max over blocks of the RMS scaled entry error."""
    sc = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    q = (np.abs(err) / sc) ** 2
    return math.sqrt(q.reshape(count, -1).mean(axis=1).max())


class _Monitor:
    def __init__(self, d, trace0, tol):
        self.eye_idx = np.arange(0, d * d, d + 1)
        self.trace0 = trace0
        self.tol = tol
        self.max_drift = 0.0
        self.max_herm = 0.0
        self.d = d

    def check(self, t, y):
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(t)
        tr = y[0, self.eye_idx].sum()
        drift = abs(tr - self.trace0)
        self.max_drift = max(self.max_drift, drift)
        if drift > self.tol:
            raise TraceDriftExceeded(f"tier-0 trace drifted by {drift:.3e} at t={t:.6g}")
        rho = y[0].reshape(self.d, self.d)
        self.max_herm = max(self.max_herm, float(np.max(np.abs(rho - rho.conj().T))))


def propagate(state0: ODOState, gen: HierarchyGenerator, config: PropagationConfig,
              observer=None) -> Trajectory:
    """Integrate d/dt state = gen(state) and record tier-0 at the snapshot times.

    ``observer(t, state)`` is called at every snapshot when given.
    """
    gen._check(state0)
    count, d = gen.space.count, gen.d
    y = state0.data.reshape(count, d * d).astype(complex, copy=True)
    snaps = np.array(config.snapshot_times)
    mon = _Monitor(d, y[0, ::d + 1].sum(), config.trace_tol)
    mon.check(0.0, y)
    rho_out = np.empty((len(snaps), d, d), dtype=complex)
    states = [] if config.keep_states else None
    traj = Trajectory(times=snaps, rho=rho_out, states=states)
    start = time.perf_counter()
    f = gen.apply_flat

    def record(i, t, y):
        rho_out[i] = y[0].reshape(d, d)
        if states is not None or observer is not None:
            st = ODOState(gen.space, y.reshape(count, d, d).copy(), gen.scale)
            if states is not None:
                states.append(st)
            if observer is not None:
                observer(t, st)

    t = 0.0
    si = 0
    while si < len(snaps) and snaps[si] <= 0.0:
        record(si, t, y)
        si += 1
    if config.method == "rk4":
        _run_rk4(f, y, t, snaps, si, config, traj, mon, record)
    else:
        _run_rk45(f, y, t, snaps, si, config, traj, mon, record, gen)
    traj.wall_time = time.perf_counter() - start
    traj.max_trace_drift = mon.max_drift
    traj.max_hermiticity_defect = mon.max_herm
    traj.telemetry = {"steps": traj.steps, "rejected": traj.rejected, "rhs_calls": traj.rhs_calls,
                      "max_error_estimate": traj.max_error_estimate,
                      "max_trace_drift": traj.max_trace_drift,
                      "max_hermiticity_defect": traj.max_hermiticity_defect,
                      "wall_time": traj.wall_time}
    return traj


def _run_rk4(f, y, t, snaps, si, cfg, traj, mon, record):
    for target in snaps[si:]:
        span = target - t
        nsteps = max(1, math.ceil(span / cfg.dt - 1e-9)) if span > 0 else 0
        h = span / nsteps if nsteps else 0.0
        for _ in range(nsteps):
            if traj.steps >= cfg.max_steps:
                raise StepLimitExceeded(f"reached {cfg.max_steps} steps at t={t:.6g}")
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            traj.steps += 1
            traj.rhs_calls += 4
            mon.check(t, y)
        t = target
        record(si, t, y)
        si += 1


def _run_rk45(f, y, t, snaps, si, cfg, traj, mon, record, gen):
    count = y.shape[0]
    h = cfg.first_step or initial_step(gen, cfg.t_final)
    ks = np.empty((7,) + y.shape, dtype=complex)
    ks[0] = f(y)
    traj.rhs_calls += 1
    while si < len(snaps):
        target = snaps[si]
        if traj.steps + traj.rejected >= cfg.max_steps:
            raise StepLimitExceeded(f"reached {cfg.max_steps} steps at t={t:.6g}")
        last = t + h >= target - 1e-12 * max(1.0, abs(target))
        hs = target - t if last else h
        for i in range(1, 7):
            yi = y + hs * np.tensordot(_A_ROWS[i][:i], ks[:i], axes=1)
            ks[i] = f(yi)
        traj.rhs_calls += 6
        y_new = yi  # the last stage is evaluated at the 5th-order solution (FSAL)
        err = hs * np.tensordot(_E, ks, axes=1)
        enorm = _error_norm(err, y, y_new, cfg.rtol, cfg.atol, count)
        if not np.isfinite(enorm):
            raise NonFiniteState(t + hs)
        if enorm <= 1.0:
            t = target if last else t + hs
            y[...] = y_new
            ks[0] = ks[6]
            traj.steps += 1
            traj.max_error_estimate = max(traj.max_error_estimate, enorm)
            mon.check(t, y)
            if last:
                record(si, t, y)
                si += 1
                while si < len(snaps) and snaps[si] <= t:
                    record(si, t, y)
                    si += 1
            factor = 5.0 if enorm == 0 else min(5.0, 0.9 * enorm ** -0.2)
            if not last or hs >= h:
                h = hs * factor
        else:
            traj.rejected += 1
            h = hs * max(0.2, 0.9 * enorm ** -0.2)
        if h < 1e-14 * max(1.0, abs(t)):
            raise StepLimitExceeded(f"step size underflow at t={t:.6g}")
