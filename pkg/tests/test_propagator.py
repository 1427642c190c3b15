import math

import numpy as np
import pytest

from conftest import SX, SZ
from odoheom import bath as b
from odoheom import decomp as dc
from odoheom import dynamics as dy
from odoheom import oracle as orc
from odoheom import propagator as pr
from odoheom.errors import NonFiniteState, StepLimitExceeded, TraceDriftExceeded
from odoheom.hierarchy import enumerate_hierarchy

DRUDE = b.DrudeLorentz(0.25, 1.0)
BETA1 = b.BathThermalState(1.0)
SB = dy.SystemSpec(H=0.5 * (SZ + SX), Q=SZ)
RHO_UP = np.diag([1.0, 0.0]).astype(complex)


def pade(K=2):
    return dc.pairing_map(dc.pade_decomposition(DRUDE, BETA1, K, certify_result=False))


def spin_boson(L=4, K=2):
    dec = pade(K)
    return dy.build_single_side(enumerate_hierarchy(dec.K, L), SB, dec), dec


def test_config_validation():
    with pytest.raises(ValueError):
        pr.PropagationConfig(t_final=0.0)
    with pytest.raises(ValueError):
        pr.PropagationConfig(t_final=1.0, method="rk4")
    with pytest.raises(ValueError):
        pr.PropagationConfig(t_final=1.0, method="euler")
    with pytest.raises(ValueError):
        pr.PropagationConfig(t_final=1.0, rtol=0.0)
    with pytest.raises(ValueError):
        pr.PropagationConfig(t_final=1.0, snapshot_times=(0.5, 0.2))
    with pytest.raises(ValueError):
        pr.PropagationConfig(t_final=1.0, snapshot_times=(0.0, 2.0))
    assert pr.PropagationConfig(t_final=2.0).snapshot_times == (0.0, 2.0)


@pytest.mark.parametrize("method", ["rk45", "rk4"])
def test_closed_system_rotation(method):
    sys0 = dy.SystemSpec(H=0.5 * SX, Q=np.zeros((2, 2)))
    dec = pade(1)
    gen = dy.build_single_side(enumerate_hierarchy(dec.K, 3), sys0, dec)
    cfg = pr.PropagationConfig(t_final=math.pi, method=method, rtol=1e-9, atol=1e-12, dt=1e-3)
    traj = pr.propagate(gen.initial_state(RHO_UP), gen, cfg)
    ref = orc.unitary_reference(sys0.H, RHO_UP, traj.times)
    assert np.abs(traj.rho - ref).max() < 1e-8
    # rotation by pi about x flips the spin
    assert abs(traj.rho[-1][1, 1] - 1.0) < 1e-8


def test_zero_tier_is_von_neumann():
    dec = pade(2)
    gen = dy.build_single_side(enumerate_hierarchy(dec.K, 0), SB, dec)
    assert gen.space.count == 1
    cfg = pr.PropagationConfig.uniform(5.0, 6, rtol=1e-10, atol=1e-13)
    traj = pr.propagate(gen.initial_state(RHO_UP), gen, cfg)
    assert np.abs(traj.rho - orc.unitary_reference(SB.H, RHO_UP, traj.times)).max() < 1e-8


def test_snapshots_land_on_requested_times():
    gen, _ = spin_boson()
    snaps = (0.0, 0.1, 0.1, 0.37, 2.0, 2.5)
    traj = pr.propagate(gen.initial_state(RHO_UP), gen,
                        pr.PropagationConfig(t_final=2.5, snapshot_times=snaps, keep_states=True))
    assert np.array_equal(traj.times, np.array(snaps))
    assert len(traj.states) == len(snaps)
    assert np.array_equal(traj.rho[1], traj.rho[2])
    assert np.array_equal(traj.rho[0], RHO_UP)


def test_rk4_matches_rk45_at_moderate_step():
    gen, dec = spin_boson(L=5)
    gmax = np.abs(dec.gamma).max()
    times = tuple(np.linspace(0, 5, 11))
    ref = pr.propagate(gen.initial_state(RHO_UP), gen,
                       pr.PropagationConfig(t_final=5.0, rtol=1e-11, atol=1e-14, snapshot_times=times))
    fixed = pr.propagate(gen.initial_state(RHO_UP), gen,
                         pr.PropagationConfig(t_final=5.0, method="rk4", dt=0.1 / gmax, snapshot_times=times))
    assert np.abs(ref.rho - fixed.rho).max() < 1e-6


def test_rk4_convergence_order():
    gen, dec = spin_boson(L=4)
    # keep every step inside the stability region of the fastest tier
    base = 0.5 / (gen.space.L * np.abs(dec.gamma).max())
    times = (0.0, 4.0)
    ref = pr.propagate(gen.initial_state(RHO_UP), gen,
                       pr.PropagationConfig(t_final=4.0, rtol=1e-12, atol=1e-15, snapshot_times=times))
    errs = []
    for dt in (base, base / 2, base / 4):
        traj = pr.propagate(gen.initial_state(RHO_UP), gen,
                            pr.PropagationConfig(t_final=4.0, method="rk4", dt=dt, snapshot_times=times))
        errs.append(np.abs(traj.rho[-1] - ref.rho[-1]).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.7), orders


def test_determinism():
    gen, _ = spin_boson()
    cfg = pr.PropagationConfig.uniform(3.0, 7)
    a = pr.propagate(gen.initial_state(RHO_UP), gen, cfg)
    c = pr.propagate(gen.initial_state(RHO_UP), gen, cfg)
    assert np.array_equal(a.rho, c.rho)
    assert a.steps == c.steps


def test_telemetry_and_conservation():
    gen, _ = spin_boson()
    traj = pr.propagate(gen.initial_state(RHO_UP), gen, pr.PropagationConfig.uniform(5.0, 11))
    assert traj.steps > 0 and traj.rhs_calls >= 6 * traj.steps
    assert 0 < traj.max_error_estimate <= 1.0
    assert traj.max_trace_drift <= 1e-8
    assert traj.max_hermiticity_defect <= 1e-10
    assert set(traj.telemetry) >= {"steps", "rejected", "max_error_estimate", "max_trace_drift"}


def test_observer_sees_every_snapshot():
    gen, _ = spin_boson()
    seen = []
    pr.propagate(gen.initial_state(RHO_UP), gen, pr.PropagationConfig.uniform(1.0, 5),
                 observer=lambda t, st: seen.append((t, st.block(0)[0, 0])))
    assert [t for t, _ in seen] == list(np.linspace(0, 1, 5))


def test_step_limit():
    gen, _ = spin_boson()
    with pytest.raises(StepLimitExceeded):
        pr.propagate(gen.initial_state(RHO_UP), gen, pr.PropagationConfig(t_final=5.0, max_steps=3))
    with pytest.raises(StepLimitExceeded):
        pr.propagate(gen.initial_state(RHO_UP), gen,
                     pr.PropagationConfig(t_final=5.0, method="rk4", dt=0.01, max_steps=10))


def test_non_finite_state_reports_time():
    gen, _ = spin_boson()
    gen.diag = gen.diag.copy()
    gen.diag[-1] = 1e300  # an absurd growth rate overflows the deepest block
    st = gen.initial_state(RHO_UP)
    st.data[-1] = 1.0
    with pytest.raises(NonFiniteState) as info, np.errstate(all="ignore"):
        pr.propagate(st, gen, pr.PropagationConfig(t_final=1.0, method="rk4", dt=0.1, trace_tol=math.inf))
    assert info.value.t > 0


def test_trace_drift_aborts():
    gen, _ = spin_boson()
    gen.diag = gen.diag.copy()
    gen.diag[0] = -0.5  # leaks tier-0 population
    with pytest.raises(TraceDriftExceeded):
        pr.propagate(gen.initial_state(RHO_UP), gen, pr.PropagationConfig(t_final=1.0))
