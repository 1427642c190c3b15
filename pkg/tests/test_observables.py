import math

import numpy as np
import pytest

from conftest import SX, SZ
from odoheom import bath as b
from odoheom import decomp as dc
from odoheom import dynamics as dy
from odoheom import observables as ob
from odoheom import oracle as orc
from odoheom import propagator as pr
from odoheom.errors import TierTooShallow
from odoheom.hierarchy import enumerate_hierarchy

SB = dy.SystemSpec(H=0.5 * (SZ + SX), Q=SZ)
RHO_UP = np.diag([1.0, 0.0]).astype(complex)
DRUDE = b.DrudeLorentz(0.25, 1.0)
BETA1 = b.BathThermalState(1.0)


def test_reduced_density_of_initial_state():
    dec = dc.pairing_map(dc.pade_decomposition(DRUDE, BETA1, 2, certify_result=False))
    st = dy.initial_state(enumerate_hierarchy(dec.K, 3), RHO_UP)
    red = ob.reduced_density(st)
    assert np.array_equal(red.rho, RHO_UP)
    assert red.hermiticity_defect == 0.0 and red.trace_defect == 0.0


def test_f_squared_mean_single_term():
    dec = dc.BathDecomposition(np.array([0.5 + 0j]), np.array([1.0 + 0j]))
    assert ob.f_squared_mean(dec) == 0.5


def test_f_squared_mean_discrete_mode():
    # <F^2> of one thermal mode with F = c x, x = (a + a^dag)/sqrt(2)
    c, w, beta = 0.7, 1.3, 1.0
    dec = dc.discrete_to_decomposition(b.DiscreteModes((c,), (w,)), b.BathThermalState(beta))
    assert abs(ob.f_squared_mean(dec) - 0.5 * c * c / math.tanh(beta * w / 2)) < 1e-14


def test_f_squared_mean_brownian_pade_vs_quadrature():
    model = b.BrownianOscillator(0.3, 1.2, 0.6)
    dec = dc.pade_decomposition(model, BETA1, 6, certify_result=False)
    c0 = b.correlation_function(model, BETA1, 0.0)
    assert abs(ob.f_squared_mean(dec) - c0) < 1e-5 * abs(c0)


def test_moments_at_initial_time():
    dec = dc.pairing_map(dc.pade_decomposition(DRUDE, BETA1, 2, certify_result=False))
    st = dy.initial_state(enumerate_hierarchy(dec.K, 3), RHO_UP)
    assert ob.correlated_moment(st, SZ, 1) == 0
    assert ob.correlated_moment(st, 1.0, 2, dec) == ob.f_squared_mean(dec)


def test_tier_too_shallow():
    dec = dc.pairing_map(dc.pade_decomposition(DRUDE, BETA1, 2, certify_result=False))
    st = dy.initial_state(enumerate_hierarchy(dec.K, 1), RHO_UP)
    with pytest.raises(TierTooShallow):
        ob.correlated_moment(st, SZ, 2, dec)
    with pytest.raises(ValueError):
        ob.correlated_moment(dy.initial_state(enumerate_hierarchy(dec.K, 2, "double"), RHO_UP), SZ, 1)


@pytest.fixture(scope="module", params=[2.0, math.inf])
def oracle_and_hierarchy(request):
    """One mode coupled to a tunnelling qubit, evolved both ways."""
    modes = b.DiscreteModes((0.5,), (1.1,))
    beta = request.param
    times = np.linspace(0, 4, 5)
    fock = orc.FockConfig.from_modes(modes, 24, beta)
    ref = orc.dense_von_neumann(SB, fock, RHO_UP, times, keep_total=True)
    dec = dc.pairing_map(dc.discrete_to_decomposition(modes, b.BathThermalState(beta), keep_zero=True))
    gen = dy.build_single_side(enumerate_hierarchy(dec.K, 12), SB, dec)
    traj = pr.propagate(gen.initial_state(RHO_UP), gen,
                        pr.PropagationConfig(t_final=4.0, rtol=1e-11, atol=1e-13,
                                             snapshot_times=tuple(times), keep_states=True))
    ops = orc._FockOperators(fock, 2)
    return ref, traj, dec, ops


def test_first_moment_vs_dense_oracle(oracle_and_hierarchy):
    ref, traj, _, ops = oracle_and_hierarchy
    for A in (np.eye(2), SZ, SX):
        op = np.kron(A, ops.F)
        for rho_t, st in zip(ref.rho_total, traj.states):
            exact = np.trace(op @ rho_t)
            assert abs(ob.correlated_moment(st, A, 1) - exact) < 1e-5


def test_second_moment_vs_dense_oracle(oracle_and_hierarchy):
    ref, traj, dec, ops = oracle_and_hierarchy
    for A in (np.eye(2), SZ):
        op = np.kron(A, ops.F @ ops.F)
        for rho_t, st in zip(ref.rho_total, traj.states):
            exact = np.trace(op @ rho_t)
            assert abs(ob.correlated_moment(st, A, 2, dec) - exact) < 1e-5


def test_moments_of_identity_are_real(oracle_and_hierarchy):
    _, traj, dec, _ = oracle_and_hierarchy
    for st in traj.states:
        assert abs(ob.correlated_moment(st, 1.0, 1).imag) <= 1e-10
        assert abs(ob.correlated_moment(st, 1.0, 2, dec).imag) <= 1e-10
