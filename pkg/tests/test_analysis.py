import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from wplap import analysis as an
from wplap.errors import InvalidParameters, InvalidRun, NotApplicable, UndefinedRatio
from wplap.evolution import evolve
from wplap.grid import Grid, GridFunction, norm_Lq_v, weighted_mass
from wplap.oracles import sine_product
from wplap.rng import make_rng
from wplap.weights import MatrixWeightField

from conftest import field_for, identity_field, rough_function


# -- decay parameters ---------------------------------------------------------

def test_decay_parameters_examples():
    d = an.decay_parameters(2.0, 2.0, 3.0)
    assert (d.sigma_prime, d.beta, d.gamma, d.q_c) == pytest.approx((1.5, 0.75, 1.0, 0.0))
    d = an.decay_parameters(3.0, 1.0, 2.0)
    assert (d.beta, d.gamma, d.q_c) == pytest.approx((2 / 3, 1 / 3, -2.0))


@pytest.mark.parametrize("p,q0,sigma,match", [
    (2.0, 2.0, 1.0, "sigma"), (2.0, 0.5, 2.0, "q0 must be >= 1"), (1.2, 1.0, 2.0, "q_c = sigma'\\(2-p\\) = 1.6")])
def test_decay_parameters_rejects(p, q0, sigma, match):
    with pytest.raises(InvalidParameters, match=match):
        an.decay_parameters(p, q0, sigma)


@st.composite
def admissible(draw):
    p = draw(st.floats(1.05, 6.0))
    sigma = draw(st.floats(1.05, 5.0))
    q_c = sigma / (sigma - 1) * (2 - p)
    lo = max(1.0, q_c) + 1e-3
    return p, draw(st.floats(lo, lo + 10.0)), sigma


@given(admissible())
def test_beta_gamma_identity(t):
    p, q0, sigma = t
    d = an.decay_parameters(p, q0, sigma)
    assert d.beta > 0 and d.gamma > 0
    lhs = q0 + d.gamma * (2 - q0) + p * d.beta * (2 - q0)
    rhs = 2 * (1 + d.beta * (2 - q0))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


@given(st.floats(1.05, 6.0), st.floats(1.0, 10.0), st.floats(1.05, 5.0))
def test_linear_case_gamma_one(p, q0, sigma):
    assert an.decay_parameters(2.0, q0, sigma).gamma == pytest.approx(1.0)


@given(admissible())
def test_scaling_balance(t):
    d = an.decay_parameters(*t)
    assert 1 - d.beta * (d.p - 2) == pytest.approx(d.gamma, rel=1e-12, abs=1e-12)


# -- ultracontractivity -------------------------------------------------------

def test_heat_ultracontractive_constant_bounded():
    g = Grid.box(65)
    f = identity_field(g)
    tr = evolve(sine_product(g, 1) + sine_product(g, 3, 0.5), 1.0, 100, 2.0, f)
    rep = an.ultracontractive_check(tr, an.decay_parameters(2.0, 2.0, 3.0), window=(0.01, 1.0))
    assert rep.bounded and rep.passed
    assert rep.times[0] == pytest.approx(0.01)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_scaled_data_reproduces_constant(p):
    g = Grid.box(33)
    f = identity_field(g)
    u0 = rough_function(g, 1)
    params = an.decay_parameters(p, 1.0, 2.0)
    T, n = 0.2, 20
    a = an.ultracontractive_check(evolve(u0 * 2.0, T, n, p, f), params)
    b = an.ultracontractive_check(evolve(u0, 2.0 ** (p - 2) * T, n, p, f), params)
    assert a.sup_c == pytest.approx(b.sup_c, rel=1e-9)


def test_ultracontractive_zero_datum(line):
    tr = evolve(line.zeros(), 0.1, 2, 2.0, identity_field(line))
    with pytest.raises(UndefinedRatio):
        an.ultracontractive_check(tr, an.decay_parameters(2.0, 2.0, 3.0))


def test_reference_drift_fails_verdict(line):
    f = identity_field(line)
    u0 = sine_product(line, 1)
    params = an.decay_parameters(2.0, 2.0, 3.0)
    other = evolve(u0, 0.1, 10, 2.0, f)
    other.snapshots = other.snapshots[:1] + [u * 1.5 for u in other.snapshots[1:]]
    rep = an.ultracontractive_check(evolve(u0, 0.1, 10, 2.0, f), params, references=[other])
    assert not rep.passed and rep.max_relative_change == pytest.approx(0.5)


# -- extinction ---------------------------------------------------------------

def test_extinction_bound_primary_branch():
    g = Grid.box(33)
    f = identity_field(g)
    u0 = rough_function(g, 2)
    M = 0.37
    T0, h, branch = an.extinction_time_bound(1.5, 4 / 3, M, u0, f)
    assert branch == "q_c>1" and h == pytest.approx(1.0)
    assert T0 == pytest.approx(2 * M ** 1.5 * norm_Lq_v(u0, 2, f) ** 0.5, rel=1e-12)


def test_extinction_bound_fallback_matches_ode():
    g = Grid.box(33)
    f = MatrixWeightField(g, np.ones((32, 1, 1)), np.full(33, 2.0))
    u0 = rough_function(g, 3)
    p, sigma, M, q0 = 1.8, 2.0, 0.5, 1.5
    T0, h0, branch = an.extinction_time_bound(p, sigma, M, u0, f, q0_fallback=q0)
    assert branch.startswith("fallback")
    sp_ = sigma / (sigma - 1)
    q_c = sp_ * (2 - p)
    c = q0 * (q0 - 1) / (M ** p * h0 ** p * weighted_mass(f) ** ((q0 - q_c) / (q0 * sp_)))
    a = (q0 + p - 2) / q0
    Y0 = norm_Lq_v(u0, q0, f) ** q0
    # the tail from Y to 0 lasts Y^(1-a)/(c(1-a)); with 1-a ~ 0.13 the
    # threshold has to be tiny for the remaining time to be negligible
    hit = lambda t, y: y[0] - 1e-60 * Y0
    hit.terminal = True
    sol = solve_ivp(lambda t, y: [-c * max(y[0], 0.0) ** a], (0, 10 * T0), [Y0], events=hit,
                    method="LSODA", rtol=1e-10, atol=1e-80 * Y0)
    assert sol.t_events[0][0] == pytest.approx(T0, rel=1e-4)


def test_extinction_zero_datum_and_range(line):
    f = identity_field(line)
    tr = evolve(line.zeros(), 0.1, 2, 1.5, f)
    assert an.extinction_analysis(tr, 4 / 3, 1.0).t_ext == 0.0
    tr3 = evolve(sine_product(line, 1), 0.1, 2, 3.0, f)
    with pytest.raises(NotApplicable):
        an.extinction_analysis(tr3, 2.0, 1.0)


def test_extinction_detected_after_threshold():
    g = Grid.box(65)
    f = identity_field(g)
    tr = evolve(sine_product(g, 1), 0.5, 100, 1.5, f)
    res = an.extinction_analysis(tr, 4 / 3, 0.5)
    assert res.t_ext is not None
    k = int(round(res.t_ext / tr.tau))
    linf = tr.observable("Linf")
    assert np.all(linf[k:] < res.eps_ext) and linf[k - 1] >= res.eps_ext
    assert res.eps_ext == pytest.approx(1e-8 * linf[0])


# -- Sobolev ------------------------------------------------------------------

def test_poincare_constant_1d():
    g = Grid.box(512)
    est = an.estimate_sobolev(g, identity_field(g), 2.0, 1.0)
    assert est.M_hat == pytest.approx(1 / np.pi, rel=1e-2)
    # sharper: the discrete first eigenvalue (4/h^2) sin^2(pi h / 2)
    h = g.spacing[0]
    assert est.M_hat == pytest.approx(h / (2 * np.sin(np.pi * h / 2)), rel=1e-8)
    assert est.reproduce(identity_field(g)) == pytest.approx(est.M_hat, rel=1e-8)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_p_poincare_constant_1d(p):
    # closed form on (0, 1): M = 1 / pi_p, pi_p = 2 pi (p-1)^(1/p) / (p sin(pi/p))
    g = Grid.box(256)
    est = an.estimate_sobolev(g, identity_field(g), p, 1.0, an.SobolevConfig(n_starts=4))
    pi_p = 2 * np.pi * (p - 1) ** (1 / p) / (p * np.sin(np.pi / p))
    assert est.M_hat == pytest.approx(1 / pi_p, rel=1e-3)


def test_sobolev_dominates_probes_and_is_monotone():
    g = Grid.box(65)
    f = field_for(g, 4, "anisotropic")
    probes = [rough_function(g, k) for k in range(5)]
    small = an.estimate_sobolev(g, f, 3.0, 2.0, an.SobolevConfig(n_starts=3))
    big = an.estimate_sobolev(g, f, 3.0, 2.0, an.SobolevConfig(n_starts=6), probes=probes)
    assert big.M_hat >= small.M_hat
    assert big.start_ratios[:3] == small.start_ratios
    for u in probes:
        assert big.M_hat >= an.sobolev_ratio(u, 3.0, 2.0, f)


def test_sobolev_ratio_scale_invariant(line):
    f = identity_field(line)
    u = rough_function(line, 1)
    assert an.sobolev_ratio(u * 7.5, 1.5, 4 / 3, f) == pytest.approx(an.sobolev_ratio(u, 1.5, 4 / 3, f), rel=1e-12)
    with pytest.raises(UndefinedRatio):
        an.sobolev_ratio(line.zeros(), 2.0, 2.0, f)


def test_sobolev_rejects_sigma_below_one(line):
    with pytest.raises(InvalidParameters):
        an.estimate_sobolev(line, identity_field(line), 2.0, 0.9)


# -- Nash -----------------------------------------------------------------------

def test_nash_exponents_example():
    a, b = an.nash_exponents(2.0, 1.0, 3.0)
    assert (a, b) == pytest.approx((0.6, 0.4))


@given(admissible())
def test_nash_exponents_sum_to_one(t):
    p, q0, sigma = t
    a, b = an.nash_exponents(p, min(q0, 1.9), sigma)
    assert a + b == pytest.approx(1.0, rel=1e-12)


def test_nash_ratio_properties(line):
    f = identity_field(line)
    u = rough_function(line, 3)
    r = an.nash_check(u, 1.0, 2.0, 3.0, f)
    assert an.nash_check(u * -4.0, 1.0, 2.0, 3.0, f) == pytest.approx(r, rel=1e-12)
    with pytest.raises(UndefinedRatio):
        an.nash_check(line.zeros(), 1.0, 2.0, 3.0, f)
    with pytest.raises(InvalidParameters):
        an.nash_check(u, 2.0, 2.0, 3.0, f)


def test_nash_sup_stable_and_below_sobolev_bound():
    g = Grid.box(65)
    f = identity_field(g)
    p, q0, sigma = 2.0, 1.0, 3.0
    sups = [max(an.nash_check(an.random_smooth(g, make_rng(seed, 4, i)), q0, sigma, p, f) for i in range(100))
            for seed in (0, 1)]
    assert all(np.isfinite(sups))
    assert sups[0] == pytest.approx(sups[1], rel=0.1)
    M = an.estimate_sobolev(g, f, p, sigma).M_hat
    assert max(sups) <= an.nash_constant_from_sobolev(M, p, q0, sigma)


# -- entropy and log-Sobolev ----------------------------------------------------

@given(st.integers(0, 10_000), st.sampled_from([1.0, 2.0, 3.0]))
def test_entropy_power_identity(seed, h):
    g = Grid.box(9, 0, 1, 2)
    f = field_for(g, seed, "anisotropic")
    u = rough_function(g, seed)
    lhs = h * an.entropy_J(u, h, f)
    rhs = an.entropy_J(np.abs(u.values) ** h, 1.0, f)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


@given(st.integers(0, 10_000))
def test_entropy_nonnegative_for_unit_mass(seed):
    g = Grid.box(9, 0, 1, 2)
    f0 = field_for(g, seed, "anisotropic")
    f = MatrixWeightField(g, f0.Q, f0.v_nodes / weighted_mass(f0))
    u = rough_function(g, seed)
    for h in (1.0, 2.0, 3.0):
        assert an.entropy_J(u, h, f) >= -1e-14
    assert an.entropy_J(np.full(g.n_nodes, 3.0), 2.0, f) == pytest.approx(0.0, abs=1e-14)


def test_entropy_of_constant_modulus():
    g = Grid.box(17, 0, 3.0, 1)
    f = identity_field(g, v=2.0)
    vol = weighted_mass(f)
    vals = np.where(np.arange(g.n_nodes) % 2, 5.0, -5.0)
    for r in (1.0, 2.0, 2.5):
        assert an.entropy_J(vals, r, f) == pytest.approx(-math.log(vol) / r, rel=1e-12)
    with pytest.raises(UndefinedRatio):
        an.entropy_J(np.zeros(g.n_nodes), 2.0, f)


def test_log_sobolev_gap_scale_invariant_and_validated(line):
    f = identity_field(line)
    u = rough_function(line, 2)
    gap = an.log_sobolev_gap(u, 2.0, 0.3, 2.0, 0.5, 2.0, f)
    assert an.log_sobolev_gap(u * 9.0, 2.0, 0.3, 2.0, 0.5, 2.0, f) == pytest.approx(gap, rel=1e-10)
    with pytest.raises(InvalidParameters):
        an.log_sobolev_gap(u, 4.0, 0.3, 2.0, 0.5, 2.0, f)
    with pytest.raises(InvalidParameters):
        an.log_sobolev_gap(u, 2.0, 0.0, 2.0, 0.5, 2.0, f)


def test_log_sobolev_unit_epsilon():
    g = Grid.box(65)
    f = identity_field(g)
    p, sigma = 2.0, 2.0
    M = 1.05 * an.estimate_sobolev(g, f, p, sigma).M_hat
    for i in range(200):
        rng = make_rng(3, i)
        u = an.random_smooth(g, rng)
        r = rng.uniform(1.0, sigma * p)
        assert an.log_sobolev_gap(u, r, 1.0, sigma, M, p, f) <= 0


# -- L^r dissipation --------------------------------------------------------------

def test_lr_r1_is_l1_monotonicity():
    g = Grid.box(33)
    f = field_for(g, 2, "anisotropic")
    tr = evolve(rough_function(g, 2).positive_part(), 0.05, 8, 1.5, f)
    rep = an.lr_dissipation_check(tr, 1.0)
    assert np.all(rep.rhs == 0) and rep.passed
    assert np.allclose(rep.lhs, np.diff(tr.observable("L1")) / tr.tau)


def test_lr_zero_trajectory(line):
    tr = evolve(line.zeros(), 0.1, 3, 3.0, identity_field(line))
    rep = an.lr_dissipation_check(tr, 2.0)
    assert np.all(rep.lhs == 0) and np.all(rep.rhs == 0) and rep.passed


def test_lr_heat_r2_matches_dissipation():
    g = Grid.box(65)
    f = identity_field(g)
    tr = evolve(sine_product(g, 1), 0.1, 200, 2.0, f)
    rep = an.lr_dissipation_check(tr, 2.0)
    assert rep.passed
    # rhs = -2 int |grad u_k|^2 = -4 D_2(u_k); lhs differs by O(tau)
    assert np.allclose(rep.rhs, -4 * tr.observable("Dp")[1:], rtol=1e-12)
    assert np.allclose(rep.lhs, rep.rhs, rtol=0.01)


def test_lr_rejects_signed_run(line):
    tr = evolve(rough_function(line, 1), 0.1, 2, 2.0, identity_field(line))
    with pytest.raises(InvalidRun):
        an.lr_dissipation_check(tr, 2.0)


@given(st.integers(0, 10_000), st.sampled_from([1.5, 2.0, 3.0]), st.sampled_from([1.0, 2.0, 3.0]))
def test_lr_dissipation_holds_on_nonnegative_runs(seed, p, r):
    g = Grid.box(33)
    f = field_for(g, seed, "anisotropic")
    tr = evolve(rough_function(g, seed).positive_part(), 0.05, 5, p, f)
    assert an.lr_dissipation_check(tr, r).passed
