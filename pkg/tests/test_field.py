import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brownlab import field


@given(st.floats(0.02, 0.3), st.floats(0.0, 1.0))
def test_partition_sums_to_one(r, frac):
    # a point and its shift by one cover the overlap of neighbouring windows
    x = 1 - 3 * r + frac * r
    phi = field.PartitionProfile(r)
    assert float(phi(x)) + float(phi(x - 1.0)) == 1.0


def test_partition_support_and_slope():
    phi = field.PartitionProfile(0.2)
    assert float(phi(-0.61)) == 0.0 and float(phi(0.61)) == 0.0
    assert float(phi(0.0)) == 1.0
    xs = np.linspace(-0.7, 0.7, 2001)
    assert np.abs(phi.derivative(xs)).max() <= phi.slope_bound + 1e-12


@pytest.mark.parametrize("prof", [field.BumpProfile(), field.BumpProfile(0.25, 0.5, 0.68),
                                  field.PartitionProfile(0.2)])
def test_profile_derivative_is_finite_difference(prof):
    xs = np.linspace(-0.55, 0.75, 301) + 1e-3
    h = 1e-6
    fd = (prof(xs + h) - prof(xs - h)) / (2 * h)
    assert np.allclose(prof.derivative(xs), fd, atol=1e-6)


def test_bump_shape():
    g = field.BumpProfile(0.25, 0.5, 0.68)
    assert float(g(0.5)) == 1.0
    assert float(g(0.25)) == float(g(0.68)) == 0.0
    with pytest.raises(ValueError):
        field.BumpProfile(0.2, 0.5, 0.7)


def test_bump_derivative_integrals():
    g = field.BumpProfile(0.25, 0.5, 0.68)
    # total variation of a unit bump
    assert g.derivative_power_integral(1.0) == pytest.approx(2.0, abs=1e-10)
    # int_0^1 rho'(t)^2 dt = 10/7
    expect = 10 / 7 * (1 / 0.25 + 1 / 0.18)
    assert g.derivative_power_integral(2.0) == pytest.approx(expect, rel=1e-9)


def test_bump_fitted_to_params(params):
    g = field.BumpProfile.for_params(params)
    assert g.hi == pytest.approx(0.68)


def test_root_scale_is_linear_in_x(field3, family3):
    x0, x1 = family3.x0[0][0], family3.x1[0][0]
    xs = np.linspace(x0 - 0.1, x1 + 0.1, 57)
    for y in (0.3, 0.5, 0.61):
        g = float(field3.bump(y))
        dg = float(field3.bump.derivative(y))
        frac = np.clip((xs - x0) / (x1 - x0), 0, 1)
        assert np.allclose(field3.u(0, xs, y), g * frac, atol=1e-15)
        assert np.allclose(field3.grad_y(0, xs, y), dg * frac, atol=1e-13)
        inside = (xs >= x0) & (xs < x1)
        assert np.allclose(field3.grad_x(0, xs, y), np.where(inside, g / (x1 - x0), 0.0))


def test_line_mass_is_bump_at_every_scale(field3):
    ys = np.linspace(0.2, 0.8, 241)
    g = field3.bump(ys)
    for n in range(4):
        assert np.allclose(field3.line_stats(ys, n)[:, 0], g, atol=1e-12)


def test_u_monotone_and_ends_at_bump(field3, family3):
    xs = np.linspace(family3.x0[0][0], family3.x1[0][0], 4001)
    for y in (0.33, 0.47, 0.6):
        for n in (1, 3):
            v = field3.u(n, xs, y)
            assert np.all(np.diff(v) >= -1e-15)
            assert v[-1] == pytest.approx(float(field3.bump(y)), abs=1e-12)


def test_u_constant_outside_gamma(field3, family3):
    xs = np.linspace(family3.x0[0][0], family3.x1[0][0], 3001)
    y = 0.45
    ys = np.full(len(xs), y)
    out = ~field3.in_gamma(3, xs, ys)
    assert out.any()
    assert np.all(field3.grad_x(3, xs[out], ys[out]) == 0.0)


def test_alpha_chain(field3, family3):
    x = 0.5 * (family3.x0[0][0] + family3.x1[0][0])
    for n in range(4):
        ev = field3.alpha_at(n, x, 0.5)
        if ev.chain:
            assert len(ev.chain) == n + 1 and ev.chain[0] == 0
            assert ev.density == pytest.approx(float(field3.grad_x(n, x, 0.5)[0]))
    assert field3.alpha_at(2, family3.x1[0][0] + 1, 0.5).chain == []


def test_u_limit(field3, family3):
    far = family3.x1[0][0] + 1
    val, n, exact = field3.u_limit(far, 0.5, 0.3)
    assert exact and n == 0 and val == 1.0
    with pytest.raises(ValueError):
        field3.u_limit(far, 0.5, 1e-9)


def test_scale_checks(field3):
    with pytest.raises(ValueError):
        field3.u(4, 0.0, 0.5)
    with pytest.raises(ValueError):
        field3.sobolev_layer(3)
    with pytest.raises(ValueError):
        field3.sobolev_layer(0, res=1)


def test_outside_term_closed_form(field3, family3):
    r = float(family3.params.r)
    w = field3.total_width
    side = max(w, 1 + 3 * r) + 1.0
    right_gap = (side - w) / 2
    assert field3.outside_term(1.0) == pytest.approx(2 * right_gap, rel=1e-9)


def test_sobolev_layers(field3):
    layers = [field3.sobolev_layer(n, 1.0, 8) for n in range(3)]
    for l in layers:
        # the half-resolution error estimate covers the gap to a much finer grid
        fine = field3.sobolev_layer(l.n, 1.0, 32)
        assert l.value > 0
        assert abs(fine.value - l.value) <= l.error
    rep = field.sobolev_report(field3, 1.0, 2)
    assert np.allclose(rep.values, [l.value for l in layers])
    assert rep.predicted == pytest.approx(math.log(field3.params.s ** -1 / 5))


def test_fit_log_slope():
    assert field.fit_log_slope([1.0, 0.5, 0.25]) == pytest.approx(math.log(0.5))
    assert math.isnan(field.fit_log_slope([1.0, 0.0]))


def test_growth_checks(field3):
    e = field.en_bound_check(field3, 3, np.linspace(0.26, 0.67, 401))
    s = field3.params.s
    assert np.all(e.values <= e.constant * s ** -np.arange(4) + 1e-9)
    v = field.vn_bound_check(field3, 3, np.linspace(0.26, 0.67, 401))
    assert len(v.residuals) == 3


def test_acl_witness_small(field3):
    w = field.acl_witness(field3, [0.3, 0.5], x_probes=501)
    assert np.allclose(w.jump, w.g)
    assert np.all(w.max_offfamily_dx == 0.0)
    assert np.all(np.diff(w.measure, axis=1) <= 1e-12)
