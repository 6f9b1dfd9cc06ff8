import math

import numpy as np
import pytest
from scipy import special

from eoslab import datagen, sphere
from eoslab.rng import RngStream


def tail_oracle(d, t):
    # P(Z > t) = P(Z^2 > t^2) / 2 with Z^2 ~ Beta(1/2, (d-1)/2)
    return 0.5 * special.betaincc(0.5, (d - 1) / 2, t * t)


def relu_oracle(d, t):
    # E[(Z - t)+] = E[Z 1{Z>t}] - t P(Z>t), E[Z 1{Z>t}] = c_d (1-t^2)^(a+1) / (2(a+1))
    a = (d - 3) / 2
    return sphere.c_d(d) * (1 - t * t) ** (a + 1) / (2 * (a + 1)) - t * tail_oracle(d, t)


def test_c_d_values():
    assert sphere.c_d(3) == pytest.approx(0.5, rel=1e-14)
    assert sphere.c_d(2) == pytest.approx(1 / math.pi, rel=1e-14)
    # large d stays finite through log-gamma
    assert math.isfinite(sphere.c_d(10_000)) and sphere.c_d(10_000) > 0
    with pytest.raises(ValueError):
        sphere.c_d(1)


@pytest.mark.parametrize("d", [2, 3, 4, 5, 8, 16, 32, 64])
def test_density_mass_one(d):
    assert abs(sphere.SphereMarginals(d).density_mass() - 1.0) < 1e-8


@pytest.mark.parametrize("d", [2, 3, 4, 7, 10, 25, 60])
@pytest.mark.parametrize("t", [0.0, 0.1, 0.5, 0.9])
def test_brackets_contain_exact_values(d, t):
    tail, relu = tail_oracle(d, t), relu_oracle(d, t)
    assert sphere.sphere_tail_exact(d, t) == pytest.approx(tail, rel=1e-9, abs=1e-15)
    assert sphere.sphere_relu_margin_exact(d, t) == pytest.approx(relu, rel=1e-8, abs=1e-15)
    tol = 1e-12 * max(tail, 1e-300)
    assert sphere.sphere_tail(d, t).contains(tail, tol)
    assert sphere.sphere_relu_margin(d, t).contains(relu, 1e-12 * max(relu, 1e-300))
    assert sphere.sphere_tail_margin_product(d, t).contains(tail * relu, 1e-12 * tail * relu)


@pytest.mark.parametrize("t", [0.0, 0.2, 0.75])
def test_d3_exact(t):
    br = sphere.sphere_tail(3, t)
    assert br.lower == pytest.approx((1 - t) / 2, rel=1e-14) and br.upper == pytest.approx((1 - t) / 2, rel=1e-14)
    assert tail_oracle(3, t) == pytest.approx((1 - t) / 2, rel=1e-12)
    rm = sphere.sphere_relu_margin(3, t)
    assert rm.lower == pytest.approx((1 - t) ** 2 / 4, rel=1e-14)
    assert rm.upper == pytest.approx((1 - t) ** 2 / 4, rel=1e-14)


def test_tail_at_zero_contains_half():
    for d in range(2, 40):
        assert sphere.sphere_tail(d, 0.0).contains(0.5, 1e-15)


def test_relu_bracket_vanishes_near_one():
    br = sphere.sphere_relu_margin(10, 1 - 1e-6)
    assert br.upper < 1e-20


@pytest.mark.parametrize("t", [-0.1, 1.0, 1.5])
def test_invalid_t(t):
    with pytest.raises(ValueError):
        sphere.sphere_tail(5, t)
    with pytest.raises(ValueError):
        sphere.sphere_relu_margin(5, t)


@pytest.mark.parametrize("t", [0.01, 0.1, 0.25])
def test_boundary_tail_uniform_beta(t):
    bt = sphere.boundary_tail(4, 2, t)
    assert bt.beta_params == (1.0, 1.0)
    assert bt.exact == pytest.approx(2 * t - t * t, rel=1e-13)
    assert bt.lower <= bt.exact <= bt.upper


@pytest.mark.parametrize("d,m", [(4, 1), (10, 3), (50, 10), (20, 19), (7, 2)])
def test_boundary_tail_ratio_and_containment(d, m):
    for t in (0.02, 0.1, 0.25):
        bt = sphere.boundary_tail(d, m, t)
        ratio = 2 ** (2 * abs(m / 2 - 1) + (d - m) / 2)
        assert bt.upper / bt.lower == pytest.approx(ratio, rel=1e-12)
        assert bt.lower <= bt.exact <= bt.upper


def test_boundary_tail_invalid():
    for args in [(4, 2, 0.0), (4, 2, 0.3), (4, 4, 0.1), (4, 0, 0.1)]:
        with pytest.raises(ValueError):
            sphere.boundary_tail(*args)


def test_boundary_tail_monte_carlo():
    N = 200_000
    for d, m in [(10, 3), (50, 10)]:
        Z = datagen.sample_sphere(N, d, RngStream(d))[:, :m]
        r = np.linalg.norm(Z, axis=1)
        for t in (0.1, 0.25):
            bt = sphere.boundary_tail(d, m, t)
            est = float(np.mean(r > 1 - t))
            se = math.sqrt(max(est * (1 - est), 1e-12) / N)
            assert bt.lower - 3 * se <= est <= bt.upper + 3 * se
            assert abs(est - bt.exact) <= 4 * se + 1e-12


def test_constants_ordered():
    for d in range(2, 30):
        sm = sphere.SphereMarginals(d)
        assert 0 < sm.c_L <= sm.c_U
        for m in range(1, d):
            smm = sphere.SphereMarginals(d, m)
            assert 0 < smm.c_L_dm <= smm.c_U_dm
