import json
import math

import numpy as np
import pytest

from wotbounds.dual_certificates import (
    SampledFunction,
    build_psi,
    build_s_map,
    caplet_certificate,
    caplet_triplets,
    caplet_value,
    find_threshold,
    general_dual,
    inf_convolution,
    snap_y0,
    upper_map,
    verify_hedge,
)
from wotbounds.measures import DiscreteMeasure, convex_envelope
from wotbounds.oracles import random_measure
from wotbounds.theta import PiecewiseLinear
from wotbounds.wot_solvers import barycentric_lp, candidate_grid, weak_monotone_rearrangement, wot_lower_barycentric, wot_upper_barycentric

PP = PiecewiseLinear.positive_part()
MU04 = DiscreteMeasure([0.0, 4.0], [0.5, 0.5])
NU13 = DiscreteMeasure([1.0, 3.0], [0.5, 0.5])


def caplet(x, y):
    return np.maximum(np.asarray(y) - np.asarray(x), 0.0)


# -- S-maps and thresholds ---------------------------------------------------------------


def test_s_map_identity():
    x = np.linspace(0, 1, 5)
    s = build_s_map(x, x)
    assert s(x).tolist() == x.tolist()
    assert s.difference_is_monotone()


def test_s_map_constant():
    x = np.array([0.0, 0.5, 1.0])
    s = build_s_map(x, np.full(3, 0.7))
    assert s(0.2) == 0.0 and s(0.7) == 0.0
    assert s(0.8) == math.inf
    assert s.domain == (0.7, 0.7)


def test_s_map_upper_two_state():
    T = upper_map(MU04, NU13)
    assert T.tolist() == [3.0, 1.0]
    s = build_s_map(MU04.support, T, "upper")
    assert s(0.5) == 4.0 and s(1.0) == 4.0
    assert s(2.0) == 0.0 and s(3.0) == 0.0
    assert s(3.5) == -math.inf
    assert s.difference_is_monotone()


def test_s_map_rejects_wrong_monotonicity():
    with pytest.raises(ValueError):
        build_s_map([0, 1], [1, 0], "lower")
    with pytest.raises(ValueError):
        build_s_map([0, 1], [0, 1], "upper")
    with pytest.raises(ValueError):
        build_s_map([0, 1], [0, 1], "sideways")


def test_threshold_examples():
    x = np.linspace(0, 1, 5)
    t = find_threshold(build_s_map(x, x))
    assert t.kind == "degenerate_zero" and t.value == 0.0
    t = find_threshold(build_s_map(MU04.support, upper_map(MU04, NU13), "upper"))
    assert (t.kind, t.value) == ("finite", 1.0)
    assert caplet_value(MU04, NU13, 1.0, "upper") == pytest.approx(1.5)
    t = find_threshold(build_s_map(x, x - 1.0))
    assert t.kind == "-inf" and t.value == -math.inf


# -- potentials --------------------------------------------------------------------------


def test_psi_identity_is_zero():
    x = np.linspace(0.5, 1.5, 6)
    psi = build_psi(PP, build_s_map(x, x), 1.0)
    assert np.all(psi.values == 0.0)


def test_psi_degenerate_domain():
    s = build_s_map([0.0, 1.0], [0.5, 0.5])
    psi = build_psi(PP, s, 0.5)
    assert psi.grid.tolist() == [0.5] and psi.values.tolist() == [0.0]
    with pytest.raises(ValueError):
        build_psi(PP, s, 0.7)


def _quad_psi(s, y0, ys, n=20001):
    # midpoint quadrature of z -> 1{z > S(z)} from y0
    out = []
    for y in ys:
        z = np.linspace(min(y0, y), max(y0, y), n)
        mid = 0.5 * (z[1:] + z[:-1])
        val = np.sum((mid > s(mid)) * np.diff(z))
        out.append(val if y >= y0 else -val)
    return np.array(out)


@pytest.mark.parametrize("seed", range(20))
def test_psi_integrates_the_s_map(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, int(rng.integers(2, 6))), random_measure(rng, int(rng.integers(2, 6)))
    w = weak_monotone_rearrangement(mu, nu)
    s = build_s_map(mu.support, w.T)
    a, b = s.domain
    y0 = snap_y0(nu, np.linspace(a, b, 11))
    psi = build_psi(PP, s, y0)
    assert psi(y0) == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(psi.values, _quad_psi(s, y0, psi.grid), atol=1e-3)


def _sign_constant_per_piece(s):
    e, v = s.edges, s.values
    return all((e[j - 1] - v[j] >= 0) or (e[j] - v[j] <= 0) for j in range(1, e.size))


def test_psi_matches_caplet_closed_form():
    # when y - S(y) keeps one sign on every piece the integral collapses to the caplet form
    checked = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        mu, nu = random_measure(rng, int(rng.integers(2, 6))), random_measure(rng, int(rng.integers(2, 6)))
        s = build_s_map(mu.support, weak_monotone_rearrangement(mu, nu).T)
        thr = find_threshold(s)
        if thr.kind != "finite" or not _sign_constant_per_piece(s):
            continue
        a, b = s.domain
        y0 = snap_y0(nu, np.linspace(a, b, 11))
        psi = build_psi(PP, s, y0)
        expected = np.maximum(thr.value - y0, 0) - np.maximum(thr.value - psi.grid, 0)
        assert np.allclose(psi.values, expected, atol=1e-12)
        checked += 1
    assert checked >= 10
    s = build_s_map(MU04.support, [1.0, 3.0])
    psi = build_psi(PP, s, 2.0)
    assert np.all(psi.values == 0.0)


def test_inf_convolution_examples():
    ys = np.linspace(-2, 2, 41)
    xs = np.linspace(-1, 1, 9)
    zero = SampledFunction(ys, np.zeros_like(ys))
    assert np.allclose(inf_convolution(zero, xs, theta=PP), 0.0)
    ident = SampledFunction(ys, ys.copy())
    assert np.allclose(inf_convolution(ident, xs, theta=PP), -xs, atol=1e-12)
    a, y0 = 0.3, 0.0
    psi = SampledFunction(ys, np.maximum(a - y0, 0) - np.maximum(a - ys, 0))
    want = np.maximum(a - xs, 0) - max(a - y0, 0)
    assert np.allclose(inf_convolution(psi, xs, theta=PP), want, atol=1e-12)
    with pytest.raises(ValueError):
        inf_convolution(zero, xs)


@pytest.mark.parametrize("seed", range(10))
def test_inf_convolution_envelope_and_lipschitz(seed):
    rng = np.random.default_rng(seed)
    ys = np.linspace(0, 2, 9)
    psi = SampledFunction(ys, rng.normal(size=ys.size))
    xs = np.linspace(0, 2, 13)
    hull = convex_envelope(ys, -psi.values).hull_values
    assert np.all(hull <= -psi.values + 1e-12)
    # direct: two-atom kernels on the grid with barycenter on the grid
    direct = np.full(xs.size, np.inf)
    for i in range(ys.size):
        for j in range(i, ys.size):
            for k in range(j - i + 1):
                lam = 1.0 if i == j else (j - i - k) / (j - i)
                b = ys[i + k]
                val = PP(b - xs) - lam * psi.values[i] - (1 - lam) * psi.values[j]
                direct = np.minimum(direct, val)
    R = inf_convolution(psi, xs, theta=PP, y_grid=ys)
    assert np.allclose(R, direct, atol=1e-9)
    # pointwise 1-Lipschitz cost transfers its constant
    Rp = inf_convolution(psi, xs, c_xy=lambda x, y: np.abs(y - x))
    assert np.all(np.abs(np.diff(Rp)) <= np.diff(xs) + 1e-9)


# -- triplets and verification ---------------------------------------------------------


def test_caplet_triplet_closed_forms():
    low = caplet_triplets(0.9, "lower")
    assert low.phi(0.8) == pytest.approx(0.1)
    assert low.psi(0.8) == pytest.approx(-0.1)
    assert low.delta(0.85) == -1.0
    assert low.delta(0.95) == 0.0
    up = caplet_triplets(1.1, "upper")
    assert up.phi(1.2) == 0.0
    assert up.phi(1.0) == pytest.approx(0.1)
    assert up.psi(1.2) == pytest.approx(0.1)
    assert up.delta(1.2) == -1.0
    assert up.delta(1.0) == 0.0
    z = caplet_triplets(-math.inf, "lower")
    assert z.phi(3.0) == 0.0 and z.psi(3.0) == 0.0 and z.delta(3.0) == 0.0


def test_upper_triplet_superhedges_everywhere():
    # (y1 - x)^+ <= (a - x)^+ + (y2 - a)^+ - 1{y1 > a}(y2 - y1) for all x, y1, y2
    g = np.linspace(-2, 2, 41)
    rep = verify_hedge(caplet_triplets(0.3, "upper"), caplet, g, g, g)
    assert rep.ok and rep.worst >= -1e-12


def test_verify_hedge_zero():
    rep = verify_hedge(caplet_triplets(-math.inf, "lower"), lambda x, y: np.zeros(np.broadcast(x, y).shape),
                       [0.0, 1.0], [0.0, 1.0], [0.0, 1.0], MU04, NU13)
    assert rep.worst == 0.0 and rep.value == 0.0 and rep.ok


def test_verify_hedge_reports_violation():
    rep = verify_hedge(caplet_triplets(1.0, "upper"), lambda x, y: np.full(np.broadcast(x, y).shape, 10.0),
                       [0.0, 1.0], [0.0, 1.0], [0.0, 1.0])
    assert not rep.ok and rep.worst < 0
    with pytest.raises(ValueError):
        verify_hedge(caplet_triplets(1.0, "upper"), caplet, [], [0.0], [0.0])


def test_two_state_certificates():
    up = caplet_certificate(MU04, NU13, "upper")
    lo = caplet_certificate(MU04, NU13, "lower")
    assert up.value == pytest.approx(1.5, abs=1e-12) and up.report.ok
    assert lo.value == pytest.approx(0.5, abs=1e-12) and lo.report.ok
    assert wot_upper_barycentric(MU04, NU13, PP).value == pytest.approx(up.value, abs=1e-9)
    assert wot_lower_barycentric(MU04, NU13, PP).value == pytest.approx(lo.value, abs=1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_duality_sandwich(seed):
    rng = np.random.default_rng(1000 + seed)
    mu, nu = random_measure(rng, int(rng.integers(1, 6))), random_measure(rng, int(rng.integers(1, 6)))
    lo, up = wot_lower_barycentric(mu, nu, PP).value, wot_upper_barycentric(mu, nu, PP).value
    cl, cu = caplet_certificate(mu, nu, "lower"), caplet_certificate(mu, nu, "upper")
    assert cl.value <= lo + 1e-8
    assert cu.value >= up - 1e-8
    assert abs(cl.value - lo) <= 1e-6 and abs(cu.value - up) <= 1e-6
    assert cl.triplet.sense == "sub" and cu.triplet.sense == "super"
    assert cl.report.worst <= 1e-9 and cu.report.worst >= -1e-9
    g = np.linspace(nu.support[0] - 1, nu.support[-1] + 1, 41)
    assert np.all(np.diff(cl.triplet.psi(g), 2) <= 1e-12)
    assert np.all(np.diff(cu.triplet.psi(g), 2) >= -1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_derivative_sign_structure(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, 4), random_measure(rng, 4)
    w = weak_monotone_rearrangement(mu, nu)
    s = build_s_map(mu.support, w.T)
    a, b = s.domain
    grid = np.unique(np.concatenate([np.linspace(a, b, 201), w.T]))
    psi = build_psi(PP, s, snap_y0(nu, grid), grid)
    for x, t in zip(mu.support, w.T):
        f = -psi(grid) + PP(grid - x)
        left, right = f[grid <= t], f[grid >= t]
        assert np.all(np.diff(left) <= 1e-12)
        assert np.all(np.diff(right) >= -1e-12)


def test_triplet_serializes():
    cert = caplet_certificate(MU04, NU13, "upper")
    json.dumps(cert.triplet.to_dict(MU04.support, NU13.support))


# -- general payoffs -------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(8))
def test_general_dual_closes_gap(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, 3), random_measure(rng, 3)

    def payoff(x, y):
        return np.maximum(y - x, 0.0) ** 2 - 0.3 * np.abs(y - 1.0)

    w = weak_monotone_rearrangement(mu, nu)
    H = candidate_grid(nu, w.nu_star, np.linspace(nu.support[0], nu.support[-1], 25))
    C = payoff(mu.support[:, None], H[None, :])
    for lp_sense, sense in (("minimize", "sub"), ("maximize", "super")):
        primal = barycentric_lp(mu, nu, C, H, lp_sense).value
        dual = general_dual(mu, nu, payoff, H, sense)
        assert dual.value == pytest.approx(primal, abs=1e-7)
        if sense == "sub":
            assert dual.psi.is_concave()
        else:
            assert dual.psi.is_convex()
        rep = verify_hedge(dual.triplet, payoff, mu.support, H, nu.support, mu, nu)
        assert rep.ok
