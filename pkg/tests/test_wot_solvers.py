import numpy as np
import pytest

from wotbounds.couplings import Coupling, disintegrate, lambda_member
from wotbounds.measures import DiscreteMeasure, convex_order_check, wasserstein
from wotbounds.oracles import pi_sup_bruteforce, random_measure, wmr_bruteforce
from wotbounds.theta import PiecewiseLinear
from wotbounds.wot_solvers import (
    CostSpec,
    candidate_grid,
    classical_ot,
    convexified_wot,
    default_resolution,
    quantile_upper_value,
    relaxed_wot,
    simplex_grid,
    weak_monotone_rearrangement,
    wot_lower_barycentric,
    wot_upper_barycentric,
)

PP = PiecewiseLinear.positive_part()
ABS = PiecewiseLinear.absolute_value()
W = PiecewiseLinear.w_shape()
U01 = DiscreteMeasure.uniform([0.0, 1.0])
PM1 = DiscreteMeasure([-1.0, 1.0], [0.5, 0.5])
MU04 = DiscreteMeasure([0.0, 4.0], [0.5, 0.5])
NU13 = DiscreteMeasure([1.0, 3.0], [0.5, 0.5])


def _cost(theta, mu, nu):
    return theta(nu.support[None, :] - mu.support[:, None])


def test_costspec_declaration_must_match():
    assert CostSpec.barycentric(PP).convexity == "convex"
    assert CostSpec.barycentric(W).convexity == "general"
    with pytest.raises(ValueError):
        CostSpec.barycentric(W, "convex")
    with pytest.raises(ValueError):
        CostSpec("nonsense")
    spec = CostSpec.from_dict({"kind": "barycentric_theta", "theta_grid": [-1, 0, 1], "theta_values": [0, 0, 1]})
    assert spec.theta(2.0) == pytest.approx(2.0)


def test_classical_ot_examples():
    m = DiscreteMeasure([0.2, 0.9, 1.4], [0.3, 0.3, 0.4])
    assert classical_ot(m, m, ABS(np.subtract.outer(m.support, m.support).T)).value == pytest.approx(0.0, abs=1e-12)
    sol = classical_ot(U01, U01, _cost(PP, U01, U01), "max")
    assert sol.value == pytest.approx(0.5)
    assert np.allclose(sol.coupling.matrix, [[0, 0.5], [0.5, 0]])
    sol = classical_ot(MU04, NU13, _cost(PP, MU04, NU13), "max")
    assert sol.value == pytest.approx(1.5)
    assert np.allclose(sol.coupling.matrix, [[0, 0.5], [0.5, 0]])
    with pytest.raises(ValueError):
        classical_ot(MU04, NU13, np.zeros((3, 2)))


def test_lower_examples():
    u = DiscreteMeasure.uniform([0.8, 1.2])
    assert wot_lower_barycentric(u, u, PP).value == pytest.approx(0.0, abs=1e-12)
    assert wot_lower_barycentric(DiscreteMeasure.dirac(0.0), PM1, PP).value == pytest.approx(0.0, abs=1e-12)
    sol = wot_lower_barycentric(MU04, NU13, PP)
    assert sol.value == pytest.approx(0.5, abs=1e-12)
    assert sol.eta.allclose(NU13, 1e-9)
    assert sol.diagnostics["T"] == pytest.approx([1.0, 3.0])


def test_lower_rejects_nonconvex():
    with pytest.raises(ValueError):
        wot_lower_barycentric(MU04, NU13, W)


def test_lower_solution_is_consistent():
    rng = np.random.default_rng(8)
    mu, nu = random_measure(rng, 4), random_measure(rng, 5)
    sol = wot_lower_barycentric(mu, nu, PP)
    assert sol.coupling.check_marginals(mu, sol.eta, 1e-9)
    assert sol.mart.martingale_residual() <= 1e-9
    assert sol.mart.second_marginal().allclose(nu, 1e-9)
    assert lambda_member(sol.kernel_dist, mu, nu)
    recomputed = sol.kernel_dist.expect(lambda x, p: float(PP(p.mean - x)))
    assert recomputed == pytest.approx(sol.value, abs=1e-8)


def test_upper_examples():
    assert wot_upper_barycentric(MU04, NU13, PP).value == pytest.approx(1.5)
    assert wot_upper_barycentric(DiscreteMeasure.dirac(0.0), PM1, PP).value == pytest.approx(0.5)
    mu = DiscreteMeasure([0.5, 1.0, 1.7], [0.2, 0.5, 0.3])
    c = 1.1
    expected = float(np.dot(mu.weights, PP(c - mu.support)))
    assert wot_upper_barycentric(mu, DiscreteMeasure.dirac(c), PP).value == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_upper_jensen_gap(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, 3), random_measure(rng, 4)
    C = _cost(PP, mu, nu)
    top = wot_upper_barycentric(mu, nu, PP).value
    # random couplings: barycentric cost <= pointwise cost <= relaxed sup
    for _ in range(5):
        M = rng.dirichlet(np.ones(mu.weights.size * nu.weights.size)).reshape(len(mu), len(nu))
        # Sinkhorn-scale onto the right marginals
        for _ in range(200):
            M *= (mu.weights / M.sum(1))[:, None]
            M *= (nu.weights / M.sum(0))[None, :]
        c = Coupling(mu.support, nu.support, M / M.sum())
        bary = sum(w * PP(p.mean - x) for x, p, w in disintegrate(c))
        assert bary <= c.expect(C) + 1e-12
        assert c.expect(C) <= top + 1e-8


def test_relaxed_examples():
    rel = relaxed_wot(MU04, NU13, CostSpec.barycentric(PP), 2)
    assert rel.value == pytest.approx(0.5, abs=1e-12)
    neg = CostSpec.kernel_direct(lambda xs, Wt, ys: -np.maximum(Wt @ ys, 0.0)[None, :].repeat(len(xs), 0))
    rel = relaxed_wot(DiscreteMeasure.dirac(0.0), PM1, neg, 2)
    assert rel.value == pytest.approx(-0.5)
    assert sorted(a.kernel.support.tolist() for a in rel.kernel_dist) == [[-1.0], [1.0]]
    assert pi_sup_bruteforce(DiscreteMeasure.dirac(0.0), PM1, lambda z: np.maximum(z, 0.0)) == 0.0
    zero = CostSpec.kernel_direct(lambda xs, Wt, ys: np.zeros((len(xs), len(Wt))))
    assert relaxed_wot(MU04, NU13, zero, 2).value == 0.0


def test_relaxed_refinement_is_monotone():
    rng = np.random.default_rng(21)
    spec = CostSpec.barycentric(PiecewiseLinear.sampled(lambda z: z * z, np.linspace(-3, 3, 61)))
    for _ in range(5):
        mu = random_measure(rng, 2)
        nu = DiscreteMeasure([0.5, 1.0, 2.0], [0.25, 0.25, 0.5])
        vals = [relaxed_wot(mu, nu, spec, m).value for m in (4, 8, 16)]
        assert vals[0] >= vals[1] - 1e-12 >= vals[2] - 2e-12


def test_relaxed_at_unit_resolution_is_classical_ot():
    # m = 1 leaves only Dirac kernels, so the relaxed problem is a transport problem
    nu = DiscreteMeasure([1.0, 3.0], [1 / 3, 2 / 3])
    rel = relaxed_wot(MU04, nu, CostSpec.barycentric(PP), 1)
    assert rel.value == pytest.approx(classical_ot(MU04, nu, _cost(PP, MU04, nu)).value, abs=1e-12)


def test_simplex_grid_and_resolution():
    G = simplex_grid(3, 2)
    assert G.shape == (6, 3)
    assert np.allclose(G.sum(1), 1.0)
    assert default_resolution(DiscreteMeasure([0, 1, 2], [0.25, 0.25, 0.5])) == (4, True)
    assert default_resolution(DiscreteMeasure([0, 1], [1 / 3, 2 / 3])) == (3, True)
    m, exact = default_resolution(DiscreteMeasure([0, 1], [0.123456, 0.876544]))
    assert (m, exact) == (24, False)


def test_convexified_examples():
    mu, nu = random_measure(np.random.default_rng(0), 3), random_measure(np.random.default_rng(1), 3)
    a = convexified_wot(mu, nu, ABS)
    b = wot_lower_barycentric(mu, nu, ABS)
    assert a.value == b.value
    conv = convexified_wot(DiscreteMeasure.dirac(0.0), PM1, W)
    assert conv.value == pytest.approx(0.0, abs=1e-12)
    rel = relaxed_wot(DiscreteMeasure.dirac(0.0), PM1, CostSpec.barycentric(W), 2)
    assert rel.value == pytest.approx(conv.value, abs=1e-12)
    assert conv.diagnostics["theta_envelope_value"] == pytest.approx(0.0, abs=1e-12)


def test_convexified_concave_theta_is_classical():
    concave = PiecewiseLinear.sampled(lambda z: -(z**2), np.linspace(-4, 4, 81))
    rng = np.random.default_rng(3)
    for _ in range(5):
        mu, nu = random_measure(rng, 3), random_measure(rng, 3)
        conv = convexified_wot(mu, nu, concave).value
        ot = classical_ot(mu, nu, _cost(concave, mu, nu), "min").value
        assert conv == pytest.approx(ot, abs=1e-9)


def test_wmr_examples():
    m = DiscreteMeasure([0.3, 0.9, 1.4], [0.2, 0.5, 0.3])
    w = weak_monotone_rearrangement(m, m)
    assert w.T == pytest.approx(m.support, abs=1e-12)
    assert w.nu_star.allclose(m, 1e-12)
    w = weak_monotone_rearrangement(m, DiscreteMeasure.dirac(1.0))
    assert w.T == pytest.approx([1.0, 1.0, 1.0], abs=1e-12)
    mu, nu = DiscreteMeasure.uniform([0, 1, 2]), DiscreteMeasure.uniform([0.5, 1, 1.5])
    w = weak_monotone_rearrangement(mu, nu)
    assert w.T == pytest.approx([0.5, 1.0, 1.5], abs=1e-12)
    T_bf, w1_bf = wmr_bruteforce(mu, nu, np.linspace(0, 2, 9))
    assert w.T == pytest.approx(T_bf, abs=1e-12)
    assert w.w1(mu) == pytest.approx(w1_bf, abs=1e-12)
    lp = wot_lower_barycentric(mu, nu, ABS)
    assert lp.value == pytest.approx(w1_bf, abs=1e-9)
    assert lp.eta.allclose(w.nu_star, 1e-9)


@pytest.mark.parametrize("seed", range(15))
def test_wmr_is_w1_projection(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, int(rng.integers(1, 5))), random_measure(rng, int(rng.integers(1, 5)))
    w = weak_monotone_rearrangement(mu, nu)
    assert convex_order_check(w.nu_star, nu).holds
    assert np.all(np.diff(w.T) >= -1e-12)
    assert np.all(np.diff(w.T) <= np.diff(mu.support) + 1e-12)
    # W1 projection: the |.| lower value is the W1 distance to nu*
    assert wot_lower_barycentric(mu, nu, ABS).value == pytest.approx(wasserstein(mu, w.nu_star), abs=1e-9)


def test_wmr_near_duplicate_levels():
    # cumulative levels differing by one ulp used to produce a sliver piece
    mu = DiscreteMeasure([0.95, 1.045], [0.49999999999999944, 0.5000000000000006])
    nu = DiscreteMeasure([0.9, 1.0], [0.5, 0.5])
    w = weak_monotone_rearrangement(mu, nu)
    assert w.shift == pytest.approx([-0.0475, -0.0475], abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_upper_matches_quantile_formula(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, 4), random_measure(rng, 3)
    theta = PiecewiseLinear.sampled(lambda z: np.exp(z), np.linspace(-3, 3, 25))
    assert wot_upper_barycentric(mu, nu, theta).value == pytest.approx(quantile_upper_value(mu, nu, theta), abs=1e-9)


def _midpoints(n, eps):
    edges = np.linspace(-eps, eps, n + 1)
    return DiscreteMeasure.uniform(0.5 * (edges[:-1] + edges[1:]))


def test_atomic_gap_monotone_in_refinement():
    # Pi-sup rises with dyadic refinement and closes the gap to each mu_n's relaxed value
    pi_vals, gaps = [], []
    for n in (1, 2, 4, 8):
        mu = _midpoints(n, 0.01)
        pi_vals.append(pi_sup_bruteforce(mu, PM1, lambda z: np.maximum(z, 0.0)))
        gaps.append(wot_upper_barycentric(mu, PM1, PP).value - pi_vals[-1])
    assert pi_vals[0] == 0.0
    assert all(a <= b + 1e-12 for a, b in zip(pi_vals, pi_vals[1:]))
    assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert min(gaps) >= -1e-12
    assert gaps == pytest.approx([0.5, 0.0, 0.0, 0.0], abs=1e-12)


def test_candidate_grid_contains_supports():
    nu = DiscreteMeasure([1.0, 2.0], [0.5, 0.5])
    H = candidate_grid(nu, DiscreteMeasure.dirac(1.5), extra=[5.0, 0.0], m=2)
    assert {1.0, 1.5, 2.0} <= set(H.tolist())
    assert H.min() >= 1.0 and H.max() <= 2.0


def test_solution_serializes():
    import json

    sol = wot_lower_barycentric(MU04, NU13, PP)
    json.dumps(sol.to_dict())
