import numpy as np
import pytest

from prox_evi.autodiff import Jet2
from prox_evi.benchmarks import away_from_seams, get_benchmark
from prox_evi.domains import BoundarySample
from prox_evi.errors import StateError
from prox_evi.network import init_net
from prox_evi.problems import (
    EviProblem,
    OperatorSpec,
    apply_A,
    loss_total,
    prox_argument,
    residual_case1,
    residual_case2,
    residual_case3,
    residual_case4_primal,
    residual_case4_shrink,
    residual_friction,
    residual_report,
)
from prox_evi.prox import soft_threshold, unit_ball_project


def jet(value, grad, hess):
    """Batch jet from per-point lists; grad and hess are (d, n)."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    grad = np.asarray(grad, dtype=float).reshape(-1, len(value))
    hess = np.asarray(hess, dtype=float).reshape(-1, len(value))
    return Jet2(value, grad, hess)


def zeros(n=1, d=2):
    return jet(np.zeros(n), np.zeros((d, n)), np.zeros((d, n)))


def problem(case, **kw):
    kw.setdefault("operator", OperatorSpec())
    kw.setdefault("source", lambda x: np.zeros(len(x)))
    return EviProblem(case=case, **kw)


# operator -----------------------------------------------------------------


def test_apply_A_on_a_parabola():
    x = np.linspace(0.05, 0.95, 7)[:, None]
    t = x[:, 0]
    u = jet(t * (1 - t), [1 - 2 * t], [np.full_like(t, -2.0)])
    np.testing.assert_allclose(apply_A(OperatorSpec(), u, x), 2.0, rtol=0, atol=1e-15)


def test_apply_A_with_drift():
    # -u'' + u' for u = 1 - x^2 is 2 - 2x
    x = np.array([[0.0], [0.5]])
    t = x[:, 0]
    u = jet(1 - t**2, [-2 * t], [np.full(2, -2.0)])
    np.testing.assert_allclose(apply_A(OperatorSpec(beta=np.array([1.0])), u, x), [2.0, 1.0])


def test_apply_A_reaction_on_a_constant():
    u = jet([5.0], [[0.0], [0.0]], [[0.0], [0.0]])
    assert apply_A(OperatorSpec(alpha=3.7, gamma=1.0), u, np.zeros((1, 2)))[0] == 5.0


def test_apply_A_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_A(OperatorSpec(beta=np.array([1.0, 0.0])), zeros(1, 1), np.zeros((1, 1)))


# residuals ----------------------------------------------------------------


def test_case1_at_the_exact_solution():
    b = get_benchmark("obstacle1d_sym")
    x = np.array([[0.4]])
    r = residual_case1(b.make_problem(), b.exact_jet(x), x)
    assert abs(r[0]) < 1e-12


def test_case1_hand_values():
    x = np.zeros((1, 1))
    p0 = problem("case1", obstacle=lambda x: np.zeros(len(x)))
    assert residual_case1(p0, zeros(1, 1), x)[0] == 0.0
    p1 = problem("case1", obstacle=lambda x: -np.ones(len(x)), eta=0.37)
    assert residual_case1(p1, zeros(1, 1), x)[0] == 0.0


def test_case1_needs_an_obstacle():
    with pytest.raises(StateError):
        residual_case1(problem("case1"), zeros(1, 1), np.zeros((1, 1)))


def test_case2_examples():
    x = np.zeros((1, 1))
    p = problem("case2", tau=500.0, eta=1e-3)
    assert residual_case2(p, zeros(1, 1), x)[0] == 0.0
    # with A = 0 the prox argument is the value itself: w = 1.2, tau * eta = 0.5
    p = problem("case2", tau=500.0, eta=1e-3, operator=OperatorSpec(alpha=0.0))
    assert residual_case2(p, jet([1.2], [[0.0]], [[0.0]]), x)[0] == pytest.approx(-0.5, abs=1e-15)
    # u = 0.7 with eta * f = 0.5 gives w = 1.2, whose shrink is u itself
    p = problem("case2", tau=500.0, eta=1e-3, operator=OperatorSpec(alpha=0.0),
                source=lambda x: np.full(len(x), 500.0))
    assert residual_case2(p, jet([0.7], [[0.0]], [[0.0]]), x)[0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(StateError):
        residual_case2(problem("case2"), zeros(1, 1), x)


def test_case2_composes_the_soft_threshold():
    rng = np.random.default_rng(0)
    n = 50
    x = rng.uniform(0, 1, size=(n, 1))
    u = jet(rng.normal(size=n), rng.normal(size=(1, n)), rng.normal(scale=300, size=(1, n)))
    p = problem("case2", tau=2.0, eta=1e-2, operator=OperatorSpec(beta=np.array([1.0]), gamma=0.5),
                source=lambda x: np.sin(3 * x[:, 0]))
    w = prox_argument(p, u, x)
    np.testing.assert_array_equal(residual_case2(p, u, x), soft_threshold(w, 2e-2) - u.value)


def test_case3_examples():
    x = np.zeros((1, 2))
    p = problem("case3", source=lambda x: np.zeros(len(x)))
    r1, r2 = residual_case3(p, zeros(), [zeros(), zeros()], x)
    assert np.all(r1 == 0) and r2[0] == 0
    u = jet([0.0], [[0.3], [-0.4]], [[0.0], [0.0]])
    r1, _ = residual_case3(p, u, [zeros(), zeros()], x)
    np.testing.assert_array_equal(r1, 0.0)
    with pytest.raises(ValueError):
        residual_case3(p, u, [zeros()], x)


def test_case3_denominator_is_max_one_norm():
    rng = np.random.default_rng(1)
    n = 200
    x = rng.normal(size=(n, 2))
    g = rng.normal(scale=2, size=(2, n))
    lam = [jet(rng.normal(scale=300, size=n), np.zeros((2, n)), np.zeros((2, n))) for _ in range(2)]
    u = jet(np.zeros(n), g, np.zeros((2, n)))
    p = problem("case3")
    r1, _ = residual_case3(p, u, lam, x)
    q = g - 1e-3 * np.stack([l.value for l in lam])
    np.testing.assert_allclose(r1, unit_ball_project(q) - g, rtol=1e-14, atol=1e-15)


def test_torsion_elastic_region_balance():
    b = get_benchmark("torsion2d", c=4.0)
    rng = np.random.default_rng(2)
    r = 0.49 * np.sqrt(rng.random(100))
    th = 2 * np.pi * rng.random(100)
    x = np.column_stack([r * np.cos(th), r * np.sin(th)])
    lam = b.multiplier_jets(x)
    for l in lam:
        np.testing.assert_array_equal(l.value, 0.0)
    _, r2 = residual_case3(b.make_problem(), b.exact_jet(x), lam, x)
    assert np.max(np.abs(r2)) < 1e-12


def test_case4_shrink_examples():
    tau, eta = 2.0, 1e-3
    p = problem("case4_shrink", tau=tau, eta=eta)
    x = np.zeros((1, 2))
    lam = [jet([1.2], [[0.0], [0.0]], [[0.0], [0.0]]), jet([-1.5], [[0.0], [0.0]], [[0.0], [0.0]])]
    r1, _ = residual_case4_shrink(p, zeros(), lam, x)
    np.testing.assert_array_equal(r1, 0.0)
    g = np.array([0.6, -0.8])
    u = jet([0.0], g[:, None], [[0.0], [0.0]])
    lam = [jet([-tau * gi], [[0.0], [0.0]], [[0.0], [0.0]]) for gi in g]
    r1, _ = residual_case4_shrink(p, u, lam, x)
    assert np.max(np.abs(r1)) < 1e-15
    p = problem("case4_shrink", tau=tau, source=lambda x: np.full(len(x), 3.0))
    r1, r2 = residual_case4_shrink(p, zeros(), [zeros(), zeros()], x)
    assert np.all(r1 == 0) and r2[0] == -3.0


def test_case4_primal_examples():
    tau = 1.5
    p = problem("case4_primal", tau=tau)
    x = np.zeros((1, 2))

    def lam(v1, v2):
        return [jet([v1], [[0.0], [0.0]], [[0.0], [0.0]]), jet([v2], [[0.0], [0.0]], [[0.0], [0.0]])]

    assert residual_case4_primal(p, zeros(), lam(0.3, -1.0), x)[0][0] == 0.0
    u = jet([0.0], [[1.0], [0.0]], [[0.0], [0.0]])
    assert residual_case4_primal(p, u, lam(-tau, 0.0), x)[0][0] == 0.0
    assert residual_case4_primal(p, u, lam(tau, 0.0), x)[0][0] == 2 * tau
    with pytest.raises(StateError):
        residual_case4_primal(p, u, lam(2 * tau, 0.0), x)


def test_case4_variants_vanish_together():
    """Aligned multipliers zero both forms; perturbed ones zero neither."""
    rng = np.random.default_rng(3)
    tau, eta, n = 1.0, 1e-3, 1000
    x = np.zeros((n, 2))
    g = rng.normal(size=(2, n))
    u = jet(np.zeros(n), g, np.zeros((2, n)))
    unit = g / np.linalg.norm(g, axis=0)
    ps, pp = problem("case4_shrink", tau=tau, eta=eta), problem("case4_primal", tau=tau, eta=eta)

    def both(lam_values):
        lam = [jet(v, np.zeros((2, n)), np.zeros((2, n))) for v in lam_values]
        r_shrink = np.linalg.norm(residual_case4_shrink(ps, u, lam, x)[0], axis=0)
        r_primal = np.abs(residual_case4_primal(pp, u, lam, x)[0])
        return r_shrink, r_primal

    r_shrink, r_primal = both(-tau * unit)
    assert np.max(r_shrink) < 1e-12 and np.max(r_primal) < 1e-12

    # rotate the aligned multiplier and shorten it so it stays feasible for the primal form
    angle = rng.uniform(0.1, np.pi, n) * rng.choice([-1, 1], n)
    c, s = np.cos(angle), np.sin(angle)
    rotated = -tau * 0.9 * np.stack([c * unit[0] - s * unit[1], s * unit[0] + c * unit[1]])
    r_shrink, r_primal = both(rotated)
    assert np.min(r_shrink) > 1e-8 and np.min(r_primal) > 1e-8


def test_friction_examples():
    b = get_benchmark("friction2d")
    p = b.make_problem()
    pts = np.array([[1.0, 0.25]])
    normals = np.array([[1.0, 0.0]])
    parts = residual_friction(p, b.exact_jet(pts), pts, False, b.multiplier_jets(pts), normals)
    assert abs(parts["complementarity"][0]) < 1e-12
    assert abs(parts["neumann"][0]) < 1e-12

    lam = [jet([0.77], [[0.0], [0.0]], [[0.0], [0.0]])]
    u0 = jet([0.0], [[0.4], [0.1]], [[0.0], [0.0]])
    assert residual_friction(p, u0, pts, False, lam, normals)["complementarity"][0] == 0.0

    x = b.domain.sample_interior(100, 4)
    eq = residual_friction(p, b.exact_jet(x), x, True)["equation"]
    assert np.max(np.abs(eq)) < 1e-10

    with pytest.raises(ValueError):
        residual_friction(p, b.exact_jet(x[:1]), x[:1], False, lam, normals)


# loss ---------------------------------------------------------------------


def _boundary_for(b, variant):
    return b.training_boundary(variant, count=7, seed=1)


VARIANTS = [
    ("obstacle1d_sym", "hard"),
    ("obstacle1d_nonsym", "hard"),
    ("obstacle1d_piecewise", "soft"),
    ("obstacle2d", "hard"),
    ("obstacle2d", "soft"),
    ("torsion2d", "hard"),
    ("bingham2d", "shrink"),
    ("bingham2d", "primal"),
    ("friction2d", "hard"),
]


@pytest.mark.parametrize("name, variant", VARIANTS)
def test_loss_gradient_matches_finite_differences(name, variant):
    b = get_benchmark(name)
    net = init_net(b.layer_sizes(2, 6), 3)
    s = b.make_surrogate(net, variant)
    p = b.make_problem(variant=variant, eta=0.1)
    x = b.domain.sample_interior(5, 2)
    bnd = _boundary_for(b, variant)
    _, grad = loss_total(p, s, x, bnd)
    theta = net.flat()
    idx = np.random.default_rng(0).choice(len(theta), 25, replace=False)
    h = 1e-6
    for i in idx:
        e = np.zeros_like(theta)
        e[i] = h
        up = loss_total(p, b.make_surrogate(net.with_flat(theta + e), variant), x, bnd)[0]
        dn = loss_total(p, b.make_surrogate(net.with_flat(theta - e), variant), x, bnd)[0]
        fd = (up - dn) / (2 * h)
        assert abs(grad[i] - fd) <= 1e-5 * max(abs(fd), abs(grad[i]), 1e-3)


def test_zero_residual_gives_zero_loss_and_gradient():
    # u = h * N with N constant 0 solves the problem with psi far below and f = 0
    b = get_benchmark("obstacle1d_sym")
    net = init_net([1, 4, 1], 0)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.0
    p = problem("case1", obstacle=lambda x: np.full(len(x), -10.0))
    loss, grad = loss_total(p, b.make_surrogate(net), b.domain.sample_interior(10, 0))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_weight_scaling():
    b = get_benchmark("friction2d")
    net = init_net(b.layer_sizes(2, 8), 5)
    s = b.make_surrogate(net)
    x = b.domain.sample_interior(20, 0)
    bnd = _boundary_for(b, "hard")
    l1, g1 = loss_total(b.make_problem(), s, x, bnd)
    l7, g7 = loss_total(b.make_problem(w1=7.0, w2=7.0, w3=7.0), s, x, bnd)
    assert l7 == pytest.approx(7 * l1, rel=1e-14)
    cosine = g1 @ g7 / (np.linalg.norm(g1) * np.linalg.norm(g7))
    assert abs(cosine - 1.0) <= 1e-12


@pytest.mark.parametrize("eta", [1e-2, 1e-3, 1e-4, 1e-5])
def test_case1_exact_residual_for_every_eta(eta):
    for name in ("obstacle1d_sym", "obstacle1d_nonsym", "obstacle1d_piecewise", "obstacle2d"):
        b = get_benchmark(name)
        x = away_from_seams(b, 200, 0)
        r = residual_case1(b.make_problem(eta=eta), b.exact_jet(x), x)
        assert np.max(np.abs(r)) < 1e-10


def test_empty_training_set():
    b = get_benchmark("obstacle1d_sym")
    s = b.make_surrogate(init_net([1, 3, 1], 0))
    with pytest.raises(ValueError):
        loss_total(b.make_problem(), s, np.zeros((0, 1)))


@pytest.mark.parametrize("name, variant", [("friction2d", "hard"), ("obstacle2d", "soft")])
def test_boundary_set_required(name, variant):
    b = get_benchmark(name)
    s = b.make_surrogate(init_net(b.layer_sizes(1, 3), 0), variant)
    with pytest.raises(ValueError):
        loss_total(b.make_problem(variant=variant), s, b.domain.sample_interior(4, 0))
    with pytest.raises(ValueError):
        loss_total(b.make_problem(variant=variant), s, b.domain.sample_interior(4, 0),
                   BoundarySample(np.zeros((0, 2)), np.zeros((0, 2))))


@pytest.mark.parametrize("name, variant", VARIANTS)
def test_report_matches_loss(name, variant):
    b = get_benchmark(name)
    s = b.make_surrogate(init_net(b.layer_sizes(2, 6), 1), variant)
    p = b.make_problem(variant=variant, w1=2.0, w2=0.5, w3=3.0)
    x = b.domain.sample_interior(30, 0)
    bnd = _boundary_for(b, variant)
    report = residual_report(p, s, x, bnd)
    assert report.loss == report.recompute()
    assert report.loss == pytest.approx(loss_total(p, s, x, bnd)[0], rel=1e-13)
