"""The seven benchmark problems: exact solutions, obstacles, sources, h/g and default settings.

Analytic fields here are functions of a list of coordinate jets (see
:func:`prox_evi.autodiff.lift_point`), so evaluating them yields exact first and
second derivatives alongside the values.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .autodiff import (
    Jet2, jet_abs, jet_cos, jet_exp, jet_log, jet_power, jet_reciprocal, jet_sin, jet_sqrt, jet_where,
    lift_point,
)
from .domains import BoundarySample, Disk, Interval, Rectangle
from .network import BoundaryData, SOFT_BOUNDARY, SurrogateField, field_jet
from .problems import EviProblem, OperatorSpec

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)

# printed approximations; see refine_beta / refine_rstar
PIECEWISE_BETA = 0.02376
RSTAR = 0.6979651482


@dataclass(frozen=True)
class Hyper:
    """Training-set size, test-set size, epochs, hidden layers and width."""

    train_size: int
    test_size: int
    epochs: int
    hidden_layers: int
    width: int


HYPER_1D = Hyper(50, 1000, 10_000, 3, 100)
HYPER_OBSTACLE_2D = Hyper(1000, 10_000, 10_000, 5, 100)
HYPER_TORSION = Hyper(1000, 10_000, 10_000, 3, 100)
HYPER_BINGHAM = Hyper(1000, 10_000, 20_000, 10, 50)
HYPER_FRICTION = Hyper(1000, 10_000, 10_000, 4, 50)


@dataclass
class BenchmarkCase:
    name: str
    domain: object
    case: str
    operator: OperatorSpec
    source: Callable
    exact_u: Callable
    boundary: BoundaryData
    hyper: Hyper
    obstacle: Optional[Callable] = None
    tau: Optional[float] = None
    multiplier: Optional[Callable] = None
    constants: dict = field(default_factory=dict)
    seams: Callable = None
    contact_segment: Optional[str] = None
    contact_size: int = 0

    @property
    def dim(self):
        return self.domain.dim

    @property
    def out_dim(self):
        if self.case == "friction":
            return 2
        if self.case in ("case3", "case4_shrink", "case4_primal"):
            return self.dim + 1
        return 1

    def layer_sizes(self, hidden_layers=None, width=None):
        n = self.hyper.hidden_layers if hidden_layers is None else hidden_layers
        w = self.hyper.width if width is None else width
        return [self.dim] + [w] * n + [self.out_dim]

    def resolve_case(self, variant="hard"):
        """Map a loss-variant flag (hard, soft, shrink, primal) to a problem case."""
        if variant in (None, "hard"):
            return self.case
        if variant == "soft":
            if self.case != "case1":
                raise ValueError(f"{self.name}: soft boundary mode is only defined for obstacle problems")
            return "case1_soft"
        if variant in ("shrink", "primal"):
            if not self.case.startswith("case4"):
                raise ValueError(f"{self.name}: loss variant {variant!r} applies to Bingham flow only")
            return "case4_" + variant
        raise ValueError(f"unknown loss variant {variant!r}")

    def make_problem(self, eta=1e-3, variant="hard", w1=1.0, w2=1.0, w3=1.0, wb=None):
        case = self.resolve_case(variant)
        contact = None
        if self.contact_segment is not None:
            domain = self.domain
            contact = lambda x: np.isclose(np.asarray(x)[:, 0], domain.b)  # noqa: E731
        return EviProblem(
            case=case,
            operator=self.operator,
            source=self.source,
            obstacle=self.obstacle if case.startswith("case1") else None,
            tau=self.tau,
            eta=eta,
            w1=w1, w2=w2, w3=w3,
            wb=(1.0 if wb is None else wb) if case == "case1_soft" else wb,
            boundary_values=lambda x: self.exact(x) if case == "case1_soft" else None,
            contact_set=contact,
        )

    def make_surrogate(self, net, variant="hard"):
        case = self.resolve_case(variant)
        boundary = SOFT_BOUNDARY if case == "case1_soft" else self.boundary
        clamp = self.tau if case in ("case4_primal", "friction") else None
        return SurrogateField(net, boundary, clamp)

    def exact(self, x):
        """Exact solution values at points ``x`` of the closed domain."""
        x = _as_points(x, self.dim)
        if not np.all(self.domain.contains(x, closed=True) | _near_boundary(self.domain, x)):
            raise ValueError(f"{self.name}: points outside the domain")
        return np.asarray(field_jet(self.exact_u, x).value, dtype=np.float64)

    def exact_jet(self, x):
        return field_jet(self.exact_u, _as_points(x, self.dim))

    def multiplier_jets(self, x):
        if self.multiplier is None:
            raise ValueError(f"{self.name} has no multiplier")
        # unselected branches may divide by |x| = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.multiplier(_lift(x, self.dim))

    def test_points(self, size=None, seed=12345):
        size = self.hyper.test_size if size is None else size
        if isinstance(self.domain, Interval):
            return self.domain.test_grid(size)
        if isinstance(self.domain, Rectangle):
            n = int(round(math.sqrt(size)))
            return self.domain.test_grid(n)
        # disks: no test mesh is prescribed, use fixed-seed uniform samples
        return self.domain.sample_interior(size, seed)

    def contact_boundary(self, count, seed):
        if self.contact_segment is None:
            return None
        return self.domain.sample_boundary(self.contact_segment, count, seed)

    def training_boundary(self, variant=None, count=None, seed=0):
        """Boundary points the loss needs: the contact side, or the whole boundary in soft mode."""
        if self.resolve_case(variant) == "case1_soft":
            if isinstance(self.domain, Interval):
                pts = np.array([[self.domain.a], [self.domain.b]])
                return BoundarySample(pts, np.array([[-1.0], [1.0]]))
            return self.domain.sample_boundary("all", count or 200, seed)
        return self.contact_boundary(count or self.contact_size, seed)


def _as_points(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and d == 1:
        x = x[:, None]
    elif x.ndim == 1:
        x = x[None, :]
    return x


def _lift(x, d):
    return lift_point(_as_points(x, d))


def _near_boundary(domain, x, tol=1e-12):
    if isinstance(domain, Disk):
        r = np.hypot(x[:, 0] - domain.cx, x[:, 1] - domain.cy)
        return r <= domain.radius + tol
    lo = np.array([domain.a, domain.c] if isinstance(domain, Rectangle) else [domain.a])
    hi = np.array([domain.b, domain.d] if isinstance(domain, Rectangle) else [domain.b])
    return np.all((x >= lo - tol) & (x <= hi + tol), axis=1)


def _const(value, like):
    return Jet2.constant(np.full(np.shape(like.value), float(value)), like.dim)


def _r2(X):
    return X[0] * X[0] + X[1] * X[1]


def _radius(X, floor=1e-300):
    """|x| as a jet.  At the origin the value is 0 and the derivatives are set to 0."""
    r2 = _r2(X)
    away = np.asarray(r2.value) > floor
    safe = jet_where(away, r2, 1.0)
    return jet_where(away, jet_sqrt(safe), 0.0)


def _values(fn, x):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return fn(x)


# ---------------------------------------------------------------------------
# 1D obstacle, symmetric operator


_S1 = 1.0 / (2.0 * SQRT2)
_K1 = 100.0 - 50.0 * SQRT2


def _psi_sym(X):
    x = X[0]
    v = np.asarray(x.value)

    def half(t):
        return jet_where(np.asarray(t.value) <= 0.25, 100.0 * t * t, 100.0 * t * (1.0 - t) - 12.5)

    return jet_where(v <= 0.5, half(x), half(1.0 - x))


def _u_sym(X):
    x = X[0]
    v = np.asarray(x.value)
    mid = 100.0 * x * (1.0 - x) - 12.5
    return jet_where(v < _S1, _K1 * x, jet_where(v < 1.0 - _S1, mid, _K1 * (1.0 - x)))


def obstacle1d_sym():
    dom = Interval(0.0, 1.0)
    return BenchmarkCase(
        name="obstacle1d_sym",
        domain=dom,
        case="case1",
        operator=OperatorSpec(alpha=1.0),
        source=lambda x: np.zeros(len(x)),
        obstacle=lambda x: np.asarray(field_jet(_psi_sym, x).value),
        exact_u=_u_sym,
        boundary=BoundaryData(h=lambda X: X[0] * (1.0 - X[0])),
        hyper=HYPER_1D,
        seams=lambda x: np.min(np.abs(x[:, :1] - np.array([_S1, 1.0 - _S1])), axis=1),
    )


# ---------------------------------------------------------------------------
# 1D obstacle, non-symmetric operator -u'' + u'


_K2 = 4.0 - 2.0 * SQRT3


def _f_nonsym(x):
    x = np.asarray(x)[:, 0]
    return np.where(x < -2.0 + SQRT3, _K2, np.where(x <= 2.0 - SQRT3, -(2.0 * SQRT3 - 2.0), -_K2))


def _u_nonsym(X):
    x = X[0]
    v = np.asarray(x.value)
    return jet_where(v < -2.0 + SQRT3, _K2 * (x + 2.0),
                     jet_where(v < 2.0 - SQRT3, 1.0 - x * x, _K2 * (2.0 - x)))


def obstacle1d_nonsym():
    return BenchmarkCase(
        name="obstacle1d_nonsym",
        domain=Interval(-2.0, 2.0),
        case="case1",
        operator=OperatorSpec(alpha=1.0, beta=(1.0,)),
        source=_f_nonsym,
        obstacle=lambda x: 1.0 - np.asarray(x)[:, 0] ** 2,
        exact_u=_u_nonsym,
        boundary=BoundaryData(h=lambda X: 0.25 * (X[0] + 2.0) * (2.0 - X[0])),
        hyper=HYPER_1D,
        seams=lambda x: np.min(np.abs(x[:, :1] - np.array([-2.0 + SQRT3, 2.0 - SQRT3])), axis=1),
    )


# ---------------------------------------------------------------------------
# 1D obstacle with a piecewise smooth solution


_MU_FLOOR = 1e-3 / 709.0
_ALPHA_EXP = 0.4


def _mu(s):
    """exp(-1/s) for s > 0, else 0; flushed to 0 below a tiny positive threshold."""
    pos = np.asarray(s.value) > _MU_FLOOR
    safe = jet_where(pos, s, 1.0)
    return jet_where(pos, jet_exp(-jet_reciprocal(safe)), 0.0)


def _phi(t):
    at = jet_abs(t)
    num = _mu(0.4 - at)
    return num / (_mu(at - 0.3) + num)


def _psi_piece_branch(t):
    at = jet_abs(t)
    safe = jet_where(np.asarray(at.value) > 0, at, 1.0)
    powered = jet_where(np.asarray(at.value) > 0, jet_power(safe, 2.0 - _ALPHA_EXP), 0.0)
    return _phi(t) * (1.5 - 12.0 * powered) - 0.5


def _psi_piecewise(X):
    x = X[0]
    v = np.asarray(x.value)
    return jet_where(v <= 0.0, _psi_piece_branch(x + 0.5), _psi_piece_branch(x - 0.5))


def _psi_piecewise_at(x0):
    return float(field_jet(_psi_piecewise, np.array([[x0]])).value[0])


def _make_u_piecewise(beta):
    left_val = _psi_piecewise_at(-beta - 0.5)
    right_val = _psi_piecewise_at(beta + 0.5)

    def u(X):
        x = X[0]
        v = np.asarray(x.value)
        psi = _psi_piecewise(X)
        out = jet_where(v < beta + 0.5, psi, right_val * (x - 1.0) / (beta - 0.5))
        out = jet_where(v < 0.5, _const(1.0, x), out)
        out = jet_where(v < -0.5, psi, out)
        return jet_where(v < -beta - 0.5, left_val * (x + 1.0) / (0.5 - beta), out)

    return u


def refine_beta(lo=1e-6, hi=0.3 - 1e-6):
    """Root of psi(-b-0.5) = (0.5-b) psi'(-b-0.5) on (0, 0.3), by bracketing."""

    def gap(b):
        jet = field_jet(_psi_piecewise, np.array([[-b - 0.5]]))
        return float(jet.value[0] - (0.5 - b) * jet.grad[0][0])

    root = brentq(gap, lo, hi, xtol=1e-15)
    log.info("refined beta = %.12f (printed %.5f)", root, PIECEWISE_BETA)
    return root


def obstacle1d_piecewise(beta=PIECEWISE_BETA):
    beta = float(beta)
    seams = np.array([-0.5 - beta, -0.5, 0.5, 0.5 + beta])
    return BenchmarkCase(
        name="obstacle1d_piecewise",
        domain=Interval(-1.0, 1.0),
        case="case1",
        operator=OperatorSpec(alpha=1.0),
        source=lambda x: np.zeros(len(x)),
        obstacle=lambda x: np.asarray(_values(lambda p: field_jet(_psi_piecewise, p).value, x)),
        exact_u=_make_u_piecewise(beta),
        boundary=BoundaryData(h=lambda X: (X[0] + 1.0) * (1.0 - X[0])),
        hyper=HYPER_1D,
        constants={"beta": beta, "alpha": _ALPHA_EXP},
        seams=lambda x: np.min(np.abs(x[:, :1] - seams), axis=1),
    )


# ---------------------------------------------------------------------------
# 2D obstacle on (-2, 2)^2 with a non-homogeneous boundary condition


def refine_rstar(lo=0.1, hi=0.99):
    """Root of r^2 (1 - ln(r/2)) = 1."""
    root = brentq(lambda r: r * r * (1.0 - math.log(r / 2.0)) - 1.0, lo, hi, xtol=1e-15)
    log.info("refined r* = %.12f (printed %.10f)", root, RSTAR)
    return root


def _make_u_obstacle2d(rstar):
    scale = rstar * rstar / math.sqrt(1.0 - rstar * rstar)

    def u(X):
        r2 = _r2(X)
        v = np.asarray(r2.value)
        inside = v <= rstar * rstar
        cap = jet_sqrt(jet_where(inside, 1.0 - r2, 1.0))
        # -r*^2 ln(|x|/2) / sqrt(1 - r*^2), written through |x|^2 to stay finite at the origin
        safe = jet_where(v > 0, r2, 1.0)
        outer = -scale * (0.5 * jet_log(safe) - math.log(2.0))
        return jet_where(inside, cap, outer)

    return u


def _psi_obstacle2d(x):
    x = np.asarray(x)
    r2 = x[:, 0] ** 2 + x[:, 1] ** 2
    return np.where(r2 <= 1.0, np.sqrt(np.clip(1.0 - r2, 0.0, None)), -1.0)


def _transfinite_lift(u, a, b, c, d):
    """Coons-patch lift matching ``u`` on the rectangle boundary."""

    def g(X):
        x1, x2 = X
        w1 = (x1 - a) * (1.0 / (b - a))
        w2 = (x2 - c) * (1.0 / (d - c))

        def at(p1, p2):
            return u([p1 if not isinstance(p1, float) else _const(p1, x1),
                      p2 if not isinstance(p2, float) else _const(p2, x2)])

        corners = (
            (1.0 - w1) * (1.0 - w2) * at(a, c) + (1.0 - w1) * w2 * at(a, d)
            + w1 * (1.0 - w2) * at(b, c) + w1 * w2 * at(b, d)
        )
        edges = (1.0 - w1) * at(a, x2) + w1 * at(b, x2) + (1.0 - w2) * at(x1, c) + w2 * at(x1, d)
        return edges - corners

    return g


def _normalized_bubble(a, b, c, d):
    peak = (b - a) ** 2 * (d - c) ** 2 / 16.0

    def h(X):
        x1, x2 = X
        return (x1 - a) * (b - x1) * (x2 - c) * (d - x2) * (1.0 / peak)

    return h


def obstacle2d(rstar=RSTAR):
    rstar = float(rstar)
    a = c = -2.0
    b = d = 2.0
    u = _make_u_obstacle2d(rstar)
    return BenchmarkCase(
        name="obstacle2d",
        domain=Rectangle(a, b, c, d),
        case="case1",
        operator=OperatorSpec(alpha=1.0),
        source=lambda x: np.zeros(len(x)),
        obstacle=_psi_obstacle2d,
        exact_u=u,
        boundary=BoundaryData(h=_normalized_bubble(a, b, c, d), g=_transfinite_lift(u, a, b, c, d)),
        hyper=HYPER_OBSTACLE_2D,
        constants={"rstar": rstar},
        seams=lambda x: np.abs(np.hypot(x[:, 0], x[:, 1]) - rstar),
    )


# ---------------------------------------------------------------------------
# elasto-plastic torsion on a disk


def torsion2d(c=1.0, R=1.0):
    c, R = float(c), float(R)
    plastic = c * R > 2.0
    r_el = 2.0 / c

    def u(X):
        r2 = _r2(X)
        elastic = (c / 4.0) * (R * R - r2)
        if not plastic:
            return elastic
        inner = elastic - (c / 4.0) * (R - r_el) ** 2
        return jet_where(np.asarray(r2.value) <= r_el * r_el, inner, R - _radius(X))

    def multiplier(X):
        # div(lam) = f - A u; zero in the elastic core, (c/2 - 1/|x|) x in the plastic ring
        if not plastic:
            return [_const(0.0, X[0]) for _ in X]
        r = _radius(X)
        outside = np.asarray(r.value) >= r_el
        k = c / 2.0 - jet_reciprocal(r)
        return [jet_where(outside, k * xi, 0.0) for xi in X]

    return BenchmarkCase(
        name="torsion2d",
        domain=Disk(0.0, 0.0, R),
        case="case3",
        operator=OperatorSpec(alpha=1.0),
        source=lambda x: np.full(len(x), c),
        exact_u=u,
        multiplier=multiplier,
        boundary=BoundaryData(h=lambda X: R * R - _r2(X)),
        hyper=HYPER_TORSION,
        constants={"c": c, "R": R},
        seams=(lambda x: np.abs(np.hypot(x[:, 0], x[:, 1]) - r_el)) if plastic
        else (lambda x: np.full(len(x), np.inf)),
    )


# ---------------------------------------------------------------------------
# Bingham flow in a circular pipe


def bingham2d(tau=1.0, c=10.0, R=1.0):
    tau, c, R = float(tau), float(c), float(R)
    r_plug = 2.0 * tau / c
    flowing = c * R > 2.0 * tau

    def u(X):
        if not flowing:
            return _const(0.0, X[0])
        r = _radius(X)
        plug = (R - r_plug) / 2.0 * (c / 2.0 * (R + r_plug) - 2.0 * tau)
        shear = (R - r) * 0.5 * ((c / 2.0) * (R + r) - 2.0 * tau)
        return jet_where(np.asarray(r.value) <= r_plug, _const(plug, X[0]), shear)

    def multiplier(X):
        # plug: c x / 2 (|lam| <= tau there); sheared zone: -tau grad u/|grad u| = tau x/|x|
        if not flowing:
            return [(c / 2.0) * xi for xi in X]
        r = _radius(X)
        outside = np.asarray(r.value) > r_plug
        inv = jet_reciprocal(r)
        return [jet_where(outside, tau * xi * inv, (c / 2.0) * xi) for xi in X]

    return BenchmarkCase(
        name="bingham2d",
        domain=Disk(0.0, 0.0, R),
        case="case4_primal",
        operator=OperatorSpec(alpha=1.0),
        source=lambda x: np.full(len(x), c),
        exact_u=u,
        multiplier=multiplier,
        tau=tau,
        boundary=BoundaryData(h=lambda X: R * R - _r2(X)),
        hyper=HYPER_BINGHAM,
        constants={"tau": tau, "c": c, "R": R, "nu": 1.0},
        seams=lambda x: np.abs(np.hypot(x[:, 0], x[:, 1]) - r_plug),
    )


# ---------------------------------------------------------------------------
# simplified friction on the unit square


_TWO_PI = 2.0 * math.pi
_SIN1 = math.sin(1.0)


def _u_friction(X):
    x1, x2 = X
    return (jet_sin(x1) - _SIN1 * x1) * jet_sin(_TWO_PI * x2)


def _f_friction(x):
    x = np.asarray(x)
    x1, x2 = x[:, 0], x[:, 1]
    k = 4.0 * math.pi**2
    return ((2.0 + k) * np.sin(x1) - (1.0 + k) * x1 * _SIN1) * np.sin(_TWO_PI * x2)


def _lam_friction(X):
    # normal derivative on {x1 = 1}: d u / d x1
    x1, x2 = X
    return [(jet_cos(x1) - _SIN1) * jet_sin(_TWO_PI * x2)]


def friction2d(tau=1.0, contact_size=200):
    return BenchmarkCase(
        name="friction2d",
        domain=Rectangle(0.0, 1.0, 0.0, 1.0),
        case="friction",
        operator=OperatorSpec(alpha=1.0, gamma=1.0),
        source=_f_friction,
        exact_u=_u_friction,
        multiplier=_lam_friction,
        tau=float(tau),
        boundary=BoundaryData(h=lambda X: 4.0 * X[0] * X[1] * (1.0 - X[1])),
        hyper=HYPER_FRICTION,
        constants={"tau": float(tau)},
        seams=lambda x: np.full(len(x), np.inf),
        contact_segment="right",
        contact_size=int(contact_size),
    )


REGISTRY = {
    "obstacle1d_sym": obstacle1d_sym,
    "obstacle1d_nonsym": obstacle1d_nonsym,
    "obstacle1d_piecewise": obstacle1d_piecewise,
    "obstacle2d": obstacle2d,
    "torsion2d": torsion2d,
    "bingham2d": bingham2d,
    "friction2d": friction2d,
}


def get_benchmark(name, **params):
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {', '.join(REGISTRY)}") from None
    return factory(**params)


def exact_solution(case, x):
    return case.exact(x)


def obstacle_and_source(case, x):
    x = _as_points(x, case.dim)
    psi = case.obstacle(x) if case.obstacle is not None else None
    return psi, case.source(x)


def boundary_functions(case):
    return case.boundary.h, case.boundary.g


def default_variant(case):
    return "primal" if case.case.startswith("case4") else "hard"


def exact_residuals(case, points, variant=None, boundary=None):
    """Residual components of the loss evaluated at the exact solution.

    The exact jets stand in for the network; for multiplier problems the
    analytically consistent multiplier is used.  Returns ``{name: array}``.
    """
    from .problems import (residual_case1, residual_case3, residual_case4_primal,
                           residual_case4_shrink, residual_friction)

    variant = default_variant(case) if variant is None else variant
    problem = case.make_problem(variant=variant)
    points = _as_points(points, case.dim)
    u = case.exact_jet(points)
    kind = problem.case
    if kind in ("case1", "case1_soft"):
        out = {"obstacle": residual_case1(problem, u, points)}
        if kind == "case1_soft" and boundary is not None:
            out["boundary"] = case.exact(boundary.points) - problem.boundary_values(boundary.points)
        return out
    if kind in ("case3", "case4_shrink", "case4_primal"):
        fn = {"case3": residual_case3, "case4_shrink": residual_case4_shrink,
              "case4_primal": residual_case4_primal}[kind]
        r1, r2 = fn(problem, u, case.multiplier_jets(points), points)
        return {"prox": np.asarray(r1), "balance": np.asarray(r2)}
    if kind == "friction":
        out = {"equation": residual_friction(problem, u, points, True)["equation"]}
        if boundary is not None:
            ub = case.exact_jet(boundary.points)
            lam = case.multiplier_jets(boundary.points)
            out.update(residual_friction(problem, ub, boundary.points, False, lam, boundary.normals))
        return out
    raise ValueError(f"no residual oracle for case {kind!r}")


def away_from_seams(case, count, seed, gap=1e-3):
    """``count`` uniform interior points at distance more than ``gap`` from every free-boundary seam."""
    rng = np.random.default_rng(seed)
    kept = np.zeros((0, case.dim))
    while len(kept) < count:
        pts = case.domain.sample_interior(2 * count, rng)
        kept = np.concatenate([kept, pts[case.seams(pts) > gap]])
    return kept[:count]
