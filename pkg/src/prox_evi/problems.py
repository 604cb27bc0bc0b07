"""Elliptic operators, pointwise residuals and the training loss for each EVI case.

Residual functions work on batches: ``x`` has shape ``(n, d)``, scalar
residuals have shape ``(n,)`` and vector residuals ``(d, n)``.  They accept
jets built from numpy arrays or from tape variables alike.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .domains import BoundarySample
from .errors import StateError
from .network import bind_params, evaluate
from .prox import soft_threshold, vector_shrink

CASES = ("case1", "case1_soft", "case2", "case3", "case4_shrink", "case4_primal", "friction")


def _coef(c, x):
    return c(x) if callable(c) else c


@dataclass
class OperatorSpec:
    """``A v = -alpha * lap(v) + beta . grad(v) + gamma * v``; coefficients may be callables of x."""

    alpha: object = 1.0
    beta: object = None
    gamma: object = 0.0


def apply_A(op, u, x):
    x = np.asarray(x, dtype=np.float64)
    out = -_coef(op.alpha, x) * u.laplacian()
    beta = _coef(op.beta, x)
    if beta is not None:
        beta = np.asarray(beta, dtype=np.float64)
        if beta.shape[0] != u.dim:
            raise ValueError(f"beta has {beta.shape[0]} components, jet has dimension {u.dim}")
        if np.any(beta != 0):
            beta = beta.reshape(beta.shape + (1,) * (np.ndim(ad.value_of(u.grad)) - beta.ndim))
            out = out + ad.sum_(u.grad * beta, axis=0)
    gamma = _coef(op.gamma, x)
    if np.any(np.asarray(gamma) != 0):
        out = out + gamma * u.value
    return out


@dataclass
class EviProblem:
    case: str
    operator: OperatorSpec
    source: Callable
    obstacle: Optional[Callable] = None
    tau: Optional[float] = None
    eta: float = 1e-3
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    wb: Optional[float] = None
    boundary_values: Optional[Callable] = None
    contact_set: Optional[Callable] = None

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        for name in ("w1", "w2", "w3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")


def _require(problem, attr):
    value = getattr(problem, attr)
    if value is None:
        raise StateError(f"{problem.case} problem has no {attr}")
    return value


def prox_argument(problem, u, x):
    """``w = (I - eta A) u + eta f``."""
    return u.value - problem.eta * apply_A(problem.operator, u, x) + problem.eta * problem.source(x)


def residual_case1(problem, u, x):
    psi = _require(problem, "obstacle")(x)
    w = prox_argument(problem, u, x)
    return ad.relu(w - psi) + psi - u.value


def residual_case2(problem, u, x):
    tau = _require(problem, "tau")
    w = prox_argument(problem, u, x)
    return soft_threshold(w, tau * problem.eta) - u.value


def _multiplier_parts(u, lam):
    if len(lam) != u.dim:
        raise ValueError(f"need {u.dim} multiplier components, got {len(lam)}")
    lam_values = ad.stack([l.value for l in lam])
    divergence = lam[0].grad[0]
    for i in range(1, len(lam)):
        divergence = divergence + lam[i].grad[i]
    return lam_values, divergence


def balance_residual(problem, u, divergence, x):
    """``A u - f + div(lambda)``."""
    return apply_A(problem.operator, u, x) - problem.source(x) + divergence


def residual_case3(problem, u, lam, x):
    lam_values, divergence = _multiplier_parts(u, lam)
    q = u.grad - problem.eta * lam_values
    n = ad.norm(q, axis=0)
    r1 = q / (ad.relu(n - 1.0) + 1.0) - u.grad
    return r1, balance_residual(problem, u, divergence, x)


def residual_case4_shrink(problem, u, lam, x):
    tau = _require(problem, "tau")
    lam_values, divergence = _multiplier_parts(u, lam)
    q = u.grad - problem.eta * lam_values
    r1 = vector_shrink(q, tau * problem.eta) - u.grad
    return r1, balance_residual(problem, u, divergence, x)


def residual_case4_primal(problem, u, lam, x):
    tau = _require(problem, "tau")
    lam_values, divergence = _multiplier_parts(u, lam)
    mag = np.sqrt(np.sum(np.asarray(ad.value_of(lam_values)) ** 2, axis=0))
    if np.any(mag > tau * (1.0 + 1e-12)):
        raise StateError("multiplier exceeds tau; the primal residual needs the clamped multiplier")
    r1 = ad.sum_(lam_values * u.grad, axis=0) + tau * ad.norm(u.grad, axis=0)
    return r1, balance_residual(problem, u, divergence, x)


def residual_friction(problem, u, x, interior, lam=None, normals=None):
    """Friction residual components at interior points or at contact-boundary points."""
    if interior:
        return {"equation": apply_A(problem.operator, u, x) - problem.source(x)}
    tau = _require(problem, "tau")
    if normals is None or lam is None:
        raise ValueError("boundary residuals need outward normals and the multiplier")
    x = np.asarray(x, dtype=np.float64)
    if problem.contact_set is not None and not np.all(problem.contact_set(x)):
        raise ValueError("boundary residual requested at points off the contact boundary")
    normals = np.asarray(normals, dtype=np.float64)
    lam_u = lam[0].value
    dudn = ad.sum_(u.grad * normals.T, axis=0)
    return {
        "complementarity": lam_u * u.value + tau * ad.absolute(u.value),
        "neumann": dudn - lam_u,
    }


@dataclass
class ResidualReport:
    """Named residual components with their weights; ``loss`` is the weighted mean square."""

    components: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    loss: float = 0.0

    def recompute(self):
        return sum(self.weights[k] * mean_square(v) for k, v in self.components.items())


def mean_square(r):
    """Mean over points of ``|r|^2``; vector residuals carry components on axis 0."""
    if isinstance(r, ad.Var):
        sq = r * r
        if r.ndim == 2:
            sq = ad.sum_(sq, axis=0)
        return ad.mean(sq)
    r = np.asarray(r)
    sq = r * r
    if r.ndim == 2:
        sq = sq.sum(axis=0)
    return float(np.mean(sq))


def residual_terms(problem, surrogate, points, boundary=None, params=None):
    """``{name: (weight, residual)}`` for the problem's case."""
    case = problem.case
    x = np.asarray(points, dtype=np.float64)
    u, lam = evaluate(surrogate, x, params)
    if case in ("case1", "case1_soft"):
        terms = {"obstacle": (problem.w1, residual_case1(problem, u, x))}
        if case == "case1_soft":
            if boundary is None or len(boundary) == 0:
                raise ValueError("soft boundary mode needs boundary points")
            wb = problem.wb if problem.wb is not None else 1.0
            ub, _ = evaluate(surrogate, boundary.points, params)
            target = problem.boundary_values(boundary.points) if problem.boundary_values else 0.0
            terms["boundary"] = (wb, ub.value - target)
        return terms
    if case == "case2":
        return {"shrink": (problem.w1, residual_case2(problem, u, x))}
    if case in ("case3", "case4_shrink", "case4_primal"):
        fn = {"case3": residual_case3, "case4_shrink": residual_case4_shrink,
              "case4_primal": residual_case4_primal}[case]
        r1, r2 = fn(problem, u, lam, x)
        return {"prox": (problem.w1, r1), "balance": (problem.w2, r2)}
    if case == "friction":
        if boundary is None or len(boundary) == 0:
            raise ValueError("friction problems need contact-boundary points")
        terms = {"equation": (problem.w3, residual_friction(problem, u, x, True)["equation"])}
        ub, lamb = evaluate(surrogate, boundary.points, params)
        parts = residual_friction(problem, ub, boundary.points, False, lamb, boundary.normals)
        terms["complementarity"] = (problem.w1, parts["complementarity"])
        terms["neumann"] = (problem.w2, parts["neumann"])
        return terms
    raise ValueError(f"unknown case {case!r}")


def _check_points(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("training set must be a nonempty (n, d) array")
    return points


def loss_total(problem, surrogate, train_points, boundary=None):
    """Loss value and its gradient with respect to the flat network parameters."""
    points = _check_points(train_points)
    tape = Tape()
    params = bind_params(surrogate.net, tape)
    terms = residual_terms(problem, surrogate, points, boundary, params)
    loss = None
    for weight, r in terms.values():
        term = mean_square(r) * weight
        loss = term if loss is None else loss + term
    if not isinstance(loss, ad.Var):
        return float(loss), np.zeros(surrogate.net.n_params)
    grad = ad.backward(tape, loss)
    return float(loss.value), grad


def residual_report(problem, surrogate, train_points, boundary=None):
    points = _check_points(train_points)
    terms = residual_terms(problem, surrogate, points, boundary)
    report = ResidualReport(
        components={k: np.asarray(r) for k, (_, r) in terms.items()},
        weights={k: w for k, (w, _) in terms.items()},
    )
    report.loss = report.recompute()
    return report


__all__ = [
    "CASES", "BoundarySample", "EviProblem", "OperatorSpec", "ResidualReport", "apply_A",
    "balance_residual", "loss_total", "mean_square", "prox_argument", "residual_case1",
    "residual_case2", "residual_case3", "residual_case4_primal", "residual_case4_shrink",
    "residual_friction", "residual_report", "residual_terms",
]
