"""Fully connected tanh networks and the boundary-conforming surrogate ``u = g + h * N_u``."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Jet2, jet_dense, jet_tanh, lift_point
from .errors import StateError

CHECKPOINT_MAGIC = "PROXEVI1"
CLAMP_MARGIN = 1.0 - 8.0 * np.finfo(np.float64).eps


@dataclass
class MlpNet:
    """Dense tanh network; ``weights[k]`` has shape ``(sizes[k], sizes[k+1])``."""

    sizes: list
    weights: list
    biases: list

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    @property
    def n_params(self):
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def flat(self):
        """Parameters in canonical order: per layer, weights row-major then biases."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def with_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases, pos = [], [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            weights.append(theta[pos:pos + a * b].reshape(a, b))
            pos += a * b
            biases.append(theta[pos:pos + b].copy())
            pos += b
        return MlpNet(list(self.sizes), weights, biases)


def init_net(layer_sizes, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, per layer."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if min(sizes) < 1:
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpNet(sizes, weights, biases)


def bind_params(net, tape):
    """Register the network parameters on ``tape`` in canonical order."""
    return [(tape.param(w), tape.param(b)) for w, b in zip(net.weights, net.biases)]


def eval_raw(net, x, params=None):
    """Jets of every network output at ``x`` (a point or an ``(n, d)`` batch).

    ``params`` comes from :func:`bind_params` when gradients are needed;
    otherwise the stored arrays are used and the result is plain numpy.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {net.in_dim}")
    layers = params if params is not None else list(zip(net.weights, net.biases))
    d = net.in_dim
    grad = np.broadcast_to(np.eye(d).reshape((d,) + (1,) * (x.ndim - 1) + (d,)), (d,) + x.shape)
    a = Jet2(x, grad, np.zeros((d,) + x.shape))
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        a = jet_dense(a, w, b)
        if k < last:
            a = jet_tanh(a)
    return [Jet2(a.value[..., j], a.grad[..., j], a.hess[..., j]) for j in range(net.out_dim)]


Field = Callable[[list], Jet2]


def field_jet(fn, x):
    """Evaluate an analytic field (a function of coordinate jets) at ``x``.

    Piecewise fields evaluate every branch; overflow or 0/0 in a branch that is
    not selected is expected, so those warnings are silenced here.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return fn(lift_point(x))


def zero_field(coords):
    return Jet2.constant(np.zeros(np.shape(coords[0].value)), len(coords))


def one_field(coords):
    return Jet2.constant(np.ones(np.shape(coords[0].value)), len(coords))


@dataclass
class BoundaryData:
    """Distance-like factor ``h`` (zero on the Dirichlet boundary) and lift ``g``."""

    h: Field
    g: Field = zero_field


SOFT_BOUNDARY = BoundaryData(h=one_field, g=zero_field)


@dataclass
class SurrogateField:
    """``u = g + h * N_u`` from output 0; multiplier from outputs ``1..``.

    With ``tau_clamp`` set, the multiplier is the radial clamp
    ``tau * N / max(tau, |N|)``.
    """

    net: MlpNet
    boundary: BoundaryData = field(default_factory=lambda: SOFT_BOUNDARY)
    tau_clamp: Optional[float] = None

    def with_net(self, net):
        return SurrogateField(net, self.boundary, self.tau_clamp)


def compose_u(surrogate, n_u, x):
    h = field_jet(surrogate.boundary.h, x)
    g = field_jet(surrogate.boundary.g, x)
    return g + h * n_u


def clamp_jets(raw, tau):
    """Jets of ``tau * N / max(tau, |N|)`` for the vector of jets ``raw``.

    Inside the ball the map is the identity (also on the boundary ``|N| = tau``);
    outside it is ``tau * N / |N|`` differentiated through the norm.
    """
    sq = raw[0] * raw[0]
    for r in raw[1:]:
        sq = sq + r * r
    outside = ad.value_of(sq.value) > tau * tau
    # the norm is only formed where it is selected, so no 1/0 reaches the tape
    safe = ad.jet_where(outside, sq, tau * tau)
    # a radius a few ulps inside tau keeps |lambda| <= tau after rounding
    scale = (tau * CLAMP_MARGIN) * ad.jet_reciprocal(ad.jet_sqrt(safe))
    return [ad.jet_where(outside, r * scale, r) for r in raw]


def multiplier_from_raw(surrogate, raw):
    if surrogate.net.out_dim < 2:
        raise StateError("network has no multiplier outputs")
    lam = raw[1:]
    if surrogate.tau_clamp is not None:
        lam = clamp_jets(lam, surrogate.tau_clamp)
    return lam


def evaluate(surrogate, x, params=None):
    """One shared forward pass: ``(u_jet, multiplier_jets or None)``."""
    raw = eval_raw(surrogate.net, x, params)
    u = compose_u(surrogate, raw[0], x)
    lam = multiplier_from_raw(surrogate, raw) if surrogate.net.out_dim > 1 else None
    return u, lam


def eval_u(surrogate, x, params=None):
    return evaluate(surrogate, x, params)[0]


def eval_lambda(surrogate, x, params=None):
    raw = eval_raw(surrogate.net, x, params)
    return multiplier_from_raw(surrogate, raw)


def predict(surrogate, x):
    """Surrogate values only (no tape)."""
    return np.asarray(eval_u(surrogate, x).value)


def save_checkpoint(net, path):
    """Header line ``PROXEVI1 <sizes...>`` then the raw little-endian float64 vector."""
    path = Path(path)
    header = " ".join([CHECKPOINT_MAGIC] + [str(s) for s in net.sizes]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(net.flat().astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if not header or header[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    sizes = [int(s) for s in header[1:]]
    theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    template = MlpNet(sizes, [], [])
    if theta.size != template.n_params:
        raise ValueError(f"{path}: expected {template.n_params} parameters, found {theta.size}")
    return template.with_flat(theta)
