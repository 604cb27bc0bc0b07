"""Domains, uniform samplers, boundary samplers with outward normals, and test grids."""

from dataclasses import dataclass

import numpy as np


@dataclass
class BoundarySample:
    points: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.points)


def _empty(d):
    return BoundarySample(np.zeros((0, d)), np.zeros((0, d)))


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    dim = 1
    segments = ("all", "left", "right")

    def contains(self, x, closed=False):
        x = np.asarray(x)[..., 0]
        if closed:
            return (x >= self.a) & (x <= self.b)
        return (x > self.a) & (x < self.b)

    def sample_interior(self, count, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(self.a, self.b, size=count)
        # uniform() is half-open; exclude the left endpoint too
        x = np.where(x == self.a, 0.5 * (self.a + self.b), x)
        return x[:, None]

    def sample_boundary(self, segment, count, seed):
        if segment not in self.segments:
            raise ValueError(f"unknown boundary segment {segment!r}")
        if count == 0:
            return _empty(1)
        rng = np.random.default_rng(seed)
        if segment == "all":
            right = rng.random(count) < 0.5
        else:
            right = np.full(count, segment == "right")
        pts = np.where(right, self.b, self.a)[:, None]
        normals = np.where(right, 1.0, -1.0)[:, None]
        return BoundarySample(pts, normals)

    def test_grid(self, n):
        return np.linspace(self.a, self.b, n)[:, None]


@dataclass(frozen=True)
class Rectangle:
    """``(a, b) x (c, d)``; boundary segments are named by side."""

    a: float
    b: float
    c: float
    d: float

    dim = 2
    segments = ("all", "left", "right", "bottom", "top")

    def contains(self, x, closed=False):
        x = np.asarray(x)
        x1, x2 = x[..., 0], x[..., 1]
        if closed:
            return (x1 >= self.a) & (x1 <= self.b) & (x2 >= self.c) & (x2 <= self.d)
        return (x1 > self.a) & (x1 < self.b) & (x2 > self.c) & (x2 < self.d)

    def sample_interior(self, count, seed):
        rng = np.random.default_rng(seed)
        lo = np.array([self.a, self.c])
        hi = np.array([self.b, self.d])
        return lo + (hi - lo) * rng.random((count, 2))

    def _side(self, side, t):
        n = len(t)
        if side == "left":
            return np.column_stack([np.full(n, self.a), self.c + (self.d - self.c) * t]), (-1.0, 0.0)
        if side == "right":
            return np.column_stack([np.full(n, self.b), self.c + (self.d - self.c) * t]), (1.0, 0.0)
        if side == "bottom":
            return np.column_stack([self.a + (self.b - self.a) * t, np.full(n, self.c)]), (0.0, -1.0)
        return np.column_stack([self.a + (self.b - self.a) * t, np.full(n, self.d)]), (0.0, 1.0)

    def sample_boundary(self, segment, count, seed):
        if segment not in self.segments:
            raise ValueError(f"unknown boundary segment {segment!r}")
        if count == 0:
            return _empty(2)
        rng = np.random.default_rng(seed)
        t = rng.random(count)
        if segment != "all":
            pts, nrm = self._side(segment, t)
            return BoundarySample(pts, np.tile(nrm, (count, 1)))
        w, h = self.b - self.a, self.d - self.c
        sides = ("bottom", "right", "top", "left")
        probs = np.array([w, h, w, h]) / (2 * (w + h))
        which = rng.choice(4, size=count, p=probs)
        pts = np.zeros((count, 2))
        normals = np.zeros((count, 2))
        for k, side in enumerate(sides):
            mask = which == k
            p, nrm = self._side(side, t[mask])
            pts[mask] = p
            normals[mask] = nrm
        return BoundarySample(pts, normals)

    def test_grid(self, n):
        """``n x n`` uniform grid over the closed rectangle."""
        g1 = np.linspace(self.a, self.b, n)
        g2 = np.linspace(self.c, self.d, n)
        X1, X2 = np.meshgrid(g1, g2, indexing="ij")
        return np.column_stack([X1.ravel(), X2.ravel()])


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    radius: float

    dim = 2
    segments = ("all",)

    def contains(self, x, closed=False):
        x = np.asarray(x)
        r2 = (x[..., 0] - self.cx) ** 2 + (x[..., 1] - self.cy) ** 2
        return r2 <= self.radius**2 if closed else r2 < self.radius**2

    def sample_interior(self, count, seed):
        rng = np.random.default_rng(seed)
        r = self.radius * np.sqrt(rng.random(count))
        theta = 2 * np.pi * rng.random(count)
        return np.column_stack([self.cx + r * np.cos(theta), self.cy + r * np.sin(theta)])

    def sample_boundary(self, segment, count, seed):
        if segment not in self.segments:
            raise ValueError(f"unknown boundary segment {segment!r}")
        if count == 0:
            return _empty(2)
        rng = np.random.default_rng(seed)
        theta = 2 * np.pi * rng.random(count)
        normals = np.column_stack([np.cos(theta), np.sin(theta)])
        pts = np.array([self.cx, self.cy]) + self.radius * normals
        return BoundarySample(pts, normals)

    def test_grid(self, n):
        """Points of the ``n x n`` grid on the bounding box that lie in the closed disk."""
        g1 = np.linspace(self.cx - self.radius, self.cx + self.radius, n)
        g2 = np.linspace(self.cy - self.radius, self.cy + self.radius, n)
        X1, X2 = np.meshgrid(g1, g2, indexing="ij")
        pts = np.column_stack([X1.ravel(), X2.ravel()])
        # keep grid points that round a hair outside the circle
        return pts[self.contains(pts, closed=True) | (np.abs(np.hypot(pts[:, 0] - self.cx, pts[:, 1] - self.cy) - self.radius) < 1e-12)]


def sample_interior(domain, count, seed):
    if count < 1:
        raise ValueError("need at least one interior point")
    return domain.sample_interior(count, seed)


def sample_boundary(domain, segment, count, seed):
    return domain.sample_boundary(segment, count, seed)
