"""Pointwise proximal maps for the four nonsmooth functionals.

All maps act elementwise over points.  Vector-valued maps take the vector
components along axis 0, i.e. an array (or tape variable) of shape ``(d, ...)``.
Inputs may be numpy arrays or :class:`~prox_evi.autodiff.Var`.
"""

import numpy as np

from . import autodiff as ad


def _check_kappa(kappa):
    if kappa < 0:
        raise ValueError(f"threshold must be nonnegative, got {kappa}")


def obstacle_clamp(w, psi):
    """Projection onto ``{v >= psi}``: ``max(w, psi)``."""
    return ad.where(ad.value_of(w) > ad.value_of(psi), w, psi)


def soft_threshold(w, kappa):
    """``sgn(w) * max(|w| - kappa, 0)``, with ``sgn(0) = 0``."""
    _check_kappa(kappa)
    return ad.sign(w) * ad.relu(ad.absolute(w) - kappa)


def unit_ball_project(q):
    """``q / max(1, |q|)`` for vectors stacked along axis 0."""
    n = ad.norm(q, axis=0)
    return q / (ad.relu(n - 1.0) + 1.0)


def vector_shrink(w, kappa):
    """``w/|w| * max(|w| - kappa, 0)``; returns 0 whenever ``|w| <= kappa`` (including w = 0)."""
    _check_kappa(kappa)
    if kappa == 0:
        return w
    n = ad.norm(w, axis=0)
    active = np.asarray(ad.value_of(n)) > kappa
    safe = ad.where(active, n, 1.0)
    # direction first so that in 1-D the result is exactly sgn(w) * (|w| - kappa)
    direction = ad.where(active, w / safe, 0.0)
    return direction * ad.relu(n - kappa)
