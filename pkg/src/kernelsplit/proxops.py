"""Closed-form proximal operators for the supported losses and regularizer.

Every loss prox solves, entrywise,

    argmin_x  0.5 * (x - v)**2 + lam * V(y, x)

and works on scalars or arrays alike (numpy broadcasting).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSSES = ("squared", "hinge", "absolute")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "squared"

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unsupported loss {self.kind!r}; choose one of {LOSSES}")

    def value(self, Y, O) -> float:
        """Summed loss sum_ij V(Y_ij, O_ij)."""
        return float(np.sum(loss_terms(self.kind, Y, O)))


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "l2"
    strength: float = 0.0

    def __post_init__(self):
        if self.kind != "l2":
            raise ValueError(f"unsupported regularizer {self.kind!r}")
        if not self.strength >= 0:
            raise ValueError("regularization strength must be >= 0")

    def value(self, W) -> float:
        return self.strength * float(np.sum(np.square(W)))


def loss_terms(kind: str, Y, O) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    O = np.asarray(O, dtype=np.float64)
    if kind == "squared":
        return (O - Y) ** 2
    if kind == "hinge":
        return np.maximum(1.0 - Y * O, 0.0)
    if kind == "absolute":
        return np.abs(O - Y)
    raise ValueError(f"unsupported loss {kind!r}")


def _check_lam(lam) -> None:
    if not np.all(np.asarray(lam) > 0):
        raise ValueError("prox scale must be positive")


def _check_pm1(y) -> None:
    y = np.asarray(y)
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValueError("hinge loss needs labels in {-1, +1}")


def prox_hinge(v, y, lam):
    """Prox of ``lam * max(1 - y x, 0)`` at ``v``.

    Three regimes: ``v`` when ``y v > 1``, ``v + lam y`` when
    ``y v < 1 - lam``, and ``y`` in between.
    """
    _check_lam(lam)
    _check_pm1(y)
    v = np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    yv = y * v
    out = np.where(yv > 1.0, v, np.where(yv < 1.0 - lam, v + lam * y, y))
    return out if out.ndim else float(out)


def prox_squared(v, y, lam):
    """Prox of ``lam * (x - y)**2``: ``(v + 2 lam y) / (1 + 2 lam)``."""
    _check_lam(lam)
    out = (np.asarray(v, dtype=np.float64) + 2.0 * lam * np.asarray(y, dtype=np.float64)) / (1.0 + 2.0 * lam)
    return out if out.ndim else float(out)


def soft_threshold(t, lam):
    t = np.asarray(t, dtype=np.float64)
    out = np.sign(t) * np.maximum(np.abs(t) - lam, 0.0)
    return out if out.ndim else float(out)


def prox_absolute(v, y, lam):
    """Prox of ``lam * |x - y|``: shift, soft-threshold, shift back."""
    _check_lam(lam)
    y = np.asarray(y, dtype=np.float64)
    out = y + soft_threshold(np.asarray(v, dtype=np.float64) - y, lam)
    return out if np.ndim(out) else float(out)


_SCALAR_PROX = {
    "squared": prox_squared,
    "hinge": prox_hinge,
    "absolute": prox_absolute,
}


def prox_loss_matrix(A: np.ndarray, Y: np.ndarray, loss: LossSpec, scale: float) -> np.ndarray:
    """Apply the loss prox entrywise to ``A`` with targets ``Y``.

    Inside the solver ``scale`` is ``1 / (rho * n)`` with the global
    example count ``n``, because each local loss carries the ``1/n`` of
    the full objective.
    """
    A = np.asarray(A, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if A.shape != Y.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {Y.shape}")
    return np.asarray(_SCALAR_PROX[loss.kind](A, Y, scale), dtype=np.float64).reshape(A.shape)


def prox_regularizer(W: np.ndarray, reg: RegularizerSpec, scale: float, out=None) -> np.ndarray:
    # l2 only: argmin 0.5||X - W||^2 + scale ||X||_F^2
    if scale < 0:
        raise ValueError("regularizer prox scale must be >= 0")
    return np.divide(np.asarray(W, dtype=np.float64), 1.0 + 2.0 * scale, out=out)
