"""Projection onto the graph ``{(O, W): O = Z W}`` of a feature block.

For a block ``Z`` (``n_i x s_j``) the Frobenius-nearest graph point to
``(rhs_O, rhs_W)`` is

    W = (Z^T Z + I)^{-1} (rhs_W + Z^T rhs_O),   O = Z W.

The ``s_j x s_j`` matrix ``Z^T Z + I`` has every eigenvalue >= 1, so its
Cholesky factor always exists.  It is computed once per block and reused
for every later solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

DEFAULT_BLOCK_CAP = 4096


@dataclass(frozen=True)
class FactorCache:
    block: int
    factor: np.ndarray  # lower triangular L with L L^T = Z^T Z + I

    @property
    def size(self) -> int:
        return self.factor.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve((self.factor, True), rhs, check_finite=False)


def build_cache(Z: np.ndarray, block: int = 0) -> FactorCache:
    Z = np.asarray(Z, dtype=np.float64)
    if not np.all(np.isfinite(Z)):
        raise FloatingPointError("feature block contains non-finite entries")
    G = Z.T @ Z
    G[np.diag_indices_from(G)] += 1.0
    L, _ = cho_factor(G, lower=True, check_finite=False)
    # LAPACK wants column-major; a C-ordered factor is copied on every solve
    L = np.asfortranarray(np.tril(L))
    L.setflags(write=False)
    return FactorCache(block, L)


def graph_project(cache: FactorCache, Z: np.ndarray, rhs_W: np.ndarray,
                  rhs_O: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(W, O)``, the graph projection of ``(rhs_O, rhs_W)``."""
    n_i, s_j = Z.shape
    if cache.size != s_j:
        raise ValueError(f"cache is {cache.size}x{cache.size}, block has {s_j} columns")
    if rhs_W.shape[0] != s_j or rhs_O.shape[0] != n_i or rhs_W.shape[1] != rhs_O.shape[1]:
        raise ValueError(
            f"shape mismatch: Z {Z.shape}, rhs_W {rhs_W.shape}, rhs_O {rhs_O.shape}"
        )
    W = cache.solve(rhs_W + Z.T @ rhs_O)
    return W, Z @ W


def projection_residual(Z: np.ndarray, W: np.ndarray, O: np.ndarray) -> float:
    """``||O - Z W||_F``; zero for any point on the graph."""
    return float(np.linalg.norm(O - Z @ W))
