"""Direct solvers and a literal block-splitting iteration, for verification.

Nothing here is meant for real data: every entry point refuses problems
above a small size guard because the cost is cubic.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .featuremap import gaussian_kernel, transform
from .matrixio import balanced_offsets
from .proxops import LossSpec, prox_loss_matrix, prox_regularizer, RegularizerSpec

DESK_SCALE = 2000
TRACE_MAX_ROWS = 200
TRACE_MAX_FEATURES = 60


class SizeGuardError(ValueError):
    pass


def _guard(what: str, size: int, limit: int) -> None:
    if size > limit:
        raise SizeGuardError(f"{what}={size} exceeds the desk-scale limit {limit}")


def ridge_direct(Z, Y, lam: float) -> np.ndarray:
    """Minimizer of ``(1/n)||Z W - Y||^2 + lam ||W||^2`` by dense Cholesky."""
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(Z.shape[0], -1)
    n, s = Z.shape
    _guard("n", n, DESK_SCALE)
    _guard("s", s, 4 * DESK_SCALE)
    A = Z.T @ Z / n
    A[np.diag_indices_from(A)] += lam
    return cho_solve(cho_factor(A), Z.T @ Y / n)


def ridge_gradient(Z, Y, W, lam: float) -> np.ndarray:
    n = Z.shape[0]
    return 2.0 / n * Z.T @ (Z @ W - Y) + 2.0 * lam * W


class KernelRidge:
    """Exact Gaussian-kernel ridge regression with ``(K + n lam I) alpha = Y``."""

    def __init__(self, X, Y, sigma: float, lam: float):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
        n = X.shape[0]
        _guard("n", n, DESK_SCALE)
        self.X, self.sigma, self.lam = X, sigma, lam
        self.K = gaussian_kernel(X, X, sigma)
        A = self.K.copy()
        A[np.diag_indices_from(A)] += n * lam
        if lam > 0:
            self.alpha = cho_solve(cho_factor(A), Y)
        else:
            self.alpha = np.linalg.solve(A, Y)

    def predict(self, Xnew) -> np.ndarray:
        return gaussian_kernel(np.asarray(Xnew, dtype=np.float64), self.X, self.sigma) @ self.alpha


def kernel_ridge_direct(X, Y, sigma: float, lam: float) -> np.ndarray:
    return KernelRidge(X, Y, sigma, lam).alpha


def reference_block_splitting(config, X, Y, iters: int | None = None, desc=None) -> list[dict]:
    """Run the block-splitting updates literally and record every iteration.

    All ``O_ij``, consensus ``Obar_ij`` and duals ``mu_ij`` are
    materialized and each graph projection is a fresh dense solve.
    Per iteration the record holds ``Wbar``, root ``W`` and ``mu``, and
    for every row block ``i``: ``O``, ``Obar``, ``nu``, ``Delta``
    (``O_i - sum_j O_ij``), stacked ``W_ij`` as ``Wp``, stacked
    ``mu_ij`` as ``mup`` and stacked ``Z_ij^T O_ij`` as ``U``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
    n, d = X.shape
    m = Y.shape[1]
    _guard("n", n, TRACE_MAX_ROWS)
    _guard("s", config.features, TRACE_MAX_FEATURES)
    desc = desc or config.descriptor(d)
    R, C, s = config.R, desc.C, desc.s
    rows = balanced_offsets(n, R)
    cols = desc.col_offsets
    rsl = [slice(rows[i], rows[i + 1]) for i in range(R)]
    csl = [slice(cols[j], cols[j + 1]) for j in range(C)]
    Z = [[transform(desc, X[rsl[i]], j) for j in range(C)] for i in range(R)]
    Q = [[Z[i][j].T @ Z[i][j] + np.eye(Z[i][j].shape[1]) for j in range(C)] for i in range(R)]
    loss = LossSpec(config.loss)
    reg = RegularizerSpec("l2", config.lam)
    rho, lam = config.rho, config.lam

    Wbar = np.zeros((s, m))
    mu = np.zeros((s, m))
    W = np.zeros((s, m))
    O = [np.zeros((r.stop - r.start, m)) for r in rsl]
    Obar = [o.copy() for o in O]
    nu = [o.copy() for o in O]
    Oij = [[np.zeros_like(O[i]) for _ in range(C)] for i in range(R)]
    Obar_ij = [[np.zeros_like(O[i]) for _ in range(C)] for i in range(R)]
    Wij = [[np.zeros((cols[j + 1] - cols[j], m)) for j in range(C)] for _ in range(R)]
    mu_ij = [[np.zeros((cols[j + 1] - cols[j], m)) for j in range(C)] for _ in range(R)]

    trace = []
    for _ in range(config.max_iter if iters is None else iters):
        for i in range(R):
            O[i] = prox_loss_matrix(Obar[i] - nu[i], Y[rsl[i]], loss, 1.0 / (rho * n))
        W = prox_regularizer(Wbar - mu, reg, lam / rho)
        for i in range(R):
            for j in range(C):
                Zij = Z[i][j]
                rhs_O = Obar_ij[i][j] + nu[i]
                rhs_W = Wbar[csl[j]] - mu_ij[i][j]
                Wij[i][j] = np.linalg.solve(Q[i][j], rhs_W + Zij.T @ rhs_O)
                Oij[i][j] = Zij @ Wij[i][j]
        new_bar = np.empty_like(Wbar)
        for j in range(C):
            new_bar[csl[j]] = (W[csl[j]] + sum(Wij[i][j] for i in range(R))) / (R + 1)
        Wbar = new_bar
        for i in range(R):
            gap = O[i] - sum(Oij[i])
            for j in range(C):
                Obar_ij[i][j] = Oij[i][j] + gap / (C + 1)
            Obar[i] = sum(Obar_ij[i])
        mu = mu + W - Wbar
        for i in range(R):
            for j in range(C):
                mu_ij[i][j] = mu_ij[i][j] + Wij[i][j] - Wbar[csl[j]]
            nu[i] = nu[i] + O[i] - Obar[i]

        trace.append({
            "Wbar": Wbar.copy(),
            "W": W.copy(),
            "mu": mu.copy(),
            "ranks": [
                {
                    "O": O[i].copy(),
                    "Obar": Obar[i].copy(),
                    "nu": nu[i].copy(),
                    "Delta": O[i] - sum(Oij[i]),
                    "Wp": np.vstack(Wij[i]),
                    "mup": np.vstack(mu_ij[i]),
                    "U": np.vstack([Z[i][j].T @ Oij[i][j] for j in range(C)]),
                }
                for i in range(R)
            ],
        })
    return trace


def consensus_admm_two_block(Z, Y, loss: str, lam: float, rho: float, iters: int) -> list[dict]:
    """Textbook two-agent consensus ADMM for the unsplit problem.

    Agent 1 holds ``(O, W)`` with the loss and regularizer, agent 2 holds
    ``(O2, W2)`` with the graph constraint ``O2 = Z W2``.  Both are driven
    to a common ``(Obar, Wbar)``::

        x_k   <- prox_{f_k / rho}(z - u_k)
        z     <- mean_k(x_k + u_k)
        u_k   <- u_k + x_k - z
    """
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(Z.shape[0], -1)
    n, s = Z.shape
    m = Y.shape[1]
    spec = LossSpec(loss)
    reg = RegularizerSpec("l2", lam)
    Q = Z.T @ Z + np.eye(s)
    zO, zW = np.zeros((n, m)), np.zeros((s, m))
    u1O, u1W = np.zeros((n, m)), np.zeros((s, m))
    u2O, u2W = np.zeros((n, m)), np.zeros((s, m))
    out = []
    for _ in range(iters):
        O1 = prox_loss_matrix(zO - u1O, Y, spec, 1.0 / (rho * n))
        W1 = prox_regularizer(zW - u1W, reg, lam / rho)
        W2 = np.linalg.solve(Q, (zW - u2W) + Z.T @ (zO - u2O))
        O2 = Z @ W2
        zO = 0.5 * ((O1 + u1O) + (O2 + u2O))
        zW = 0.5 * ((W1 + u1W) + (W2 + u2W))
        u1O, u1W = u1O + O1 - zO, u1W + W1 - zW
        u2O, u2W = u2O + O2 - zO, u2W + W2 - zW
        out.append({"O": O1, "W": W1, "Wp": W2, "Wbar": zW.copy(), "Obar": zO.copy()})
    return out
