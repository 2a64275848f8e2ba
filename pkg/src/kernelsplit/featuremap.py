"""Random Fourier features for the Gaussian kernel, generated block by block.

A :class:`TransformDescriptor` is the whole representation of the map:
bandwidth, column partition and a master seed.  The parameters of column
block ``j`` come from a Philox counter-based stream keyed by
``(seed, j)``, so any block can be regenerated at any time, in any
order, on any worker, with identical bits.

Block ``j`` of the feature matrix for rows ``X_i`` is

    Z_ij = sqrt(2 / s) * cos(X_i @ omega_j + b_j)

with ``omega_j ~ N(0, 1/sigma^2)`` of shape ``(d, s_j)`` and
``b_j ~ U[0, 2 pi)``.  Stacking the blocks gives ``z(x)`` with
``E[z(x) . z(y)] = exp(-||x - y||^2 / (2 sigma^2))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrixio import balanced_offsets

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class TransformDescriptor:
    sigma: float
    col_offsets: np.ndarray
    seed: int = 0
    kernel: str = "gaussian"

    def __post_init__(self):
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be a positive finite number")
        offs = np.asarray(self.col_offsets, dtype=np.int64)
        if offs.ndim != 1 or len(offs) < 2 or offs[0] != 0 or np.any(np.diff(offs) < 1):
            raise ValueError("column offsets must start at 0 and be strictly increasing")
        object.__setattr__(self, "col_offsets", offs)
        object.__setattr__(self, "seed", int(self.seed) & _SEED_MASK)
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def create(cls, s: int, C: int = 1, sigma: float = 1.0, seed: int = 0) -> "TransformDescriptor":
        return cls(sigma=sigma, col_offsets=balanced_offsets(s, C), seed=seed)

    @property
    def s(self) -> int:
        return int(self.col_offsets[-1])

    @property
    def C(self) -> int:
        return len(self.col_offsets) - 1

    def block_size(self, j: int) -> int:
        self._check_block(j)
        return int(self.col_offsets[j + 1] - self.col_offsets[j])

    def _check_block(self, j: int) -> None:
        if not 0 <= j < self.C:
            raise IndexError(f"column block {j} out of range [0, {self.C})")

    def __eq__(self, other):
        if not isinstance(other, TransformDescriptor):
            return NotImplemented
        return (
            self.sigma == other.sigma
            and self.seed == other.seed
            and self.kernel == other.kernel
            and np.array_equal(self.col_offsets, other.col_offsets)
        )

    __hash__ = None


@dataclass(frozen=True)
class BlockTransformParams:
    omega: np.ndarray  # (d, s_j), already divided by sigma
    offset: np.ndarray  # (s_j,)


def block_stream(desc: TransformDescriptor, j: int) -> np.random.Generator:
    """Fresh generator positioned at counter 0 of block ``j``'s stream."""
    desc._check_block(j)
    key = np.array([desc.seed, j], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def block_params(desc: TransformDescriptor, j: int, d: int) -> BlockTransformParams:
    """Draw ``(omega_j, b_j)``: ``d * s_j`` normals first, then ``s_j`` uniforms."""
    if d < 1:
        raise ValueError("input dimension must be >= 1")
    sj = desc.block_size(j)
    rng = block_stream(desc, j)
    omega = rng.standard_normal((d, sj)) / desc.sigma
    offset = rng.uniform(0.0, 2.0 * np.pi, size=sj)
    return BlockTransformParams(omega, offset)


def transform(desc: TransformDescriptor, Xi: np.ndarray, j: int,
              params: BlockTransformParams | None = None) -> np.ndarray:
    """Feature block ``Z_ij`` (``n_i x s_j``) for the rows ``Xi``."""
    Xi = np.asarray(Xi, dtype=np.float64)
    if Xi.ndim != 2:
        raise ValueError("Xi must be 2-D")
    if params is None:
        params = block_params(desc, j, Xi.shape[1])
    elif params.omega.shape[0] != Xi.shape[1]:
        raise ValueError(
            f"input has {Xi.shape[1]} columns, block parameters expect {params.omega.shape[0]}"
        )
    Z = Xi @ params.omega
    Z += params.offset
    np.cos(Z, out=Z)
    Z *= np.sqrt(2.0 / desc.s)
    return Z


def full_transform(desc: TransformDescriptor, X: np.ndarray) -> np.ndarray:
    """Materialize all of ``Z``; only for small problems and checks."""
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    params = [block_params(desc, j, d) for j in range(desc.C)]
    omega = np.concatenate([p.omega for p in params], axis=1)
    offset = np.concatenate([p.offset for p in params])
    return np.sqrt(2.0 / desc.s) * np.cos(X @ omega + offset)


def gaussian_kernel(X: np.ndarray, Y: np.ndarray, sigma: float) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Y * Y, axis=1)[None, :]
        - 2.0 * X @ Y.T
    )
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * sigma * sigma))


@dataclass
class ApproximationReport:
    max_abs_err: float
    rms_err: float
    pairs: int
    errors: np.ndarray = field(repr=False)


def approximation_report(desc: TransformDescriptor, X: np.ndarray, pairs: int,
                         seed: int = 0) -> ApproximationReport:
    """Compare ``z(x) . z(y)`` with the exact kernel over random row pairs.

    Pairs are sampled with replacement, so ``x == y`` pairs can occur and
    then contribute ``|z(x) . z(x) - 1|``.
    """
    if pairs < 1:
        raise ValueError("need at least one pair")
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    a = rng.integers(0, X.shape[0], size=pairs)
    b = rng.integers(0, X.shape[0], size=pairs)
    approx = np.zeros(pairs)
    for j in range(desc.C):
        p = block_params(desc, j, X.shape[1])
        approx += np.einsum("ij,ij->i", transform(desc, X[a], j, p), transform(desc, X[b], j, p))
    diff = X[a] - X[b]
    exact = np.exp(-np.sum(diff * diff, axis=1) / (2.0 * desc.sigma ** 2))
    err = approx - exact
    return ApproximationReport(
        max_abs_err=float(np.max(np.abs(err))),
        rms_err=float(np.sqrt(np.mean(err * err))),
        pairs=pairs,
        errors=err,
    )
