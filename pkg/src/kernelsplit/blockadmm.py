"""Block-splitting ADMM over an implicit random-feature matrix.

Each of the R row workers owns ``X_i, Y_i`` and regenerates the feature
blocks ``Z_ij`` on demand.  The per-block outputs ``O_ij`` and their
consensus copies are never stored.  A worker instead keeps

* ``U_j = Z_ij^T O_ij`` from the previous sweep, and
* ``Delta = O_i - sum_j O_ij``, which is updated as each block finishes,

so one sweep over the column blocks needs only O(n_i m) shared memory
plus per-thread scratch.

One outer iteration on worker ``i``::

    O      <- prox_{l_i / rho}(Obar - nu)
    Delta  <- O;  Obar <- C/(C+1) O;  G <- Dbar/(C+1) + nu
    for each column block j:
        Z    <- T[X_i, j];  Q_j cached on the first sweep
        W'_j <- Q_j (Wbar_j - mu'_j + U_j + Z^T G)
        O'   <- Z W'_j;  U_j <- Z^T O'
        Delta -= O';  Obar += O' / (C+1)            (ascending j)
    Dbar   <- Delta
    W      <- prox_{lam r / rho}(Wbar - mu)     (root only, in Wbar's storage)
    Wbar   <- (sum_i W'_i + W) / (R+1)          (reduce + broadcast)
    mu     <- mu + W - Wbar                                     (root only)
    mu'    <- mu' + W' - Wbar
    nu     <- nu + O - Obar

The ``Z^T nu`` inside ``G`` and the dual updates against the *new*
consensus are what make the iterates equal to the plain block-splitting
updates.  See ``oracle.reference_block_splitting``.  ``W`` only depends
on the previous ``Wbar`` and ``mu``, so forming it after the sweep gives
the same iterates while never holding ``W`` next to a full ``Wbar``.
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .comm import CommError, Communicator, InProcessGroup
from .featuremap import TransformDescriptor, block_params, transform
from .graphproj import DEFAULT_BLOCK_CAP, build_cache
from .matrixio import BlockLayout, LabelEncoding, as_dense, balanced_offsets, decode_labels
from .proxops import LossSpec, RegularizerSpec, loss_terms, prox_loss_matrix, prox_regularizer

PHASES = ("transform", "graph_projection_loop", "prox", "communication", "barrier", "prediction")


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, detail: str = ""):
        msg = (
            f"non-finite solver state at iteration {iteration}{': ' + detail if detail else ''}; "
            "try a different rho"
        )
        super().__init__(msg)
        self.iteration = iteration


@dataclass
class SolverConfig:
    """Solver hyper-parameters and problem split.

    ``C=None`` picks ``ceil(kappa * s / d)`` column blocks, raised as
    needed so no block exceeds ``block_cap`` features.
    """

    features: int = 256
    sigma: float = 1.0
    loss: str = "squared"
    lam: float = 1e-3
    rho: float = 1.0
    max_iter: int = 100
    R: int = 1
    C: int | None = None
    threads: int = 1
    seed: int = 0
    tol: float | None = None
    kappa: float = 1.0
    block_cap: int = DEFAULT_BLOCK_CAP
    objective_every: int = 1
    timeout: float = 60.0

    def __post_init__(self):
        LossSpec(self.loss)
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be positive and finite, got {self.rho}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.features < 1:
            raise ValueError("need at least one random feature")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.R < 1 or self.threads < 1:
            raise ValueError("R and threads must be >= 1")
        if self.C is not None and not 1 <= self.C <= self.features:
            raise ValueError(f"C must lie in [1, {self.features}]")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def column_blocks(self, d: int) -> int:
        if self.C is not None:
            return self.C
        C = math.ceil(self.kappa * self.features / d)
        C = max(C, math.ceil(self.features / self.block_cap))
        return int(min(max(C, 1), self.features))

    def descriptor(self, d: int) -> TransformDescriptor:
        return TransformDescriptor(
            sigma=self.sigma,
            col_offsets=balanced_offsets(self.features, self.column_blocks(d)),
            seed=self.seed,
        )

    def memory_estimate(self, n: int, d: int, m: int, N: int | None = None) -> "MemoryEstimate":
        return memory_estimate(n, d, m, self.features, self.R, self.column_blocks(d),
                               self.threads, N)


@dataclass
class Model:
    weights: np.ndarray
    transform: TransformDescriptor
    encoding: LabelEncoding
    loss: str
    d: int

    def scores(self, X) -> np.ndarray:
        return predict_scores(self, X)

    def predict(self, X) -> list:
        return decode_labels(self.scores(X), self.encoding)


@dataclass
class IterationReport:
    iter: int
    objective: float
    primal_residual_o: float
    primal_residual_w: float
    phases: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))

    def to_line(self) -> str:
        parts = [
            f"iter={self.iter}",
            f"objective={self.objective!r}",
            f"primal_residual_o={self.primal_residual_o!r}",
            f"primal_residual_w={self.primal_residual_w!r}",
        ]
        parts += [f"time_{k}={self.phases.get(k, 0.0):.6f}" for k in PHASES]
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "IterationReport":
        kv = dict(tok.split("=", 1) for tok in line.split())
        return cls(
            iter=int(kv["iter"]),
            objective=float(kv["objective"]),
            primal_residual_o=float(kv["primal_residual_o"]),
            primal_residual_w=float(kv["primal_residual_w"]),
            phases={k: float(kv[f"time_{k}"]) for k in PHASES},
        )


class AllocationMeter:
    """Counts float64 entries held by a worker; keeps the high-water mark."""

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def add(self, count: int) -> None:
        with self._lock:
            self.current += int(count)
            self.peak = max(self.peak, self.current)

    def release(self, count: int) -> None:
        with self._lock:
            self.current -= int(count)


# --------------------------------------------------------------------------
# worker


class Worker:
    """State and update rule for one row block (one rank)."""

    def __init__(self, config: SolverConfig, Xi, Yi, comm: Communicator, n_total: int,
                 desc: TransformDescriptor | None = None):
        Xi = as_dense(Xi, "X_i")
        Yi = as_dense(Yi, "Y_i")
        if Xi.shape[0] != Yi.shape[0]:
            raise ValueError(f"X_i has {Xi.shape[0]} rows but Y_i has {Yi.shape[0]}")
        if Xi.shape[0] < 1:
            raise ValueError("a worker needs at least one row")
        if config.loss == "hinge" and not np.all(np.abs(Yi) == 1.0):
            raise ValueError("hinge loss needs targets in {-1, +1}")
        if comm.size != config.R:
            raise ValueError(f"communicator has {comm.size} ranks, config says R={config.R}")
        self.config = config
        self.comm = comm
        self.Xi, self.Yi = Xi, Yi
        self.n_total = int(n_total)
        self.desc = desc if desc is not None else config.descriptor(Xi.shape[1])
        self.loss = LossSpec(config.loss)
        self.reg = RegularizerSpec("l2", config.lam)
        self.meter = AllocationMeter()
        self.iteration = 0

        n_i, m = Yi.shape
        s, C = self.desc.s, self.desc.C
        self.meter.add(Xi.size + Yi.size)
        zeros_n = lambda: self._alloc((n_i, m))
        zeros_s = lambda: self._alloc((s, m))
        self.O, self.Obar, self.nu, self.Dbar = zeros_n(), zeros_n(), zeros_n(), zeros_n()
        self.Wbar, self.Wp, self.mup, self.U = zeros_s(), zeros_s(), zeros_s(), zeros_s()
        self.mu = zeros_s() if comm.is_root else None
        # root-only W borrows Wbar's storage from the end of the sweep until
        # the dual update, so it is never held alongside a full Wbar
        self.W = None
        self.caches = [None] * C
        self.threads = min(config.threads, C)
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def _alloc(self, shape) -> np.ndarray:
        self.meter.add(int(np.prod(shape)))
        return np.zeros(shape)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # helpers ----------------------------------------------------------------

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def _waves(self):
        C = self.desc.C
        for start in range(0, C, self.threads):
            yield range(start, min(start + self.threads, C))

    def _block(self, j: int, timing: dict) -> np.ndarray:
        t0 = time.perf_counter()
        params = block_params(self.desc, j, self.Xi.shape[1])
        Z = transform(self.desc, self.Xi, j, params)
        timing[j] = time.perf_counter() - t0
        self.meter.add(Z.size)
        if self.caches[j] is None:
            self.caches[j] = build_cache(Z, j)
            self.meter.add(self.caches[j].factor.size)
        rows = self.desc.col_offsets[j], self.desc.col_offsets[j + 1]
        sl = slice(int(rows[0]), int(rows[1]))
        rhs = Z.T @ self._G
        self.meter.add(rhs.size)
        rhs += self.Wbar[sl]
        rhs -= self.mup[sl]
        rhs += self.U[sl]
        self.Wp[sl] = self.caches[j].solve(rhs)
        Op = Z @ self.Wp[sl]
        self.meter.add(Op.size)
        self.U[sl] = Z.T @ Op
        self.meter.release(Z.size + rhs.size)
        return Op

    # one outer iteration ----------------------------------------------------

    def step(self) -> IterationReport:
        cfg, comm = self.config, self.comm
        C, R = self.desc.C, comm.size
        self.iteration += 1
        it = self.iteration
        phases = dict.fromkeys(PHASES, 0.0)

        t0 = time.perf_counter()
        self.O = prox_loss_matrix(self.Obar - self.nu, self.Yi, self.loss,
                                  1.0 / (cfg.rho * self.n_total))
        phases["prox"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        Delta = self.O.copy()
        self.meter.add(Delta.size)
        self.Obar = (C / (C + 1.0)) * self.O
        # Dbar is not read again before being replaced, so it holds G
        self.Dbar /= C + 1.0
        self.Dbar += self.nu
        self._G = self.Dbar
        transform_time: dict = {}
        for wave in self._waves():
            outs = self._map(lambda j: self._block(j, transform_time), wave)
            for Op in outs:
                Delta -= Op
                Op /= C + 1.0
                self.Obar += Op
                self.meter.release(Op.size)
        self._G = None
        self.meter.release(self.Dbar.size)
        self.Dbar = Delta
        phases["graph_projection_loop"] = time.perf_counter() - t0
        phases["transform"] = sum(transform_time.values())

        if comm.is_root:
            # W only depends on the Wbar and mu the sweep started from, so it
            # is formed now, overwriting Wbar, rather than held through the sweep
            t0 = time.perf_counter()
            W = self.Wbar
            np.subtract(W, self.mu, out=W)
            self.W = prox_regularizer(W, self.reg, cfg.lam / cfg.rho, out=W)
            phases["prox"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        comm.barrier()
        phases["barrier"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        total = comm.reduce_sum(self.Wp, root=0)
        if comm.is_root:
            # total becomes the new Wbar; the old Wbar storage now holds W
            self.meter.add(total.size)
            total /= R + 1.0
            total += self.W / (R + 1.0)
            new_bar = total
        else:
            new_bar = self.Wbar
        self.Wbar = comm.broadcast(new_bar, root=0)
        phases["communication"] = time.perf_counter() - t0
        if not np.all(np.isfinite(self.Wbar)):
            raise DivergenceError(it, "consensus weights")

        if comm.is_root:
            self.mu += self.W - self.Wbar
            self.meter.release(self.W.size)
            self.W = None
        self.mup += self.Wp - self.Wbar
        self.nu += self.O - self.Obar

        stats = np.zeros((1, 3))
        want_obj = cfg.objective_every > 0 and it % cfg.objective_every == 0
        # overflow here is reported as divergence just below
        with np.errstate(over="ignore", invalid="ignore"):
            if want_obj:
                t0 = time.perf_counter()
                stats[0, 0] = self.loss.value(self.Yi, self.local_scores(self.Wbar))
                phases["prediction"] = time.perf_counter() - t0
            stats[0, 1] = float(np.sum((self.O - self.Obar) ** 2))
            stats[0, 2] = float(np.sum((self.Wp - self.Wbar) ** 2))
        t0 = time.perf_counter()
        total = comm.reduce_sum(stats, root=0)
        stats = comm.broadcast(total if comm.is_root else stats, root=0)
        phases["communication"] += time.perf_counter() - t0
        if not np.all(np.isfinite(stats)):
            # identical on every rank, so all ranks stop here together
            raise DivergenceError(it, "objective or residuals overflowed")

        objective = float("nan")
        if want_obj:
            with np.errstate(over="ignore"):
                objective = float(stats[0, 0]) / self.n_total + self.reg.value(self.Wbar)
            if not math.isfinite(objective):
                raise DivergenceError(it, "objective overflowed")
        report = IterationReport(it, objective, math.sqrt(float(stats[0, 1])), math.sqrt(float(stats[0, 2])), phases)
        if not all(np.all(np.isfinite(a)) for a in (self.O, self.nu, self.Wp, self.mup)):
            raise DivergenceError(it, f"rank {comm.rank} local state")
        return report

    def converged(self, report: IterationReport) -> bool:
        tol = self.config.tol
        if tol is None:
            return False
        bound = tol * (1.0 + float(np.linalg.norm(self.Wbar)))
        return report.primal_residual_o < bound and report.primal_residual_w < bound

    def local_scores(self, Wbar: np.ndarray) -> np.ndarray:
        """``X_i``'s rows mapped through ``Z_i Wbar``, accumulated in ascending j."""
        d = self.Xi.shape[1]
        scores = np.zeros((self.Xi.shape[0], Wbar.shape[1]))
        self.meter.add(scores.size)
        offs = self.desc.col_offsets

        def part(j):
            Z = transform(self.desc, self.Xi, j, block_params(self.desc, j, d))
            self.meter.add(Z.size)
            out = Z @ Wbar[offs[j]:offs[j + 1]]
            self.meter.add(out.size)
            self.meter.release(Z.size)
            return out

        for wave in self._waves():
            for p in self._map(part, wave):
                scores += p
                self.meter.release(p.size)
        self.meter.release(scores.size)
        return scores


def init_worker(config: SolverConfig, Xi, Yi, comm: Communicator, n_total: int | None = None,
                desc: TransformDescriptor | None = None) -> Worker:
    """Zero-initialized worker state; factor caches fill during the first sweep."""
    if n_total is None:
        if comm.size != 1:
            raise ValueError("n_total is required when R > 1")
        n_total = np.asarray(Xi).shape[0]
    return Worker(config, Xi, Yi, comm, n_total, desc)


def iterate(worker: Worker) -> IterationReport:
    return worker.step()


def run_worker(config: SolverConfig, Xi, Yi, comm: Communicator, n_total: int,
               callback=None) -> tuple[np.ndarray, list, Worker]:
    """Drive one rank to completion; returns final consensus, reports, worker."""
    worker = init_worker(config, Xi, Yi, comm, n_total)
    reports = []
    try:
        for _ in range(config.max_iter):
            rep = worker.step()
            reports.append(rep)
            if callback is not None:
                callback(comm.rank, worker, rep)
            if worker.converged(rep):
                break
    finally:
        worker.close()
    return worker.Wbar, reports, worker


# --------------------------------------------------------------------------
# driver


def _default_encoding(Y: np.ndarray) -> LabelEncoding:
    if Y.shape[1] == 1:
        return LabelEncoding((), "regression")
    return LabelEncoding(tuple(range(Y.shape[1])), "one-vs-all")


@dataclass
class SolveResult:
    model: Model
    reports: list
    workers: list

    def __iter__(self):
        # allows ``model, reports = solve(...)``
        return iter((self.model, self.reports))


def solve(config: SolverConfig, X, Y, encoding: LabelEncoding | None = None,
          callback=None) -> SolveResult:
    """Train with R thread-backed ranks in this process.

    ``callback(rank, worker, report)`` runs on every rank after every
    iteration, from that rank's thread.
    """
    X = as_dense(X, "X")
    Y = as_dense(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    n, d = X.shape
    encoding = encoding or _default_encoding(Y)
    desc = config.descriptor(d)
    layout = BlockLayout(balanced_offsets(n, config.R), desc.col_offsets)

    if config.max_iter == 0:
        model = Model(np.zeros((desc.s, Y.shape[1])), desc, encoding, config.loss, d)
        return SolveResult(model, [], [])

    group = InProcessGroup(config.R, config.timeout)
    results: list = [None] * config.R
    errors: list = [None] * config.R

    def run(rank):
        sl = layout.row_slice(rank)
        try:
            results[rank] = run_worker(config, X[sl], Y[sl], group.communicator(rank), n, callback)
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors[rank] = exc
            group.abort(f"rank {rank} failed: {exc}")

    if config.R == 1:
        run(0)
    else:
        threads = [threading.Thread(target=run, args=(r,), daemon=True) for r in range(config.R)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()

    failures = [e for e in errors if e is not None]
    if failures:
        # prefer the root cause over the aborts it triggered on other ranks
        primary = [e for e in failures if not isinstance(e, CommError)]
        raise (primary or failures)[0]

    Wbar, reports, _ = results[0]
    model = Model(Wbar.copy(), desc, encoding, config.loss, d)
    return SolveResult(model, reports, [r[2] for r in results])


# --------------------------------------------------------------------------
# prediction and objective


def predict_scores(model: Model, X) -> np.ndarray:
    """``Z W`` block by block, summed in ascending column-block order."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if X.shape[1] != model.d:
        raise ValueError(f"model expects {model.d} input columns, got {X.shape[1]}")
    desc = model.transform
    scores = np.zeros((X.shape[0], model.weights.shape[1]))
    if X.shape[0] == 0:
        return scores
    offs = desc.col_offsets
    for j in range(desc.C):
        scores += transform(desc, X, j) @ model.weights[offs[j]:offs[j + 1]]
    return scores


def objective(weights: np.ndarray, X, Y, desc: TransformDescriptor, loss: str, lam: float) -> float:
    """``(1/n) sum V(y, W^T z(x)) + lam ||W||_F^2`` evaluated blockwise."""
    Y = np.asarray(Y, dtype=np.float64)
    d = np.asarray(X).shape[1]
    model = Model(np.asarray(weights, dtype=np.float64), desc, _default_encoding(Y), loss, d)
    O = predict_scores(model, X)
    return float(np.sum(loss_terms(loss, Y, O))) / Y.shape[0] + lam * float(np.sum(np.square(weights)))


# --------------------------------------------------------------------------
# memory accounting


@dataclass(frozen=True)
class MemoryEstimate:
    floats_per_process: float
    floats_per_node: float

    @property
    def bytes_per_process(self) -> float:
        return 8.0 * self.floats_per_process

    @property
    def bytes_per_node(self) -> float:
        return 8.0 * self.floats_per_node

    @property
    def gib_per_node(self) -> float:
        return self.bytes_per_node / 2**30

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(bytes_per_process=self.bytes_per_process, bytes_per_node=self.bytes_per_node)
        return d


def memory_estimate(n: int, d: int, m: int, s: int, R: int, C: int, t: int = 1,
                    N: int | None = None) -> MemoryEstimate:
    """Floats held per process and per node, assuming even splits.

    Terms: O, Obar, nu, Dbar (4nm/R); Wbar, W', mu', mu, U (5sm); the
    local data (nd/R + nm/R); one Z block per thread (tns/(RC)); per
    thread A and O' plus the shared Delta (tsm/C + tnm/R + nm/R); and
    the factor caches (s^2/C).  ``N`` nodes host the ``R`` processes.
    """
    N = R if N is None else N
    per_proc = (
        4 * n * m / R
        + 5 * s * m
        + n * d / R + n * m / R
        + t * n * s / (R * C)
        + t * s * m / C + n * m * t / R + n * m / R
        + s * s / C
    )
    return MemoryEstimate(per_proc, per_proc * R / N)
