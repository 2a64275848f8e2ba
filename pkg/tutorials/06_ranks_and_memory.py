"""Run ranks over TCP in threads, check consensus, and size a deployment."""

import socket
import threading

import numpy as np

from kernelsplit import SolverConfig, memory_estimate, solve
from kernelsplit.blockadmm import run_worker
from kernelsplit.comm import SocketCommunicator
from kernelsplit.matrixio import balanced_offsets

rng = np.random.default_rng(1)
X, Y = rng.normal(size=(240, 4)), rng.normal(size=(240, 1))
cfg = SolverConfig(features=48, R=3, C=4, threads=2, max_iter=30)

with socket.socket() as probe:
    probe.bind(("127.0.0.1", 0))
    addr = f"127.0.0.1:{probe.getsockname()[1]}"
rows = balanced_offsets(240, cfg.R)
results = [None] * cfg.R


def rank(r):
    with SocketCommunicator(r, cfg.R, addr, timeout=30.0) as comm:
        results[r] = run_worker(cfg, X[rows[r]:rows[r + 1]], Y[rows[r]:rows[r + 1]], comm, 240)


threads = [threading.Thread(target=rank, args=(r,)) for r in range(cfg.R)]
for t in threads:
    t.start()
for t in threads:
    t.join()

socket_obj = results[0][1][-1].objective
local_obj = solve(cfg, X, Y).reports[-1].objective
print(f"socket objective {socket_obj!r}\nin-process        {local_obj!r}")

for label, args in (("n=250k on 32 nodes, t=64", (250_000, 784, 10, 100_000, 32, 200, 64, 32)),
                    ("n=200k on 1 node, t=6", (200_000, 784, 10, 100_000, 1, 200, 6, 1))):
    print(f"{label}: {memory_estimate(*args).gib_per_node:.2f} GiB per node")
