"""Collectives among the R row workers: broadcast, reduce-to-root, barrier.

Two backends share one contract:

* :class:`InProcessGroup` runs all ranks as threads of one process and
  meets at a shared rendezvous.
* :class:`SocketCommunicator` runs one rank per OS process, star-wired
  over TCP through rank 0.

Reductions always gather to the root and add contributions in ascending
rank order, so both backends produce the same bits.

Socket frames are ``<payload_len:u64><tag:u32><source:u32><payload>``,
all little endian, with the payload a raw float64 array.
"""

from __future__ import annotations

import socket
import struct
import threading
import time

import numpy as np

DEFAULT_TIMEOUT = 60.0


class CommError(RuntimeError):
    """A collective could not complete (disconnect, protocol error, abort)."""

    def __init__(self, message: str, ranks=()):
        super().__init__(message)
        self.ranks = tuple(ranks)


class CommTimeout(CommError):
    pass


class Communicator:
    """Shared bookkeeping; subclasses implement the transport."""

    def __init__(self, rank: int, size: int, timeout: float = DEFAULT_TIMEOUT):
        if size < 1 or not 0 <= rank < size:
            raise ValueError(f"invalid rank {rank} for size {size}")
        self.rank = rank
        self.size = size
        self.timeout = timeout
        self.bytes_sent = 0
        self.bytes_received = 0

    @property
    def is_root(self) -> bool:
        return self.rank == 0

    def _check_root(self, root: int) -> None:
        if not 0 <= root < self.size:
            raise ValueError(f"root {root} out of range [0, {self.size})")

    def broadcast(self, buf: np.ndarray, root: int = 0) -> np.ndarray:
        raise NotImplementedError

    def reduce_sum(self, buf: np.ndarray, root: int = 0) -> np.ndarray | None:
        """Entrywise sum over ranks, delivered at ``root`` (``None`` elsewhere)."""
        raise NotImplementedError

    def barrier(self) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def ordered_sum(parts) -> np.ndarray:
    """Sum in list order; the single association order every backend uses."""
    parts = list(parts)
    total = np.array(parts[0], dtype=np.float64, copy=True)
    for p in parts[1:]:
        total += p
    return total


# --------------------------------------------------------------------------
# in-process backend


class _Rendezvous:
    def __init__(self, size: int):
        self.size = size
        self._cond = threading.Condition()
        self._arrived: set[int] = set()
        self._generation = 0
        self._broken: str | None = None

    def wait(self, rank: int, timeout: float) -> None:
        with self._cond:
            if self._broken:
                raise CommError(self._broken)
            gen = self._generation
            self._arrived.add(rank)
            if len(self._arrived) == self.size:
                self._arrived = set()
                self._generation += 1
                self._cond.notify_all()
                return
            ok = self._cond.wait_for(
                lambda: self._generation != gen or self._broken is not None, timeout
            )
            if self._generation != gen:
                return
            if not ok:
                missing = sorted(set(range(self.size)) - self._arrived)
                self._broken = f"rank(s) {missing} did not reach the collective"
                self._cond.notify_all()
                raise CommTimeout(
                    f"timed out after {timeout:g}s waiting for rank(s) {missing}", missing
                )
            raise CommError(self._broken)

    def abort(self, reason: str) -> None:
        with self._cond:
            if not self._broken:
                self._broken = reason
            self._cond.notify_all()


class InProcessGroup:
    """Shared state for ``size`` thread-backed ranks."""

    def __init__(self, size: int, timeout: float = DEFAULT_TIMEOUT):
        self.size = size
        self.timeout = timeout
        self._rdv = _Rendezvous(size)
        self._slots: list = [None] * size

    def communicator(self, rank: int) -> "InProcessCommunicator":
        return InProcessCommunicator(self, rank)

    def abort(self, reason: str = "group aborted") -> None:
        self._rdv.abort(reason)


class InProcessCommunicator(Communicator):
    def __init__(self, group: InProcessGroup, rank: int):
        super().__init__(rank, group.size, group.timeout)
        self._group = group

    def _meet(self):
        self._group._rdv.wait(self.rank, self.timeout)

    def broadcast(self, buf, root=0):
        self._check_root(root)
        buf = np.asarray(buf, dtype=np.float64)
        if self.size == 1:
            return buf.copy()
        slots = self._group._slots
        if self.rank == root:
            slots[root] = buf.copy()
        self._meet()
        out = slots[root].copy()
        if out.shape != buf.shape:
            raise CommError(f"broadcast shape mismatch on rank {self.rank}: {buf.shape} vs {out.shape}")
        self._meet()
        if self.rank == root:
            slots[root] = None
            self.bytes_sent += buf.nbytes * (self.size - 1)
        else:
            self.bytes_received += buf.nbytes
        return out

    def reduce_sum(self, buf, root=0):
        self._check_root(root)
        buf = np.asarray(buf, dtype=np.float64)
        if self.size == 1:
            return buf.copy()
        slots = self._group._slots
        slots[self.rank] = buf.copy()
        self._meet()
        result = None
        if self.rank == root:
            parts = list(slots)
            if any(p.shape != buf.shape for p in parts):
                raise CommError("reduce shape mismatch across ranks")
            result = ordered_sum(parts)
            self.bytes_received += buf.nbytes * (self.size - 1)
        else:
            self.bytes_sent += buf.nbytes
        self._meet()
        slots[self.rank] = None
        return result

    def barrier(self):
        if self.size > 1:
            self._meet()


# --------------------------------------------------------------------------
# socket backend

FRAME = struct.Struct("<QII")
TAG_HELLO = 1
TAG_BCAST = 2
TAG_REDUCE = 3
TAG_BARRIER = 4
TAG_RELEASE = 5


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"rendezvous address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def encode_frame(tag: int, source: int, payload: np.ndarray | None = None) -> bytes:
    body = b"" if payload is None else np.ascontiguousarray(payload, dtype="<f8").tobytes()
    return FRAME.pack(len(body), tag, source) + body


class SocketCommunicator(Communicator):
    """One rank of a TCP star rooted at rank 0.

    Rank 0 binds ``address`` and accepts ``size - 1`` peers; every other
    rank connects (retrying until ``timeout``) and introduces itself with
    a hello frame.
    """

    def __init__(self, rank: int, size: int, address: str, timeout: float = DEFAULT_TIMEOUT):
        super().__init__(rank, size, timeout)
        self.address = parse_address(address)
        self._peers: dict[int, socket.socket] = {}
        self._listener = None
        if size > 1:
            if rank == 0:
                self._accept_all()
            else:
                self._connect()

    # connection setup ------------------------------------------------------

    def _accept_all(self):
        lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            lst.bind(self.address)
        except OSError as exc:
            lst.close()
            raise CommError(f"cannot bind rendezvous {self.address[0]}:{self.address[1]}: {exc}") from exc
        lst.listen(self.size)
        lst.settimeout(self.timeout)
        self._listener = lst
        deadline = time.monotonic() + self.timeout
        while len(self._peers) < self.size - 1:
            lst.settimeout(max(deadline - time.monotonic(), 1e-3))
            try:
                conn, _ = lst.accept()
            except socket.timeout:
                missing = sorted(set(range(1, self.size)) - set(self._peers))
                self.close()
                raise CommTimeout(f"rank(s) {missing} never connected", missing) from None
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn.settimeout(self.timeout)
            tag, src, _ = self._read_frame(conn, None)
            if tag != TAG_HELLO or not 0 < src < self.size or src in self._peers:
                conn.close()
                self.close()
                raise CommError(f"bad hello from a peer (tag={tag}, rank={src})")
            self._peers[src] = conn

    def _connect(self):
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                conn = socket.create_connection(self.address, timeout=self.timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise CommTimeout("could not reach root rank 0", [0]) from None
                time.sleep(0.05)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.settimeout(self.timeout)
        conn.sendall(encode_frame(TAG_HELLO, self.rank))
        self._peers[0] = conn

    # framing -----------------------------------------------------------------

    def _recv_exact(self, conn, nbytes: int, peer) -> bytes:
        buf = bytearray(nbytes)
        view = memoryview(buf)
        got = 0
        while got < nbytes:
            try:
                k = conn.recv_into(view[got:])
            except socket.timeout:
                raise CommTimeout(
                    f"rank {self.rank} timed out after {self.timeout:g}s waiting for rank {peer}",
                    [peer] if peer is not None else [],
                ) from None
            except OSError as exc:
                raise CommError(f"connection to rank {peer} failed: {exc}", [peer]) from exc
            if k == 0:
                raise CommError(f"rank {peer} disconnected", [peer] if peer is not None else [])
            got += k
        return bytes(buf)

    def _read_frame(self, conn, peer):
        length, tag, src = FRAME.unpack(self._recv_exact(conn, FRAME.size, peer))
        body = self._recv_exact(conn, length, peer) if length else b""
        self.bytes_received += FRAME.size + length
        return tag, src, body

    def _send(self, dest: int, tag: int, payload=None):
        frame = encode_frame(tag, self.rank, payload)
        try:
            self._peers[dest].sendall(frame)
        except OSError as exc:
            raise CommError(f"sending to rank {dest} failed: {exc}", [dest]) from exc
        self.bytes_sent += len(frame)

    def _expect(self, src: int, tag: int, like: np.ndarray | None = None):
        got_tag, got_src, body = self._read_frame(self._peers[src], src)
        if got_tag != tag or got_src != src:
            raise CommError(
                f"rank {self.rank} expected tag {tag} from rank {src}, "
                f"got tag {got_tag} from rank {got_src} (collectives out of order)",
                [src],
            )
        if like is None:
            return None
        if len(body) != like.nbytes:
            raise CommError(f"payload size mismatch from rank {src}: {len(body)} vs {like.nbytes}", [src])
        return np.frombuffer(body, dtype="<f8").reshape(like.shape).astype(np.float64)

    # collectives -------------------------------------------------------------

    def broadcast(self, buf, root=0):
        self._check_root(root)
        buf = np.asarray(buf, dtype=np.float64)
        if self.size == 1:
            return buf.copy()
        if root != 0:
            # relay through the hub
            if self.rank == root:
                self._send(0, TAG_BCAST, buf)
            elif self.rank == 0:
                buf = self._expect(root, TAG_BCAST, buf)
        if self.rank == 0:
            for r in range(1, self.size):
                if r != root:
                    self._send(r, TAG_BCAST, buf)
            return buf.copy()
        if self.rank == root:
            return buf.copy()
        return self._expect(0, TAG_BCAST, buf)

    def reduce_sum(self, buf, root=0):
        self._check_root(root)
        buf = np.asarray(buf, dtype=np.float64)
        if self.size == 1:
            return buf.copy()
        if self.rank != 0:
            self._send(0, TAG_REDUCE, buf)
            total = None
        else:
            parts = [buf] + [self._expect(r, TAG_REDUCE, buf) for r in range(1, self.size)]
            total = ordered_sum(parts)
        if root == 0:
            return total
        if self.rank == 0:
            self._send(root, TAG_REDUCE, total)
            return None
        if self.rank == root:
            return self._expect(0, TAG_REDUCE, buf)
        return None

    def barrier(self):
        if self.size == 1:
            return
        if self.rank == 0:
            for r in range(1, self.size):
                self._expect(r, TAG_BARRIER)
            for r in range(1, self.size):
                self._send(r, TAG_RELEASE)
        else:
            self._send(0, TAG_BARRIER)
            self._expect(0, TAG_RELEASE)

    def close(self):
        for conn in self._peers.values():
            try:
                conn.close()
            except OSError:
                pass
        self._peers.clear()
        if self._listener is not None:
            self._listener.close()
            self._listener = None
