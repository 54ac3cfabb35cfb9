"""Deterministic in-process message-passing runtime.

Each simulated rank runs on its own thread.  In deterministic mode a baton
scheduler lets exactly one rank run at a time, handing control to the lowest
runnable rank whenever the active rank blocks; with rendezvous blocking sends
and eager nonblocking sends this makes every run (including deadlocks)
reproducible.  Concurrent mode drops the baton and lets rank threads run
freely over the same thread-safe mailboxes.

Point-to-point matching is keyed by (src, dst, tag) with FIFO order per key.
Payload contents are never simulated, only byte counts.

Deterministic mode keeps a per-rank virtual clock (advanced by fixed costs
per operation, per received byte, and per compute unit) so that profiles,
including region times, are bit-identical across runs.  Concurrent mode uses
the real monotonic clock.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .model import ALL_RANKS, MessageEvent, RegionCommStats, RegionPath
from .profiler import RegionTracker, finalize

# Virtual-clock cost model (deterministic mode only).
OP_COST = 1e-6          # any runtime call
BYTE_COST = 1e-9        # per byte charged at receive completion
COMPUTE_UNIT_COST = 5e-9  # per compute-stub unit

DEFAULT_RANK_CAP = 512


class SimError(RuntimeError):
    """Base class for runtime failures."""


class DeadlockError(SimError):
    """All unfinished ranks blocked with no way to make progress."""


class CollectiveMismatchError(SimError):
    """Ranks disagreed on the next collective call."""


class TruncationError(SimError):
    """A receive was matched with a message larger than its capacity."""


class RequestStateError(SimError):
    """Operation applied to a request in the wrong state."""


class KernelError(SimError):
    """A rank program raised; wraps the original exception."""

    def __init__(self, rank: int, cause: BaseException):
        super().__init__(f"rank {rank} failed: {cause!r}")
        self.rank = rank
        self.cause = cause


class _Aborted(BaseException):
    """Internal signal used to unwind worker threads after an abort."""


# Request states
INACTIVE = "inactive"
ACTIVE = "active"
COMPLETE = "complete"


class Request:
    """Handle for a nonblocking or persistent operation."""

    __slots__ = ("rid", "kind", "peer", "tag", "nbytes", "persistent", "op",
                 "state", "recv_bytes", "completion_time", "error", "waiter")

    def __init__(self, rid: int, kind: str, peer: int, tag: int, nbytes: int,
                 persistent: bool, op: str, state: str):
        self.rid = rid
        self.kind = kind  # "send" | "recv"
        self.peer = peer
        self.tag = tag
        self.nbytes = nbytes  # declared bytes for sends, capacity for recvs
        self.persistent = persistent
        self.op = op
        self.state = state
        self.recv_bytes = 0
        self.completion_time = 0.0
        self.error: SimError | None = None
        self.waiter: int | None = None

    def describe(self) -> str:
        direction = "dst" if self.kind == "send" else "src"
        return f"{self.op}({direction}={self.peer}, tag={self.tag})"


class _Msg:
    __slots__ = ("src", "tag", "nbytes", "send_time", "rendezvous", "matched", "match_time")

    def __init__(self, src: int, tag: int, nbytes: int, send_time: float, rendezvous: bool):
        self.src = src
        self.tag = tag
        self.nbytes = nbytes
        self.send_time = send_time
        self.rendezvous = rendezvous
        self.matched = False
        self.match_time = 0.0


@dataclass
class RunOutcome:
    """Result of one completed run: exit statuses plus merged profiler output."""

    nranks: int
    statuses: list[str]
    stats: list[RegionCommStats]
    elapsed_sec: float
    event_count: int
    events: list[MessageEvent] | None = None


class _Runtime:
    def __init__(self, nranks: int, program: Callable[[int, "Communicator"], None],
                 deterministic: bool, trace_path: str | Path | None,
                 collect_events: bool, allow_self: bool):
        self.nranks = nranks
        self.program = program
        self.deterministic = deterministic
        self.allow_self = allow_self

        self.mu = threading.RLock()
        self.rank_cv = [threading.Condition(self.mu) for _ in range(nranks)]
        self.main_cv = threading.Condition(self.mu)
        self.current = 0 if deterministic else -1
        self.runnable: set[int] = set(range(1, nranks)) if deterministic else set()
        self.blocked: dict[int, Callable[[], str]] = {}
        self.finished: set[int] = set()
        self.abort_exc: BaseException | None = None

        self.trackers = [RegionTracker(r) for r in range(nranks)]
        self.clocks = [0.0] * nranks
        self.seqs = [0] * nranks
        self.next_rid = [0] * nranks
        self.wait_count = [0] * nranks
        self.wall0 = time.perf_counter()

        # (src, dst, tag) -> FIFO of unmatched messages / posted receives.
        self.boxes: dict[tuple[int, int, int], deque[_Msg]] = {}
        self.posted: dict[tuple[int, int, int], deque[Request]] = {}

        self.coll_round = 0
        self.coll_sig: tuple[str, Any, int] | None = None
        self.coll_first = -1
        self.coll_arrived: set[int] = set()
        self.coll_waiters: set[int] = set()

        self.event_count = 0
        self.events: list[MessageEvent] | None = [] if collect_events else None
        self.trace_file = open(trace_path, "w", encoding="utf-8") if trace_path else None
        self._region_json: dict[RegionPath, str] = {}

    # -- scheduling ---------------------------------------------------------

    def _check_abort(self) -> None:
        if self.abort_exc is not None:
            raise _Aborted()

    def _abort(self, exc: BaseException) -> None:
        if self.abort_exc is None:
            self.abort_exc = exc
        for cv in self.rank_cv:
            cv.notify_all()
        self.main_cv.notify_all()

    def _deadlock(self) -> None:
        lines = [f"  rank {r}: {why()}" for r, why in sorted(self.blocked.items())]
        self._abort(DeadlockError(
            "deadlock: all unfinished ranks are blocked and no message is in flight\n"
            + "\n".join(lines)))

    def _schedule_next(self) -> None:
        # Caller holds mu and is relinquishing control of `current`.
        if self.runnable:
            nxt = min(self.runnable)
            self.runnable.remove(nxt)
            self.current = nxt
            self.rank_cv[nxt].notify()
        elif len(self.finished) == self.nranks:
            self.current = -1
            self.main_cv.notify_all()
        else:
            self._deadlock()

    def _wake(self, rank: int) -> None:
        if self.deterministic:
            if rank in self.blocked:
                del self.blocked[rank]
                self.runnable.add(rank)
        else:
            # Clear the blocked entry here: the wakee only reacquires the lock
            # later, and a stale entry would let another blocking rank see
            # "all blocked" and declare a spurious deadlock.
            self.blocked.pop(rank, None)
            self.rank_cv[rank].notify()

    def _wait(self, rank: int, pred: Callable[[], bool], reason: Callable[[], str]) -> None:
        # Caller holds mu.
        cv = self.rank_cv[rank]
        if self.deterministic:
            while not pred():
                self._check_abort()
                self.blocked[rank] = reason
                self._schedule_next()
                while self.current != rank:
                    self._check_abort()
                    cv.wait()
        else:
            while not pred():
                self._check_abort()
                self.blocked[rank] = reason
                if len(self.blocked) + len(self.finished) == self.nranks:
                    self._deadlock()
                    raise _Aborted()
                cv.wait()
                self.blocked.pop(rank, None)
                self._check_abort()

    def _worker(self, rank: int) -> None:
        try:
            with self.mu:
                if self.deterministic:
                    cv = self.rank_cv[rank]
                    while self.current != rank:
                        self._check_abort()
                        cv.wait()
            self.program(rank, Communicator(self, rank))
            with self.mu:
                self.finished.add(rank)
                if self.deterministic:
                    if self.current == rank:
                        self._schedule_next()
                elif (len(self.blocked) + len(self.finished) == self.nranks
                      and len(self.finished) < self.nranks):
                    self._deadlock()
                self.main_cv.notify_all()
        except _Aborted:
            pass
        except BaseException as exc:  # noqa: BLE001 - every rank failure aborts the run
            with self.mu:
                self.finished.add(rank)
                self.blocked.pop(rank, None)
                self._abort(exc if isinstance(exc, SimError) else KernelError(rank, exc))

    # -- clock and events ---------------------------------------------------

    def now(self, rank: int) -> float:
        if self.deterministic:
            return self.clocks[rank]
        return time.perf_counter() - self.wall0

    def _tick(self, rank: int) -> None:
        if self.deterministic:
            self.clocks[rank] += OP_COST

    def _emit(self, rank: int, kind: str, src: int, dst: int | str, nbytes: int, op: str) -> None:
        self.seqs[rank] += 1
        tracker = self.trackers[rank]
        if kind == "send":
            tracker.note_send(dst, nbytes)
        elif kind == "recv":
            tracker.note_recv(src, nbytes)
        else:
            tracker.note_collective()
        self.event_count += 1
        if self.events is not None:
            self.events.append(MessageEvent(seq=self.seqs[rank], kind=kind, src=src,
                                            dst=dst, bytes=nbytes,
                                            region=tracker.current(), op=op))
        if self.trace_file is not None:
            path = tracker.current()
            region = self._region_json.get(path)
            if region is None:
                region = json.dumps(path.to_doc(), separators=(",", ":"))
                self._region_json[path] = region
            dst_txt = f'"{dst}"' if isinstance(dst, str) else str(dst)
            self.trace_file.write(
                f'{{"rank":{rank},"seq":{self.seqs[rank]},"kind":"{kind}","src":{src},'
                f'"dst":{dst_txt},"bytes":{nbytes},"region":{region},"op":"{op}"}}\n')

    def _emit_boundary(self, rank: int, kind: str, name: str,
                       labels: Mapping[str, str] | None, now: float) -> None:
        self.seqs[rank] += 1
        if self.trace_file is not None:
            doc: dict[str, Any] = {"rank": rank, "seq": self.seqs[rank], "kind": kind, "name": name}
            if kind == "begin":
                doc["labels"] = dict(sorted((labels or {}).items()))
            doc["time"] = now
            self.trace_file.write(json.dumps(doc, separators=(",", ":")) + "\n")

    # -- matching -----------------------------------------------------------

    def _post_send(self, rank: int, msg: _Msg, dst: int) -> None:
        key = (msg.src, dst, msg.tag)
        queue = self.posted.get(key)
        if queue:
            req = queue.popleft()
            if not queue:
                del self.posted[key]
            self._match(req, msg, rank)
        else:
            box = self.boxes.get(key)
            if box is None:
                box = self.boxes[key] = deque()
            box.append(msg)

    def _post_recv(self, rank: int, req: Request) -> None:
        key = (req.peer, rank, req.tag)
        box = self.boxes.get(key)
        if box:
            msg = box.popleft()
            if not box:
                del self.boxes[key]
            self._match(req, msg, rank)
        else:
            queue = self.posted.get(key)
            if queue is None:
                queue = self.posted[key] = deque()
            queue.append(req)

    def _match(self, req: Request, msg: _Msg, actor: int) -> None:
        t = max(msg.send_time, self.clocks[actor]) if self.deterministic else self.now(actor)
        if msg.nbytes > req.nbytes:
            req.error = TruncationError(
                f"recv capacity {req.nbytes} smaller than matched message of "
                f"{msg.nbytes} bytes (src={msg.src}, tag={msg.tag})")
        req.recv_bytes = msg.nbytes
        req.completion_time = t
        req.state = COMPLETE
        waiter = req.waiter
        if waiter is not None:
            req.waiter = None
            self.wait_count[waiter] -= 1
            if self.wait_count[waiter] == 0:
                self._wake(waiter)
        if msg.rendezvous:
            msg.matched = True
            msg.match_time = t
            if msg.src != actor:
                self._wake(msg.src)

    def _await_requests(self, rank: int, reqs: Sequence[Request]) -> None:
        # Caller holds mu; blocks until every request is COMPLETE.
        incomplete = [q for q in reqs if q.state != COMPLETE]
        if not incomplete:
            return
        self.wait_count[rank] = len(incomplete)
        for q in incomplete:
            q.waiter = rank

        def reason() -> str:
            waiting = [q.describe() for q in reqs if q.state != COMPLETE]
            if len(reqs) == 1:
                return waiting[0]
            return (f"wait_all({len(waiting)} of {len(reqs)} incomplete: "
                    f"{', '.join(waiting)})")

        self._wait(rank, lambda: self.wait_count[rank] == 0, reason)

    # -- teardown -----------------------------------------------------------

    def close(self) -> None:
        if self.trace_file is not None:
            self.trace_file.close()
            self.trace_file = None


class Communicator:
    """Per-rank handle to the runtime: point-to-point, persistent requests,
    collectives, region markers, clock, and the compute stub."""

    def __init__(self, runtime: _Runtime, rank: int):
        self._rt = runtime
        self.rank = rank
        self.nranks = runtime.nranks

    # -- helpers ------------------------------------------------------------

    def _validate_peer(self, peer: int) -> None:
        if not isinstance(peer, int) or not 0 <= peer < self.nranks:
            raise SimError(f"rank {self.rank}: invalid peer rank {peer!r}")
        if peer == self.rank and not self._rt.allow_self:
            raise SimError(f"rank {self.rank}: self-messaging is disabled")

    def _validate_msg(self, peer: int, tag: int, nbytes: int) -> None:
        self._validate_peer(peer)
        if tag < 0:
            raise SimError(f"rank {self.rank}: tag must be non-negative, got {tag}")
        if nbytes < 0:
            raise SimError(f"rank {self.rank}: byte count must be non-negative, got {nbytes}")

    def _new_request(self, kind: str, peer: int, tag: int, nbytes: int,
                     persistent: bool, op: str, state: str) -> Request:
        rt = self._rt
        rt.next_rid[self.rank] += 1
        return Request(rt.next_rid[self.rank], kind, peer, tag, nbytes, persistent, op, state)

    def _finish_recv(self, req: Request) -> int:
        rt = self._rt
        req.state = INACTIVE
        if req.error is not None:
            raise req.error
        if rt.deterministic:
            rt.clocks[self.rank] = (max(rt.clocks[self.rank], req.completion_time)
                                    + OP_COST + BYTE_COST * req.recv_bytes)
        rt._emit(self.rank, "recv", req.peer, self.rank, req.recv_bytes, req.op)
        return req.recv_bytes

    def _finish_send(self, req: Request) -> int:
        rt = self._rt
        req.state = INACTIVE
        if rt.deterministic:
            rt.clocks[self.rank] = max(rt.clocks[self.rank], req.completion_time) + OP_COST
        return req.nbytes

    # -- blocking point-to-point ---------------------------------------------

    def send(self, dst: int, tag: int, nbytes: int) -> None:
        """Blocking send; rendezvous semantics (completes when matched)."""
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            self._validate_msg(dst, tag, nbytes)
            rt._tick(self.rank)
            rt._emit(self.rank, "send", self.rank, dst, nbytes, "send")
            msg = _Msg(self.rank, tag, nbytes, rt.now(self.rank), rendezvous=True)
            rt._post_send(self.rank, msg, dst)
            rt._wait(self.rank, lambda: msg.matched,
                     lambda: f"send(dst={dst}, tag={tag}, bytes={nbytes})")
            if rt.deterministic:
                rt.clocks[self.rank] = max(rt.clocks[self.rank], msg.match_time) + OP_COST

    def recv(self, src: int, tag: int, max_bytes: int) -> int:
        """Blocking receive; returns the matched message's byte count."""
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            self._validate_msg(src, tag, max_bytes)
            rt._tick(self.rank)
            req = self._new_request("recv", src, tag, max_bytes, False, "recv", ACTIVE)
            rt._post_recv(self.rank, req)
            rt._await_requests(self.rank, (req,))
            return self._finish_recv(req)

    # -- nonblocking ----------------------------------------------------------

    def isend(self, dst: int, tag: int, nbytes: int) -> Request:
        """Nonblocking send; buffers eagerly and completes immediately."""
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            self._validate_msg(dst, tag, nbytes)
            rt._tick(self.rank)
            req = self._new_request("send", dst, tag, nbytes, False, "isend", COMPLETE)
            req.completion_time = rt.now(self.rank)
            rt._emit(self.rank, "send", self.rank, dst, nbytes, "isend")
            rt._post_send(self.rank, _Msg(self.rank, tag, nbytes, rt.now(self.rank), False), dst)
            return req

    def irecv(self, src: int, tag: int, max_bytes: int) -> Request:
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            self._validate_msg(src, tag, max_bytes)
            rt._tick(self.rank)
            req = self._new_request("recv", src, tag, max_bytes, False, "irecv", ACTIVE)
            rt._post_recv(self.rank, req)
            return req

    def wait(self, req: Request) -> int:
        """Block until the request completes; returns received/declared bytes."""
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            if req.state == INACTIVE:
                raise RequestStateError(
                    f"rank {self.rank}: wait on inactive request {req.describe()}")
            rt._tick(self.rank)
            rt._await_requests(self.rank, (req,))
            if req.kind == "recv":
                return self._finish_recv(req)
            return self._finish_send(req)

    def wait_all(self, reqs: Sequence[Request]) -> list[int]:
        """Wait for all requests; completions reported in argument order."""
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            for req in reqs:
                if req.state == INACTIVE:
                    raise RequestStateError(
                        f"rank {self.rank}: wait_all includes inactive request {req.describe()}")
            rt._tick(self.rank)
            rt._await_requests(self.rank, reqs)
            out = []
            for req in reqs:
                if req.kind == "recv":
                    out.append(self._finish_recv(req))
                else:
                    out.append(self._finish_send(req))
            return out

    # -- persistent requests --------------------------------------------------

    def send_init(self, dst: int, tag: int, nbytes: int) -> Request:
        with self._rt.mu:
            self._rt._check_abort()
            self._validate_msg(dst, tag, nbytes)
            return self._new_request("send", dst, tag, nbytes, True, "start", INACTIVE)

    def recv_init(self, src: int, tag: int, max_bytes: int) -> Request:
        with self._rt.mu:
            self._rt._check_abort()
            self._validate_msg(src, tag, max_bytes)
            return self._new_request("recv", src, tag, max_bytes, True, "start", INACTIVE)

    def start_all(self, reqs: Sequence[Request]) -> None:
        """Activate a set of persistent requests (sends buffer eagerly)."""
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            for req in reqs:
                if not req.persistent:
                    raise RequestStateError(
                        f"rank {self.rank}: start of non-persistent request {req.describe()}")
                if req.state != INACTIVE:
                    raise RequestStateError(
                        f"rank {self.rank}: start of already-active request {req.describe()}")
            rt._tick(self.rank)
            for req in reqs:
                req.error = None
                req.recv_bytes = 0
                req.waiter = None
                if req.kind == "send":
                    req.state = COMPLETE
                    req.completion_time = rt.now(self.rank)
                    rt._emit(self.rank, "send", self.rank, req.peer, req.nbytes, "start")
                    rt._post_send(self.rank, _Msg(self.rank, req.tag, req.nbytes,
                                                  rt.now(self.rank), False), req.peer)
                else:
                    req.state = ACTIVE
                    rt._post_recv(self.rank, req)

    # -- collectives ------------------------------------------------------------

    def barrier(self) -> None:
        self._collective("barrier", ALL_RANKS, 0)

    def bcast(self, root: int, nbytes: int) -> None:
        self._validate_root(root)
        self._collective("bcast", root, nbytes)

    def reduce(self, root: int, nbytes: int) -> None:
        self._validate_root(root)
        self._collective("reduce", root, nbytes)

    def allreduce(self, nbytes: int) -> None:
        self._collective("allreduce", ALL_RANKS, nbytes)

    def _validate_root(self, root: int) -> None:
        if not isinstance(root, int) or not 0 <= root < self.nranks:
            raise SimError(f"rank {self.rank}: invalid collective root {root!r}")

    def _collective(self, kind: str, root: int | str, nbytes: int) -> None:
        if nbytes < 0:
            raise SimError(f"rank {self.rank}: byte count must be non-negative, got {nbytes}")
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            rt._tick(self.rank)
            sig = (kind, root, nbytes)
            if rt.coll_sig is not None and sig != rt.coll_sig:
                exp_kind, exp_root, exp_bytes = rt.coll_sig
                raise CollectiveMismatchError(
                    f"collective mismatch: rank {self.rank} called "
                    f"{kind}(root={root}, bytes={nbytes}) while rank {rt.coll_first} "
                    f"started {exp_kind}(root={exp_root}, bytes={exp_bytes})")
            rt._emit(self.rank, "collective", self.rank, root, nbytes, kind)
            if rt.coll_sig is None:
                rt.coll_sig = sig
                rt.coll_first = self.rank
            rt.coll_arrived.add(self.rank)
            entry_round = rt.coll_round
            if len(rt.coll_arrived) == rt.nranks:
                if rt.deterministic:
                    t = max(rt.clocks) + OP_COST
                    for r in range(rt.nranks):
                        rt.clocks[r] = t
                rt.coll_round += 1
                rt.coll_sig = None
                rt.coll_arrived = set()
                for waiter in sorted(rt.coll_waiters):
                    rt._wake(waiter)
                rt.coll_waiters = set()
            else:
                rt.coll_waiters.add(self.rank)
                rt._wait(self.rank, lambda: rt.coll_round > entry_round, lambda: f"{kind}()")

    # -- regions, clock, compute -------------------------------------------------

    def region_begin(self, name: str, labels: Mapping[str, str] | None = None) -> None:
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            now = rt.now(self.rank)
            rt.trackers[self.rank].begin(name, labels, now)
            rt._emit_boundary(self.rank, "begin", name, labels, now)

    def region_end(self, name: str) -> None:
        rt = self._rt
        with rt.mu:
            rt._check_abort()
            now = rt.now(self.rank)
            rt.trackers[self.rank].end(name, now)
            rt._emit_boundary(self.rank, "end", name, None, now)

    @contextmanager
    def region(self, name: str, **labels: str):
        self.region_begin(name, labels or None)
        yield
        self.region_end(name)

    def time(self) -> float:
        rt = self._rt
        with rt.mu:
            return rt.now(self.rank)

    def compute(self, units: int) -> None:
        """Compute stub: advances the virtual clock (deterministic mode) or
        burns real cycles proportional to `units` (concurrent mode)."""
        rt = self._rt
        if rt.deterministic:
            with rt.mu:
                rt._check_abort()
                rt.clocks[self.rank] += units * COMPUTE_UNIT_COST
            return
        x = 1.0
        remaining = int(units)
        while remaining > 0:
            chunk = min(remaining, 4096)
            for _ in range(chunk):
                x = x * 1.0000001 + 1e-12
            remaining -= chunk
            if rt.abort_exc is not None:
                raise _Aborted()


def spawn(nranks: int, program: Callable[[int, Communicator], None], *,
          deterministic: bool = True, trace_path: str | Path | None = None,
          collect_events: bool = False, allow_self: bool = False) -> RunOutcome:
    """Run `program(rank, comm)` once per rank to completion.

    Raises DeadlockError, CollectiveMismatchError, InstrumentationError or
    KernelError when the run cannot complete; otherwise returns per-rank exit
    statuses and the merged profiler output.
    """
    if nranks < 1:
        raise SimError(f"nranks must be >= 1, got {nranks}")
    rt = _Runtime(nranks, program, deterministic, trace_path, collect_events, allow_self)
    threads = [threading.Thread(target=rt._worker, args=(r,), daemon=True,
                                name=f"sim-rank-{r}") for r in range(nranks)]
    try:
        for t in threads:
            t.start()
        with rt.mu:
            while rt.abort_exc is None and len(rt.finished) < nranks:
                rt.main_cv.wait()
        for t in threads:
            t.join(timeout=60.0)
            if t.is_alive():
                raise SimError(f"worker thread {t.name} failed to stop")
    finally:
        rt.close()
    if rt.abort_exc is not None:
        raise rt.abort_exc
    stats = finalize(rt.trackers)
    elapsed = max(rt.clocks) if deterministic else time.perf_counter() - rt.wall0
    return RunOutcome(nranks=nranks, statuses=["ok"] * nranks, stats=stats,
                      elapsed_sec=elapsed, event_count=rt.event_count, events=rt.events)
