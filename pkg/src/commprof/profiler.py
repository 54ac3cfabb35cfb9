"""Region markers and the communication pattern profiler.

Each rank owns a RegionTracker.  Marked regions form a stack; every runtime
event is attributed to the innermost open region only.  Statistics for a
region instance are snapshotted when the region ends and folded into the
rank's running totals for that region path.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from .model import MessageEvent, RegionCommStats, RegionPath, RegionSummary, quantize, summarize_stats


class InstrumentationError(RuntimeError):
    """Mismatched or unclosed region markers."""


class _OpenRegion:
    __slots__ = (
        "path", "begin_time", "sends", "recvs", "bytes_sent", "bytes_recv",
        "msg_sent_min", "msg_sent_max", "msg_recv_min", "msg_recv_max",
        "dests", "srcs", "colls",
    )

    def __init__(self, path: RegionPath, begin_time: float):
        self.path = path
        self.begin_time = begin_time
        self.sends = 0
        self.recvs = 0
        self.bytes_sent = 0
        self.bytes_recv = 0
        self.msg_sent_min = 0
        self.msg_sent_max = 0
        self.msg_recv_min = 0
        self.msg_recv_max = 0
        self.dests: set[int] = set()
        self.srcs: set[int] = set()
        self.colls = 0


class RegionTracker:
    """Rank-local profiler state: open-region stack plus per-region totals."""

    def __init__(self, rank: int):
        self.rank = rank
        self._stack: list[_OpenRegion] = []
        self._stats: dict[RegionPath, RegionCommStats] = {}
        self._raw_time: dict[RegionPath, float] = {}
        self._begin_order: dict[RegionPath, None] = {}

    def begin(self, name: str, labels: Mapping[str, str] | None = None, now: float = 0.0) -> None:
        if not name:
            raise InstrumentationError(f"rank {self.rank}: region name must be non-empty")
        names = tuple(r.path.name for r in self._stack) + (name,)
        path = RegionPath.make(names, labels)
        self._begin_order.setdefault(path)
        self._stack.append(_OpenRegion(path, now))

    def end(self, name: str, now: float = 0.0) -> None:
        if not self._stack:
            raise InstrumentationError(
                f"rank {self.rank}: end of region {name!r} without a matching begin")
        top = self._stack[-1]
        if top.path.name != name:
            raise InstrumentationError(
                f"rank {self.rank}: region end {name!r} does not match "
                f"innermost open region {top.path.name!r}")
        self._stack.pop()
        self._fold(top, now)

    def _fold(self, inst: _OpenRegion, end_time: float) -> None:
        st = self._stats.get(inst.path)
        if st is None:
            st = RegionCommStats(rank=self.rank, region=inst.path)
            self._stats[inst.path] = st
            self._raw_time[inst.path] = 0.0
            first = True
        else:
            first = st.instances == 0
        st.instances += 1
        if inst.sends:
            st.msg_sent_min = inst.msg_sent_min if st.sends == 0 else min(st.msg_sent_min, inst.msg_sent_min)
            st.msg_sent_max = max(st.msg_sent_max, inst.msg_sent_max)
        if inst.recvs:
            st.msg_recv_min = inst.msg_recv_min if st.recvs == 0 else min(st.msg_recv_min, inst.msg_recv_min)
            st.msg_recv_max = max(st.msg_recv_max, inst.msg_recv_max)
        st.sends += inst.sends
        st.recvs += inst.recvs
        st.bytes_sent_total += inst.bytes_sent
        st.bytes_recv_total += inst.bytes_recv
        ndst, nsrc = len(inst.dests), len(inst.srcs)
        st.dest_ranks_min = ndst if first else min(st.dest_ranks_min, ndst)
        st.dest_ranks_max = max(st.dest_ranks_max, ndst)
        st.src_ranks_min = nsrc if first else min(st.src_ranks_min, nsrc)
        st.src_ranks_max = max(st.src_ranks_max, nsrc)
        st.colls += inst.colls
        self._raw_time[inst.path] += end_time - inst.begin_time

    def on_event(self, event: MessageEvent) -> None:
        """Attribute an event to the innermost open region (no-op outside)."""
        if event.kind == "send":
            self.note_send(event.dst, event.bytes)
        elif event.kind == "recv":
            self.note_recv(event.src, event.bytes)
        elif event.kind == "collective":
            self.note_collective()
        else:
            raise ValueError(f"unknown event kind {event.kind!r}")

    def note_send(self, dst: int | str, nbytes: int) -> None:
        if not self._stack:
            return
        top = self._stack[-1]
        if top.sends == 0:
            top.msg_sent_min = nbytes
            top.msg_sent_max = nbytes
        else:
            if nbytes < top.msg_sent_min:
                top.msg_sent_min = nbytes
            if nbytes > top.msg_sent_max:
                top.msg_sent_max = nbytes
        top.sends += 1
        top.bytes_sent += nbytes
        top.dests.add(dst)

    def note_recv(self, src: int, nbytes: int) -> None:
        if not self._stack:
            return
        top = self._stack[-1]
        if top.recvs == 0:
            top.msg_recv_min = nbytes
            top.msg_recv_max = nbytes
        else:
            if nbytes < top.msg_recv_min:
                top.msg_recv_min = nbytes
            if nbytes > top.msg_recv_max:
                top.msg_recv_max = nbytes
        top.recvs += 1
        top.bytes_recv += nbytes
        top.srcs.add(src)

    def note_collective(self) -> None:
        if self._stack:
            self._stack[-1].colls += 1

    def current(self) -> RegionPath:
        """Path of the innermost open region (empty path outside regions)."""
        return self._stack[-1].path if self._stack else RegionPath()

    def open_names(self) -> list[str]:
        return [r.path.name for r in self._stack]

    def stats(self) -> list[RegionCommStats]:
        """Per-rank records in this rank's first-begin order, times quantized."""
        if self._stack:
            names = ", ".join(repr(n) for n in self.open_names())
            raise InstrumentationError(
                f"rank {self.rank}: region(s) still open at finalize: {names}")
        out = []
        for path in self._begin_order:
            st = self._stats[path]
            st.time_sec = quantize(self._raw_time[path])
            out.append(st)
        return out


def finalize(trackers: Iterable[RegionTracker]) -> list[RegionCommStats]:
    """Collect per-rank records from all trackers, rank-major order."""
    out: list[RegionCommStats] = []
    for tracker in trackers:
        out.extend(tracker.stats())
    return out


def summarize(stats: Iterable[RegionCommStats]) -> list[RegionSummary]:
    """Cross-rank min/max/sum/avg reduction, one summary per region."""
    return summarize_stats(stats)
