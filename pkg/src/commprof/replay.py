"""Independent trace-replay counter used to validate the online profiler.

Reads a run's newline-delimited trace and recomputes every per-rank and
cross-rank region statistic from scratch: region stacks are rebuilt from
begin/end records in per-rank sequence order and each message event is
attributed to the innermost frame.  This module deliberately shares no
accumulation code with commprof.profiler; only the numeric formatting
convention (9-significant-digit quantization) is common, since that is part
of the schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import quantize

RegionKey = tuple[tuple[str, ...], tuple[tuple[str, str], ...]]


class ReplayError(RuntimeError):
    """Trace stream is malformed or inconsistent with its own attributions."""


@dataclass
class ReplayResult:
    """Recomputed statistics keyed like profile records: per_rank by
    (rank, names, labels), summaries by (names, labels)."""

    per_rank: dict[tuple[int, tuple[str, ...], tuple[tuple[str, str], ...]], dict] = field(
        default_factory=dict)
    summaries: dict[RegionKey, dict] = field(default_factory=dict)
    total_events: int = 0


def _new_tally() -> dict:
    return {
        "instances": 0, "sends": 0, "recvs": 0,
        "bytes_sent_total": 0, "bytes_recv_total": 0,
        "sent_min": None, "sent_max": None, "recv_min": None, "recv_max": None,
        "dest_cards": [], "src_cards": [],
        "colls": 0, "time": 0.0,
    }


def replay_trace(path: str | Path) -> ReplayResult:
    result = ReplayResult()
    tallies: dict[tuple[int, tuple, tuple], dict] = {}
    stacks: dict[int, list[dict]] = {}
    last_seq: dict[int, int] = {}
    loads = json.loads

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.isspace():
                continue
            try:
                rec = loads(line)
            except json.JSONDecodeError as exc:
                raise ReplayError(f"{path}:{line_no}: bad JSON: {exc}") from exc
            rank = rec["rank"]
            seq = rec["seq"]
            if seq <= last_seq.get(rank, 0):
                raise ReplayError(
                    f"{path}:{line_no}: rank {rank} seq {seq} not strictly increasing")
            last_seq[rank] = seq
            kind = rec["kind"]
            stack = stacks.setdefault(rank, [])
            if kind == "begin":
                names = tuple(f["names"][-1] for f in stack) + (rec["name"],)
                stack.append({
                    "names": names,
                    "labels": tuple(sorted(rec.get("labels", {}).items())),
                    "t0": float(rec["time"]),
                    "sends": 0, "recvs": 0, "bytes_sent": 0, "bytes_recv": 0,
                    "sent_min": None, "sent_max": None,
                    "recv_min": None, "recv_max": None,
                    "dests": set(), "srcs": set(), "colls": 0,
                })
            elif kind == "end":
                if not stack or stack[-1]["names"][-1] != rec["name"]:
                    raise ReplayError(
                        f"rank {rank}: end {rec['name']!r} does not match open stack")
                frame = stack.pop()
                key = (rank, frame["names"], frame["labels"])
                tally = tallies.get(key)
                if tally is None:
                    tally = tallies[key] = _new_tally()
                tally["instances"] += 1
                tally["sends"] += frame["sends"]
                tally["recvs"] += frame["recvs"]
                tally["bytes_sent_total"] += frame["bytes_sent"]
                tally["bytes_recv_total"] += frame["bytes_recv"]
                if frame["sends"]:
                    tally["sent_min"] = (frame["sent_min"] if tally["sent_min"] is None
                                         else min(tally["sent_min"], frame["sent_min"]))
                    tally["sent_max"] = (frame["sent_max"] if tally["sent_max"] is None
                                         else max(tally["sent_max"], frame["sent_max"]))
                if frame["recvs"]:
                    tally["recv_min"] = (frame["recv_min"] if tally["recv_min"] is None
                                         else min(tally["recv_min"], frame["recv_min"]))
                    tally["recv_max"] = (frame["recv_max"] if tally["recv_max"] is None
                                         else max(tally["recv_max"], frame["recv_max"]))
                tally["dest_cards"].append(len(frame["dests"]))
                tally["src_cards"].append(len(frame["srcs"]))
                tally["colls"] += frame["colls"]
                tally["time"] += float(rec["time"]) - frame["t0"]
            else:
                result.total_events += 1
                if stack:
                    frame = stack[-1]
                    claimed = tuple(rec["region"]["names"])
                    if claimed != frame["names"]:
                        raise ReplayError(
                            f"rank {rank} seq {seq}: event attributed to "
                            f"{claimed} but stack is {frame['names']}")
                    nbytes = rec["bytes"]
                    if kind == "send":
                        frame["sends"] += 1
                        frame["bytes_sent"] += nbytes
                        if frame["sent_min"] is None or nbytes < frame["sent_min"]:
                            frame["sent_min"] = nbytes
                        if frame["sent_max"] is None or nbytes > frame["sent_max"]:
                            frame["sent_max"] = nbytes
                        frame["dests"].add(rec["dst"])
                    elif kind == "recv":
                        frame["recvs"] += 1
                        frame["bytes_recv"] += nbytes
                        if frame["recv_min"] is None or nbytes < frame["recv_min"]:
                            frame["recv_min"] = nbytes
                        if frame["recv_max"] is None or nbytes > frame["recv_max"]:
                            frame["recv_max"] = nbytes
                        frame["srcs"].add(rec["src"])
                    elif kind == "collective":
                        frame["colls"] += 1
                    else:
                        raise ReplayError(f"rank {rank}: unknown record kind {kind!r}")
                elif rec["region"]["names"]:
                    raise ReplayError(
                        f"rank {rank} seq {seq}: event claims a region "
                        "but no region is open")

    for rank, stack in stacks.items():
        if stack:
            raise ReplayError(f"rank {rank}: unclosed region(s) at end of trace")

    for (rank, names, labels), tally in tallies.items():
        result.per_rank[(rank, names, labels)] = {
            "rank": rank,
            "instances": tally["instances"],
            "sends": tally["sends"],
            "recvs": tally["recvs"],
            "bytes_sent_total": tally["bytes_sent_total"],
            "bytes_recv_total": tally["bytes_recv_total"],
            "msg_sent_min": tally["sent_min"] or 0,
            "msg_sent_max": tally["sent_max"] or 0,
            "msg_recv_min": tally["recv_min"] or 0,
            "msg_recv_max": tally["recv_max"] or 0,
            "dest_ranks_min": min(tally["dest_cards"], default=0),
            "dest_ranks_max": max(tally["dest_cards"], default=0),
            "src_ranks_min": min(tally["src_cards"], default=0),
            "src_ranks_max": max(tally["src_cards"], default=0),
            "colls": tally["colls"],
            "time_sec": quantize(tally["time"]),
        }

    by_region: dict[RegionKey, list[dict]] = {}
    for (rank, names, labels), rec in sorted(result.per_rank.items(),
                                             key=lambda kv: kv[0][0]):
        by_region.setdefault((names, labels), []).append(rec)

    for key, recs in by_region.items():
        summary = {
            "sends_min": min(r["sends"] for r in recs),
            "sends_max": max(r["sends"] for r in recs),
            "recvs_min": min(r["recvs"] for r in recs),
            "recvs_max": max(r["recvs"] for r in recs),
            "dest_ranks_min": min(r["dest_ranks_min"] for r in recs),
            "dest_ranks_max": max(r["dest_ranks_max"] for r in recs),
            "src_ranks_min": min(r["src_ranks_min"] for r in recs),
            "src_ranks_max": max(r["src_ranks_max"] for r in recs),
            "msg_sent_min": min((r["msg_sent_min"] for r in recs if r["sends"]), default=0),
            "msg_sent_max": max((r["msg_sent_max"] for r in recs if r["sends"]), default=0),
            "msg_recv_min": min((r["msg_recv_min"] for r in recs if r["recvs"]), default=0),
            "msg_recv_max": max((r["msg_recv_max"] for r in recs if r["recvs"]), default=0),
            "colls_min": min(r["colls"] for r in recs),
            "colls_max": max(r["colls"] for r in recs),
            "sends_sum": sum(r["sends"] for r in recs),
            "recvs_sum": sum(r["recvs"] for r in recs),
            "bytes_sent_sum": sum(r["bytes_sent_total"] for r in recs),
            "bytes_recv_sum": sum(r["bytes_recv_total"] for r in recs),
            "colls_sum": sum(r["colls"] for r in recs),
        }
        summary["avg_send_size"] = (
            quantize(summary["bytes_sent_sum"] / summary["sends_sum"])
            if summary["sends_sum"] else 0.0)
        times = [r["time_sec"] for r in recs]
        summary["time_avg"] = quantize(sum(times) / len(times))
        summary["time_min"] = min(times)
        summary["time_max"] = max(times)
        result.summaries[key] = summary

    return result
