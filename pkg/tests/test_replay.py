from __future__ import annotations

import json

import pytest

from commprof import replay
from commprof.model import RegionPath
from commprof.profiler import summarize

from conftest import run_kernel

SUMMARY_FIELDS = (
    "sends_min", "sends_max", "recvs_min", "recvs_max",
    "dest_ranks_min", "dest_ranks_max", "src_ranks_min", "src_ranks_max",
    "msg_sent_min", "msg_sent_max", "msg_recv_min", "msg_recv_max",
    "colls_min", "colls_max", "sends_sum", "recvs_sum",
    "bytes_sent_sum", "bytes_recv_sum", "colls_sum",
    "avg_send_size", "time_avg", "time_min", "time_max",
)

PER_RANK_FIELDS = (
    "instances", "sends", "recvs", "bytes_sent_total", "bytes_recv_total",
    "msg_sent_min", "msg_sent_max", "msg_recv_min", "msg_recv_max",
    "dest_ranks_min", "dest_ranks_max", "src_ranks_min", "src_ranks_max",
    "colls", "time_sec",
)


def assert_replay_matches(out, summaries, trace_path):
    """Field-exact comparison of the replay oracle against the live profiler."""
    result = replay.replay_trace(trace_path)

    live_per_rank = {(st.rank, st.region.names, st.region.labels): st for st in out.stats}
    assert set(result.per_rank) == set(live_per_rank)
    for key, rec in result.per_rank.items():
        st = live_per_rank[key]
        for f in PER_RANK_FIELDS:
            assert rec[f] == getattr(st, f), (key, f, rec[f], getattr(st, f))

    live_summaries = {(s.region.names, s.region.labels): s for s in summaries}
    assert set(result.summaries) == set(live_summaries)
    for key, rec in result.summaries.items():
        s = live_summaries[key]
        for f in SUMMARY_FIELDS:
            assert rec[f] == getattr(s, f), (key, f, rec[f], getattr(s, f))
    return result


@pytest.mark.parametrize("benchmark,grid,cells", [
    ("halo3d", (2, 2, 2), (8, 8, 8)),
    ("halo3d", (1, 1, 1), (8, 8, 8)),
    ("sweep", (2, 2, 2), (8, 8, 8)),
    ("amg_vcycle", (2, 2, 1), (16, 16, 16)),
    ("lag_step", (2, 2, 2), (8, 8, 8)),
])
def test_replay_reproduces_profiler_output(tmp_path, benchmark, grid, cells):
    trace = tmp_path / "run.trace.jsonl"
    out, summaries = run_kernel(benchmark, grid, cells, iterations=2, trace_path=trace)
    result = assert_replay_matches(out, summaries, trace)
    assert result.total_events == out.event_count


def test_replay_counts_empty_region_instances(tmp_path):
    # 1x1x1 halo: regions exist with zero communication; the trace-side
    # boundary records alone must reconstruct them.
    trace = tmp_path / "run.trace.jsonl"
    out, summaries = run_kernel("halo3d", (1, 1, 1), (4, 4, 4), iterations=3, trace_path=trace)
    result = replay.replay_trace(trace)
    key = (0, ("main", "halo_exchange"), ())
    assert result.per_rank[key]["instances"] == 3
    assert result.per_rank[key]["sends"] == 0


def test_replay_rejects_unclosed_region(tmp_path):
    trace = tmp_path / "bad.jsonl"
    trace.write_text(
        '{"rank":0,"seq":1,"kind":"begin","name":"main","labels":{},"time":0.0}\n',
        encoding="utf-8")
    with pytest.raises(replay.ReplayError, match="unclosed"):
        replay.replay_trace(trace)


def test_replay_rejects_mismatched_attribution(tmp_path):
    trace = tmp_path / "bad.jsonl"
    lines = [
        {"rank": 0, "seq": 1, "kind": "begin", "name": "main", "labels": {}, "time": 0.0},
        {"rank": 0, "seq": 2, "kind": "send", "src": 0, "dst": 1, "bytes": 8,
         "region": {"names": ["other"], "labels": {}}, "op": "isend"},
        {"rank": 0, "seq": 3, "kind": "end", "name": "main", "time": 1.0},
    ]
    trace.write_text("".join(json.dumps(l) + "\n" for l in lines), encoding="utf-8")
    with pytest.raises(replay.ReplayError, match="attributed"):
        replay.replay_trace(trace)


def test_replay_rejects_nonmonotone_seq(tmp_path):
    trace = tmp_path / "bad.jsonl"
    lines = [
        {"rank": 0, "seq": 2, "kind": "begin", "name": "main", "labels": {}, "time": 0.0},
        {"rank": 0, "seq": 1, "kind": "end", "name": "main", "time": 1.0},
    ]
    trace.write_text("".join(json.dumps(l) + "\n" for l in lines), encoding="utf-8")
    with pytest.raises(replay.ReplayError, match="strictly increasing"):
        replay.replay_trace(trace)
