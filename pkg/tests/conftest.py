from __future__ import annotations

import json
from pathlib import Path

import pytest

from commprof import kernels, profiler, sim


def run_kernel(benchmark: str, grid: tuple[int, int, int], cells: tuple[int, int, int],
               *, trace_path=None, collect_events=False, deterministic=True, **params):
    """Spawn one kernel run and return (outcome, summaries)."""
    g = kernels.Grid3D(*grid)
    p = kernels.KernelParams(cells=cells, **params)
    kernel = kernels.KERNELS[benchmark]
    out = sim.spawn(g.nranks, lambda r, c: kernel(c, g, p), trace_path=trace_path,
                    collect_events=collect_events, deterministic=deterministic)
    return out, profiler.summarize(out.stats)


def stats_named(out: sim.RunOutcome, name: str) -> dict[int, object]:
    """Per-rank records whose innermost region name matches; keyed by rank."""
    found = {}
    for st in out.stats:
        if st.region.name == name:
            assert st.rank not in found, f"multiple {name} records for rank {st.rank}"
            found[st.rank] = st
    return found


def summary_named(summaries, name: str):
    matches = [s for s in summaries if s.region.name == name]
    assert len(matches) == 1, f"expected one summary named {name}, got {len(matches)}"
    return matches[0]


def write_experiment(path: Path, **doc) -> Path:
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def experiment_file(tmp_path):
    def make(**doc) -> Path:
        return write_experiment(tmp_path / "experiment.json", **doc)

    return make
