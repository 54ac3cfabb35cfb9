"""Experiment driver: expand a scaling series, run each configuration through
the simulator in deterministic mode, and write one profile per run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import kernels, profiler, sim
from .model import (
    ExperimentError,
    ExperimentSpec,
    RunMeta,
    RunProfile,
    experiment_from_doc,
    quantize,
    write_profile,
)


class RunnerError(RuntimeError):
    """Configuration problems detected before or while running a series."""


def load_experiment(path: str | Path) -> ExperimentSpec:
    """Parse and validate an experiment file, filling parameter defaults."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ExperimentError(f"experiment file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ExperimentError(f"{path}: not valid JSON: {exc}")
    return experiment_from_doc(doc)


def per_rank_cells(spec: ExperimentSpec, grid: tuple[int, int, int]) -> tuple[int, int, int]:
    """Problem sizing: weak keeps the per-rank size, strong splits the global."""
    if spec.scaling == "weak":
        return spec.base_problem
    cells = []
    for axis in range(3):
        if spec.base_problem[axis] % grid[axis] != 0:
            raise RunnerError(
                f"strong scaling: problem dim {spec.base_problem[axis]} not divisible "
                f"by grid dim {grid[axis]} on axis {axis}")
        cells.append(spec.base_problem[axis] // grid[axis])
    return tuple(cells)


def profile_filename(benchmark: str, grid: tuple[int, int, int]) -> str:
    px, py, pz = grid
    return f"{benchmark}_{px}x{py}x{pz}.commprof.json"


def trace_filename(benchmark: str, grid: tuple[int, int, int]) -> str:
    px, py, pz = grid
    return f"{benchmark}_{px}x{py}x{pz}.trace.jsonl"


@dataclass
class RunEntry:
    grid: tuple[int, int, int]
    nranks: int
    elapsed_sec: float
    total_bytes_sent: int
    path: Path


@dataclass
class SeriesReport:
    entries: list[RunEntry] = field(default_factory=list)
    failures: list[tuple[tuple[int, int, int], str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def paths(self) -> list[Path]:
        return [e.path for e in self.entries]


def run_one(spec: ExperimentSpec, grid: tuple[int, int, int], out_dir: Path, *,
            trace: bool = False, per_rank: bool = False,
            deterministic: bool = True) -> RunEntry:
    """Run a single configuration and write its profile."""
    g = kernels.Grid3D(*grid)
    cells = per_rank_cells(spec, grid)
    params = kernels.KernelParams.from_mapping(cells, spec.resolved_params())
    kernel = kernels.KERNELS[spec.benchmark]

    def program(rank: int, comm: sim.Communicator) -> None:
        kernel(comm, g, params)

    trace_path = out_dir / trace_filename(spec.benchmark, grid) if trace else None
    outcome = sim.spawn(g.nranks, program, deterministic=deterministic,
                        trace_path=trace_path)
    summaries = profiler.summarize(outcome.stats)
    meta = RunMeta(
        benchmark=spec.benchmark,
        scaling=spec.scaling,
        nranks=g.nranks,
        grid=grid,
        problem=spec.base_problem,
        kernel_params=spec.resolved_params(),
        seed=spec.seed,
        elapsed_sec=quantize(outcome.elapsed_sec),
    )
    profile = RunProfile(meta=meta, summaries=summaries,
                         per_rank=outcome.stats if per_rank else None)
    path = write_profile(profile, out_dir / profile_filename(spec.benchmark, grid))
    return RunEntry(
        grid=grid,
        nranks=g.nranks,
        elapsed_sec=meta.elapsed_sec,
        total_bytes_sent=sum(s.bytes_sent_sum for s in summaries),
        path=path,
    )


def run_experiment(spec: ExperimentSpec, *, out_dir: str | Path | None = None,
                   trace: bool = False, per_rank: bool = False,
                   deterministic: bool = True,
                   rank_cap: int | None = sim.DEFAULT_RANK_CAP,
                   log: Callable[[str], None] | None = None) -> SeriesReport:
    """Run every grid in the series; failed runs are reported and skipped."""
    out = Path(out_dir) if out_dir is not None else Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    if rank_cap is not None:
        for grid in spec.grids:
            n = grid[0] * grid[1] * grid[2]
            if n > rank_cap:
                raise RunnerError(
                    f"grid {grid} needs {n} ranks, above the desk-scale cap of "
                    f"{rank_cap}; pass --override-rank-cap to run it anyway")

    report = SeriesReport()
    for grid in spec.grids:
        try:
            entry = run_one(spec, grid, out, trace=trace, per_rank=per_rank,
                            deterministic=deterministic)
        except (sim.SimError, profiler.InstrumentationError,
                kernels.KernelConfigError, RunnerError) as exc:
            report.failures.append((grid, str(exc)))
            if log:
                log(f"FAILED {spec.benchmark} {grid}: {exc}")
            continue
        report.entries.append(entry)
        if log:
            log(f"{spec.benchmark} {grid[0]}x{grid[1]}x{grid[2]}: "
                f"nranks={entry.nranks} elapsed={entry.elapsed_sec:.6g}s "
                f"total_bytes_sent={entry.total_bytes_sent} -> {entry.path}")
    return report
