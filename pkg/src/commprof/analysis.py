"""Loading and cross-run analysis of profiles: derived bandwidth and message
rate metrics, per-region time comparisons, and per-level breakdowns, each as a
table keyed by rank count that can be dumped to CSV or drawn as a chart."""

from __future__ import annotations

import csv
import glob as globlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .model import (
    PROFILE_SUFFIX,
    RegionSummary,
    RunProfile,
    fmt_float,
    load_profile,
    validate_profile,
)


class AnalysisError(RuntimeError):
    """Bad inputs to the analysis layer (missing regions, bad profiles, ...)."""


@dataclass
class ProfileSet:
    """A validated collection of profiles from one benchmark, by rank count."""

    profiles: list[RunProfile]
    paths: list[Path]
    rejected: list[tuple[Path, str]] = field(default_factory=list)

    @property
    def benchmark(self) -> str:
        return self.profiles[0].meta.benchmark

    @property
    def nranks_list(self) -> list[int]:
        return [p.meta.nranks for p in self.profiles]


def _expand(source) -> list[Path]:
    if isinstance(source, (list, tuple)):
        out: list[Path] = []
        for item in source:
            out.extend(_expand(item))
        return out
    path = Path(source)
    if path.is_dir():
        return sorted(path.glob(f"*{PROFILE_SUFFIX}"))
    if any(ch in str(source) for ch in "*?["):
        return sorted(Path(p) for p in globlib.glob(str(source)))
    return [path]


def load_profiles(source, *, allow_mixed: bool = False) -> ProfileSet:
    """Load profiles from a directory, glob, path, or list thereof.

    Files that fail to parse or validate are rejected individually with a
    diagnostic; the rest still load.  Fails outright when nothing matches,
    when nothing valid remains, or when benchmarks mix without allow_mixed.
    """
    paths = _expand(source)
    if not paths:
        raise AnalysisError(f"no profiles matched {source!r}")
    profiles: list[tuple[Path, RunProfile]] = []
    rejected: list[tuple[Path, str]] = []
    for path in paths:
        try:
            profile = load_profile(path)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            rejected.append((path, f"unreadable profile: {exc}"))
            continue
        violations = validate_profile(profile)
        if violations:
            shown = "; ".join(violations[:3])
            if len(violations) > 3:
                shown += f"; ... {len(violations) - 3} more"
            rejected.append((path, f"schema violations: {shown}"))
            continue
        profiles.append((path, profile))
    if not profiles:
        detail = "; ".join(f"{p.name}: {why}" for p, why in rejected)
        raise AnalysisError(f"no valid profiles in {source!r} ({detail})")

    benchmarks = {p.meta.benchmark for _, p in profiles}
    if len(benchmarks) > 1 and not allow_mixed:
        raise AnalysisError(
            f"profiles mix benchmarks {sorted(benchmarks)}; pass --allow-mixed to combine")

    profiles.sort(key=lambda item: item[1].meta.nranks)
    seen: dict[int, Path] = {}
    for path, profile in profiles:
        n = profile.meta.nranks
        if n in seen and not allow_mixed:
            raise AnalysisError(
                f"duplicate rank count {n} ({seen[n].name} and {path.name}); "
                "analysis tables are keyed by nranks")
        seen.setdefault(n, path)
    return ProfileSet(profiles=[p for _, p in profiles],
                      paths=[path for path, _ in profiles],
                      rejected=rejected)


@dataclass
class MetricTable:
    """Rows keyed by group (nranks or level), one column per series."""

    name: str
    group_label: str
    groups: list
    columns: list[str]
    cells: dict[tuple, float] = field(default_factory=dict)
    provenance: dict[tuple, str] = field(default_factory=dict)

    def get(self, group, column: str) -> float:
        return self.cells[(group, column)]

    def rows(self) -> list[list]:
        out = []
        for g in self.groups:
            out.append([g] + [self.cells.get((g, c)) for c in self.columns])
        return out


def _summaries_named(profile: RunProfile, region: str) -> list[RegionSummary]:
    """Summaries whose innermost region name matches (any labels, any nesting)."""
    return [s for s in profile.summaries if s.region.name == region]


def _require_region(profile: RunProfile, path: Path, region: str) -> list[RegionSummary]:
    found = _summaries_named(profile, region)
    if not found:
        raise AnalysisError(f"region {region!r} absent from {path.name}")
    return found


def _require_elapsed(profile: RunProfile, path: Path) -> float:
    if profile.meta.elapsed_sec == 0:
        raise AnalysisError(
            f"{path.name}: elapsed_sec is 0, rate metrics are undefined")
    return profile.meta.elapsed_sec


def _rate_metric(pset: ProfileSet, region: str, counter: str, column: str) -> MetricTable:
    table = MetricTable(name=column, group_label="nranks",
                        groups=list(pset.nranks_list), columns=[column])
    for path, profile in zip(pset.paths, pset.profiles):
        matches = _require_region(profile, path, region)
        elapsed = _require_elapsed(profile, path)
        total = sum(getattr(s, counter) for s in matches)
        n = profile.meta.nranks
        table.cells[(n, column)] = total / elapsed / n
        table.provenance[(n, column)] = (
            f"{path.name}: sum({counter}) over {len(matches)} summaries / "
            f"elapsed {fmt_float(elapsed)} / {n} ranks")
    return table


def metric_bytes_per_sec(pset: ProfileSet, region: str) -> MetricTable:
    """Bytes sent per second per process for one region, per rank count."""
    return _rate_metric(pset, region, "bytes_sent_sum",
                        f"{region}_bytes_per_sec_per_process")


def metric_msgs_per_sec(pset: ProfileSet, region: str) -> MetricTable:
    """Messages sent per second per process for one region, per rank count."""
    return _rate_metric(pset, region, "sends_sum",
                        f"{region}_msgs_per_sec_per_process")


def metric_avg_time_per_rank(pset: ProfileSet, regions: Sequence[str]) -> MetricTable:
    """Mean inclusive region time across ranks, one column per region."""
    if not regions:
        raise AnalysisError("time-per-rank needs at least one region name")
    columns = [f"{r}_time_avg_sec" for r in regions]
    table = MetricTable(name="avg_time_per_rank_sec", group_label="nranks",
                        groups=list(pset.nranks_list), columns=columns)
    for path, profile in zip(pset.paths, pset.profiles):
        n = profile.meta.nranks
        for region, column in zip(regions, columns):
            matches = _require_region(profile, path, region)
            table.cells[(n, column)] = sum(s.time_avg for s in matches)
            table.provenance[(n, column)] = (
                f"{path.name}: sum(time_avg) over {len(matches)} summaries")
    return table


PER_LEVEL_METRICS = ("bytes_sent", "src_ranks_avg")


def metric_per_level(pset: ProfileSet, metric: str, *,
                     include_idle: bool = False) -> MetricTable:
    """Per-multigrid-level series: total bytes sent, or the mean across ranks
    of each rank's max distinct source count at that level (by default over
    ranks that actually received at the level)."""
    if metric not in PER_LEVEL_METRICS:
        raise AnalysisError(f"unknown per-level metric {metric!r}; "
                            f"expected one of {PER_LEVEL_METRICS}")
    levels: set[int] = set()
    for profile in pset.profiles:
        for s in profile.summaries:
            lv = s.region.label_dict().get("level")
            if lv is not None:
                levels.add(int(lv))
    if not levels:
        raise AnalysisError("no 'level' labels found in the loaded profiles")
    level_list = sorted(levels)
    columns = [f"level_{lv}" for lv in level_list]
    table = MetricTable(name=f"{metric}_per_level", group_label="nranks",
                        groups=list(pset.nranks_list), columns=columns)

    for path, profile in zip(pset.paths, pset.profiles):
        n = profile.meta.nranks
        if metric == "bytes_sent":
            for lv, column in zip(level_list, columns):
                total = 0
                feeders = 0
                for s in profile.summaries:
                    if s.region.label_dict().get("level") == str(lv):
                        total += s.bytes_sent_sum
                        feeders += 1
                if feeders:
                    table.cells[(n, column)] = float(total)
                    table.provenance[(n, column)] = (
                        f"{path.name}: sum(bytes_sent_sum) over {feeders} summaries")
        else:
            if profile.per_rank is None:
                raise AnalysisError(
                    f"{path.name}: src-ranks-per-level needs per-rank records; "
                    "rerun the experiment with --per-rank")
            for lv, column in zip(level_list, columns):
                per_rank_max: dict[int, int] = {}
                participating: set[int] = set()
                for st in profile.per_rank:
                    if st.region.label_dict().get("level") != str(lv):
                        continue
                    per_rank_max[st.rank] = max(per_rank_max.get(st.rank, 0), st.src_ranks_max)
                    if st.recvs > 0:
                        participating.add(st.rank)
                if not per_rank_max:
                    continue
                if include_idle:
                    value = sum(per_rank_max.values()) / n
                    basis = f"all {n} ranks"
                else:
                    if not participating:
                        continue
                    value = sum(per_rank_max[r] for r in participating) / len(participating)
                    basis = f"{len(participating)} receiving ranks"
                table.cells[(n, column)] = value
                table.provenance[(n, column)] = f"{path.name}: mean(src_ranks_max) over {basis}"
    return table


def emit_csv(table: MetricTable, path: str | Path) -> Path:
    """Write the table with a header row and 9-significant-digit floats."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([table.group_label] + table.columns)
        for row in table.rows():
            text = [str(row[0])]
            for value in row[1:]:
                if value is None:
                    text.append("")
                elif isinstance(value, float):
                    text.append(fmt_float(value))
                else:
                    text.append(str(value))
            writer.writerow(text)
    return path


def format_table(table: MetricTable) -> str:
    """Fixed-width text rendering for terminal output."""
    headers = [table.group_label] + table.columns
    rows = [[str(r[0])] + [fmt_float(v) if isinstance(v, float) else ("" if v is None else str(v))
                           for v in r[1:]]
            for r in table.rows()]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    for r in rows:
        lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)
