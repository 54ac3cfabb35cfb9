"""Shared data types, validation rules, and the canonical profile schema.

Everything that touches disk goes through the canonical JSON writer in this
module: keys in schema order, ranks ascending, regions in first-begin order,
floats printed with 9 significant digits.  Profiles are quantized to that
precision when they are built, so parse -> serialize round-trips are
byte-identical and summaries recompute exactly from per-rank records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

PROFILE_SUFFIX = ".commprof.json"

BENCHMARKS = ("halo3d", "sweep", "amg_vcycle", "lag_step")
SCALING_MODES = ("weak", "strong")

#: Sentinel destination for collectives without a single peer rank.
ALL_RANKS = "all"


def quantize(x: float) -> float:
    """Round a float to 9 significant digits (the on-disk precision)."""
    return float(format(x, ".9g"))


def fmt_float(x: float) -> str:
    """Canonical 9-significant-digit float text; always parses back as float."""
    s = format(x, ".9g")
    if "." not in s and "e" not in s and "E" not in s:
        s += ".0"
    return s


def canonical_json(doc: Any) -> str:
    """Serialize a document deterministically (schema-ordered dicts assumed)."""
    out: list[str] = []
    _canon(doc, out, 0)
    out.append("\n")
    return "".join(out)


def _canon(value: Any, out: list[str], depth: int) -> None:
    pad = "  " * depth
    inner = "  " * (depth + 1)
    if isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(fmt_float(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif value is None:
        out.append("null")
    elif isinstance(value, dict):
        if not value:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(value.items()):
            out.append(inner)
            out.append(json.dumps(str(k), ensure_ascii=False))
            out.append(": ")
            _canon(v, out, depth + 1)
            out.append(",\n" if i < len(value) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(value, (list, tuple)):
        if not value:
            out.append("[]")
            return
        # Scalar lists stay on one line; lists of containers get one per line.
        if all(not isinstance(v, (dict, list, tuple)) for v in value):
            out.append("[")
            for i, v in enumerate(value):
                _canon(v, out, depth + 1)
                if i < len(value) - 1:
                    out.append(", ")
            out.append("]")
        else:
            out.append("[\n")
            for i, v in enumerate(value):
                out.append(inner)
                _canon(v, out, depth + 1)
                out.append(",\n" if i < len(value) - 1 else "\n")
            out.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(value).__name__}")


# ---------------------------------------------------------------------------
# Region identity


@dataclass(frozen=True)
class RegionPath:
    """A nesting path of region names (outermost first) plus the innermost
    begin's labels.  Hashable, so it doubles as the stats accumulation key."""

    names: tuple[str, ...] = ()
    labels: tuple[tuple[str, str], ...] = ()

    @classmethod
    def make(cls, names: Iterable[str], labels: Mapping[str, str] | None = None) -> "RegionPath":
        return cls(tuple(names), tuple(sorted((labels or {}).items())))

    @property
    def name(self) -> str:
        """Innermost region name ('' outside any region)."""
        return self.names[-1] if self.names else ""

    def label_dict(self) -> dict[str, str]:
        return dict(self.labels)

    def display(self) -> str:
        text = "/".join(self.names)
        if self.labels:
            text += "{" + ",".join(f"{k}={v}" for k, v in self.labels) + "}"
        return text

    def to_doc(self) -> dict[str, Any]:
        return {"names": list(self.names), "labels": dict(self.labels)}

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "RegionPath":
        return cls.make(doc.get("names", []), doc.get("labels", {}))


EMPTY_PATH = RegionPath()


# ---------------------------------------------------------------------------
# Events


@dataclass(slots=True)
class MessageEvent:
    """One point-to-point or collective occurrence as seen by one rank."""

    seq: int
    kind: str  # send | recv | collective
    src: int
    dst: int | str  # rank id; collectives may use root or ALL_RANKS
    bytes: int
    region: RegionPath
    op: str

    def to_doc(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "src": self.src,
            "dst": self.dst,
            "bytes": self.bytes,
            "region": self.region.to_doc(),
            "op": self.op,
        }


# ---------------------------------------------------------------------------
# Per-rank and cross-rank statistics

_STAT_INT_FIELDS = (
    "instances",
    "sends",
    "recvs",
    "bytes_sent_total",
    "bytes_recv_total",
    "msg_sent_min",
    "msg_sent_max",
    "msg_recv_min",
    "msg_recv_max",
    "dest_ranks_min",
    "dest_ranks_max",
    "src_ranks_min",
    "src_ranks_max",
    "colls",
)


@dataclass
class RegionCommStats:
    """Per-rank tallies for one region over a whole run.

    Message-size extrema are per message across all instances; distinct
    source/destination extrema are per-instance set cardinalities reduced
    across instances.
    """

    rank: int
    region: RegionPath
    instances: int = 0
    sends: int = 0
    recvs: int = 0
    bytes_sent_total: int = 0
    bytes_recv_total: int = 0
    msg_sent_min: int = 0
    msg_sent_max: int = 0
    msg_recv_min: int = 0
    msg_recv_max: int = 0
    dest_ranks_min: int = 0
    dest_ranks_max: int = 0
    src_ranks_min: int = 0
    src_ranks_max: int = 0
    colls: int = 0
    time_sec: float = 0.0

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"rank": self.rank, "region": self.region.to_doc()}
        for f in _STAT_INT_FIELDS:
            doc[f] = getattr(self, f)
        doc["time_sec"] = self.time_sec
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "RegionCommStats":
        kwargs = {f: int(doc[f]) for f in _STAT_INT_FIELDS}
        return cls(
            rank=int(doc["rank"]),
            region=RegionPath.from_doc(doc["region"]),
            time_sec=float(doc["time_sec"]),
            **kwargs,
        )


_SUMMARY_FIELDS = (
    "sends_min",
    "sends_max",
    "recvs_min",
    "recvs_max",
    "dest_ranks_min",
    "dest_ranks_max",
    "src_ranks_min",
    "src_ranks_max",
    "msg_sent_min",
    "msg_sent_max",
    "msg_recv_min",
    "msg_recv_max",
    "colls_min",
    "colls_max",
    "sends_sum",
    "recvs_sum",
    "bytes_sent_sum",
    "bytes_recv_sum",
    "colls_sum",
)


@dataclass
class RegionSummary:
    """Cross-rank reduction of RegionCommStats for one region."""

    region: RegionPath
    sends_min: int = 0
    sends_max: int = 0
    recvs_min: int = 0
    recvs_max: int = 0
    dest_ranks_min: int = 0
    dest_ranks_max: int = 0
    src_ranks_min: int = 0
    src_ranks_max: int = 0
    msg_sent_min: int = 0
    msg_sent_max: int = 0
    msg_recv_min: int = 0
    msg_recv_max: int = 0
    colls_min: int = 0
    colls_max: int = 0
    sends_sum: int = 0
    recvs_sum: int = 0
    bytes_sent_sum: int = 0
    bytes_recv_sum: int = 0
    colls_sum: int = 0
    avg_send_size: float = 0.0
    time_avg: float = 0.0
    time_min: float = 0.0
    time_max: float = 0.0

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"region": self.region.to_doc()}
        for f in _SUMMARY_FIELDS:
            doc[f] = getattr(self, f)
        doc["avg_send_size"] = self.avg_send_size
        doc["time_avg"] = self.time_avg
        doc["time_min"] = self.time_min
        doc["time_max"] = self.time_max
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "RegionSummary":
        kwargs = {f: int(doc[f]) for f in _SUMMARY_FIELDS}
        return cls(
            region=RegionPath.from_doc(doc["region"]),
            avg_send_size=float(doc["avg_send_size"]),
            time_avg=float(doc["time_avg"]),
            time_min=float(doc["time_min"]),
            time_max=float(doc["time_max"]),
            **kwargs,
        )


def summarize_stats(stats: Iterable[RegionCommStats]) -> list[RegionSummary]:
    """Reduce per-rank records across ranks, preserving first-encounter order.

    Input is expected ordered rank-major with each rank's regions in
    first-begin order, which makes the output order the canonical
    "first-begin" region order of a run.
    """
    groups: dict[RegionPath, list[RegionCommStats]] = {}
    for st in stats:
        groups.setdefault(st.region, []).append(st)

    out = []
    for region, recs in groups.items():
        s = RegionSummary(region=region)
        s.sends_min = min(r.sends for r in recs)
        s.sends_max = max(r.sends for r in recs)
        s.recvs_min = min(r.recvs for r in recs)
        s.recvs_max = max(r.recvs for r in recs)
        s.dest_ranks_min = min(r.dest_ranks_min for r in recs)
        s.dest_ranks_max = max(r.dest_ranks_max for r in recs)
        s.src_ranks_min = min(r.src_ranks_min for r in recs)
        s.src_ranks_max = max(r.src_ranks_max for r in recs)
        senders = [r for r in recs if r.sends > 0]
        receivers = [r for r in recs if r.recvs > 0]
        s.msg_sent_min = min((r.msg_sent_min for r in senders), default=0)
        s.msg_sent_max = max((r.msg_sent_max for r in senders), default=0)
        s.msg_recv_min = min((r.msg_recv_min for r in receivers), default=0)
        s.msg_recv_max = max((r.msg_recv_max for r in receivers), default=0)
        s.colls_min = min(r.colls for r in recs)
        s.colls_max = max(r.colls for r in recs)
        s.sends_sum = sum(r.sends for r in recs)
        s.recvs_sum = sum(r.recvs for r in recs)
        s.bytes_sent_sum = sum(r.bytes_sent_total for r in recs)
        s.bytes_recv_sum = sum(r.bytes_recv_total for r in recs)
        s.colls_sum = sum(r.colls for r in recs)
        s.avg_send_size = quantize(s.bytes_sent_sum / s.sends_sum) if s.sends_sum else 0.0
        times = [r.time_sec for r in recs]
        s.time_avg = quantize(sum(times) / len(times))
        s.time_min = min(times)
        s.time_max = max(times)
        out.append(s)
    return out


# ---------------------------------------------------------------------------
# Run profiles

_KERNEL_PARAM_KEYS = (
    "fields_per_cell",
    "element_bytes",
    "iterations",
    "msgs_per_neighbor",
    "coarsen_min",
    "timesteps",
)

KERNEL_PARAM_DEFAULTS = {
    "fields_per_cell": 1,
    "element_bytes": 8,
    "iterations": 1,
    "msgs_per_neighbor": 36,
    "coarsen_min": 4,
    "timesteps": 5,
}


@dataclass
class RunMeta:
    benchmark: str
    scaling: str
    nranks: int
    grid: tuple[int, int, int]
    problem: tuple[int, int, int]  # per-rank for weak, global for strong
    kernel_params: dict[str, int]
    seed: int
    elapsed_sec: float

    def to_doc(self) -> dict[str, Any]:
        return {
            "benchmark": self.benchmark,
            "scaling": self.scaling,
            "nranks": self.nranks,
            "grid": list(self.grid),
            "problem": list(self.problem),
            "kernel_params": {k: self.kernel_params[k] for k in _KERNEL_PARAM_KEYS},
            "seed": self.seed,
            "elapsed_sec": self.elapsed_sec,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "RunMeta":
        return cls(
            benchmark=str(doc["benchmark"]),
            scaling=str(doc["scaling"]),
            nranks=int(doc["nranks"]),
            grid=tuple(int(v) for v in doc["grid"]),
            problem=tuple(int(v) for v in doc["problem"]),
            kernel_params={k: int(v) for k, v in doc["kernel_params"].items()},
            seed=int(doc["seed"]),
            elapsed_sec=float(doc["elapsed_sec"]),
        )


@dataclass
class RunProfile:
    """One run's metadata plus its region summaries; the on-disk unit."""

    meta: RunMeta
    summaries: list[RegionSummary]
    per_rank: list[RegionCommStats] | None = None

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "meta": self.meta.to_doc(),
            "summaries": [s.to_doc() for s in self.summaries],
        }
        if self.per_rank is not None:
            doc["per_rank"] = [r.to_doc() for r in self.per_rank]
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "RunProfile":
        per_rank = None
        if "per_rank" in doc:
            per_rank = [RegionCommStats.from_doc(d) for d in doc["per_rank"]]
        return cls(
            meta=RunMeta.from_doc(doc["meta"]),
            summaries=[RegionSummary.from_doc(d) for d in doc["summaries"]],
            per_rank=per_rank,
        )

    def summary_by_region(self) -> dict[RegionPath, RegionSummary]:
        return {s.region: s for s in self.summaries}


def dumps_profile(profile: RunProfile) -> str:
    return canonical_json(profile.to_doc())


def parse_profile(text: str) -> RunProfile:
    return RunProfile.from_doc(json.loads(text))


def write_profile(profile: RunProfile, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_profile(profile), encoding="utf-8")
    return path


def load_profile(path: str | Path) -> RunProfile:
    return parse_profile(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Experiment specs


@dataclass
class ExperimentSpec:
    """Declarative description of one scaling series."""

    benchmark: str
    scaling: str
    grids: list[tuple[int, int, int]]
    base_problem: tuple[int, int, int]
    iterations: int = 1
    kernel_params: dict[str, int] = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "profiles"

    def resolved_params(self) -> dict[str, int]:
        params = dict(KERNEL_PARAM_DEFAULTS)
        params.update(self.kernel_params)
        params["iterations"] = self.iterations
        return params

    def to_doc(self) -> dict[str, Any]:
        return {
            "benchmark": self.benchmark,
            "scaling": self.scaling,
            "grids": [list(g) for g in self.grids],
            "base_problem": list(self.base_problem),
            "iterations": self.iterations,
            "kernel_params": dict(self.kernel_params),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }


class ExperimentError(ValueError):
    """Raised for malformed or inconsistent experiment specifications."""


def experiment_from_doc(doc: Mapping[str, Any]) -> ExperimentSpec:
    """Validate a parsed experiment document and fill defaults."""
    benchmark = doc.get("benchmark")
    if benchmark not in BENCHMARKS:
        raise ExperimentError(f"unknown benchmark {benchmark!r}; expected one of {BENCHMARKS}")
    scaling = doc.get("scaling")
    if scaling not in SCALING_MODES:
        raise ExperimentError(f"unknown scaling mode {scaling!r}; expected one of {SCALING_MODES}")
    grids_doc = doc.get("grids") or []
    if not grids_doc:
        raise ExperimentError("grids list is empty")
    grids = []
    for g in grids_doc:
        g = tuple(int(v) for v in g)
        if len(g) != 3 or any(v < 1 for v in g):
            raise ExperimentError(f"grid {g} must be three dims >= 1")
        grids.append(g)
    base = tuple(int(v) for v in doc.get("base_problem", ()))
    if len(base) != 3 or any(v < 1 for v in base):
        raise ExperimentError(f"base_problem {base} must be three dims >= 1")
    if scaling == "strong":
        for g in grids:
            for axis in range(3):
                if base[axis] % g[axis] != 0:
                    raise ExperimentError(
                        f"strong scaling: problem dim {base[axis]} not divisible by "
                        f"grid dim {g[axis]} on axis {axis} (grid {g})"
                    )
    params = {}
    for k, v in (doc.get("kernel_params") or {}).items():
        if k not in KERNEL_PARAM_DEFAULTS:
            raise ExperimentError(f"unknown kernel parameter {k!r}")
        params[k] = int(v)
    return ExperimentSpec(
        benchmark=benchmark,
        scaling=scaling,
        grids=grids,
        base_problem=base,
        iterations=int(doc.get("iterations", 1)),
        kernel_params=params,
        seed=int(doc.get("seed", 0)),
        output_dir=str(doc.get("output_dir", "profiles")),
    )


# ---------------------------------------------------------------------------
# Validation


def validate_profile(profile: RunProfile) -> list[str]:
    """Check every type invariant; returns one description per violation."""
    v: list[str] = []
    meta = profile.meta
    px, py, pz = meta.grid
    if meta.nranks != px * py * pz:
        v.append(f"meta: nranks {meta.nranks} != grid product {px * py * pz}")
    if meta.nranks < 1:
        v.append(f"meta: nranks {meta.nranks} < 1")
    if meta.scaling not in SCALING_MODES:
        v.append(f"meta: unknown scaling mode {meta.scaling!r}")
    if any(d < 1 for d in meta.problem):
        v.append(f"meta: problem dims {meta.problem} must be >= 1")
    if meta.elapsed_sec < 0:
        v.append(f"meta: elapsed_sec {meta.elapsed_sec} < 0")

    peer_cap = meta.nranks - 1

    for s in profile.summaries:
        where = f"summary[{s.region.display()}]"
        if not s.region.names:
            v.append(f"{where}: region names empty")
        for base in ("sends", "recvs", "dest_ranks", "src_ranks", "msg_sent", "msg_recv", "colls"):
            lo, hi = getattr(s, base + "_min"), getattr(s, base + "_max")
            if lo > hi:
                v.append(f"{where}: {base}_min {lo} > {base}_max {hi}")
        if s.time_min > s.time_max:
            v.append(f"{where}: time_min {s.time_min} > time_max {s.time_max}")
        if s.dest_ranks_max > peer_cap:
            v.append(f"{where}: dest_ranks_max {s.dest_ranks_max} > nranks-1 {peer_cap}")
        if s.src_ranks_max > peer_cap:
            v.append(f"{where}: src_ranks_max {s.src_ranks_max} > nranks-1 {peer_cap}")
        if s.sends_sum == 0:
            if s.bytes_sent_sum or s.msg_sent_min or s.msg_sent_max or s.avg_send_size:
                v.append(f"{where}: zero sends but nonzero send bytes or extrema")
        else:
            if s.msg_sent_max > s.bytes_sent_sum:
                v.append(f"{where}: msg_sent_max exceeds bytes_sent_total "
                         f"({s.msg_sent_max} > {s.bytes_sent_sum})")
            expect = quantize(s.bytes_sent_sum / s.sends_sum)
            if s.avg_send_size != expect:
                v.append(f"{where}: avg_send_size {s.avg_send_size} != "
                         f"bytes_sent_sum/sends_sum {expect}")
        if s.recvs_sum == 0 and (s.bytes_recv_sum or s.msg_recv_min or s.msg_recv_max):
            v.append(f"{where}: zero recvs but nonzero recv bytes or extrema")
        for f in _SUMMARY_FIELDS:
            if getattr(s, f) < 0:
                v.append(f"{where}: {f} negative")

    if profile.per_rank is not None:
        for r in profile.per_rank:
            where = f"per_rank[rank={r.rank} region={r.region.display()}]"
            if not 0 <= r.rank < meta.nranks:
                v.append(f"{where}: rank out of range")
            if r.sends == 0:
                if r.msg_sent_min or r.msg_sent_max or r.bytes_sent_total:
                    v.append(f"{where}: zero sends but nonzero send bytes or extrema")
            else:
                if r.msg_sent_min > r.msg_sent_max:
                    v.append(f"{where}: msg_sent_min {r.msg_sent_min} > msg_sent_max {r.msg_sent_max}")
                if r.msg_sent_max > r.bytes_sent_total:
                    v.append(f"{where}: msg_sent_max exceeds bytes_sent_total "
                             f"({r.msg_sent_max} > {r.bytes_sent_total})")
            if r.recvs == 0:
                if r.msg_recv_min or r.msg_recv_max or r.bytes_recv_total:
                    v.append(f"{where}: zero recvs but nonzero recv bytes or extrema")
            else:
                if r.msg_recv_min > r.msg_recv_max:
                    v.append(f"{where}: msg_recv_min {r.msg_recv_min} > msg_recv_max {r.msg_recv_max}")
                if r.msg_recv_max > r.bytes_recv_total:
                    v.append(f"{where}: msg_recv_max exceeds bytes_recv_total "
                             f"({r.msg_recv_max} > {r.bytes_recv_total})")
            if r.dest_ranks_min > r.dest_ranks_max:
                v.append(f"{where}: dest_ranks_min {r.dest_ranks_min} > dest_ranks_max {r.dest_ranks_max}")
            if r.dest_ranks_max > peer_cap:
                v.append(f"{where}: dest_ranks_max {r.dest_ranks_max} > nranks-1 {peer_cap}")
            if r.src_ranks_min > r.src_ranks_max:
                v.append(f"{where}: src_ranks_min {r.src_ranks_min} > src_ranks_max {r.src_ranks_max}")
            if r.src_ranks_max > peer_cap:
                v.append(f"{where}: src_ranks_max {r.src_ranks_max} > nranks-1 {peer_cap}")
            if r.time_sec < 0:
                v.append(f"{where}: time_sec {r.time_sec} < 0")
            if r.instances < 0:
                v.append(f"{where}: instances negative")

        # Summary/per-rank coherence: stored summaries must be reproducible.
        recomputed = {s.region: s for s in summarize_stats(profile.per_rank)}
        stored = profile.summary_by_region()
        for region, st in stored.items():
            rec = recomputed.get(region)
            where = f"summary[{region.display()}]"
            if rec is None:
                v.append(f"{where}: no per-rank records for this region")
                continue
            for f in _SUMMARY_FIELDS + ("avg_send_size", "time_avg", "time_min", "time_max"):
                a, b = getattr(st, f), getattr(rec, f)
                if a != b:
                    v.append(f"{where}: {f} mismatch (stored {a}, recomputed from per_rank {b})")
        for region in recomputed:
            if region not in stored:
                v.append(f"per_rank[region={region.display()}]: region missing from summaries")

    return v
