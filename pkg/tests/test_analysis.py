from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET

import pytest

from commprof import analysis, model
from commprof.analysis import (
    AnalysisError,
    emit_csv,
    load_profiles,
    metric_avg_time_per_rank,
    metric_bytes_per_sec,
    metric_msgs_per_sec,
    metric_per_level,
)
from commprof.model import (
    KERNEL_PARAM_DEFAULTS,
    RegionPath,
    RegionSummary,
    RunMeta,
    RunProfile,
    quantize,
    write_profile,
)
from commprof.runner import load_experiment, run_experiment

from conftest import write_experiment


def _synthetic_profile(nranks=4, bytes_sent=10**6, sends=1000, elapsed=2.0,
                       benchmark="halo3d", region="halo_exchange"):
    path = RegionPath.make(["main", region])
    summary = RegionSummary(region=path, sends_min=sends // nranks, sends_max=sends // nranks,
                            recvs_min=sends // nranks, recvs_max=sends // nranks,
                            dest_ranks_min=1, dest_ranks_max=1,
                            src_ranks_min=1, src_ranks_max=1,
                            msg_sent_min=1, msg_sent_max=bytes_sent // sends if sends else 0,
                            msg_recv_min=1, msg_recv_max=bytes_sent // sends if sends else 0,
                            sends_sum=sends, recvs_sum=sends,
                            bytes_sent_sum=bytes_sent, bytes_recv_sum=bytes_sent,
                            avg_send_size=quantize(bytes_sent / sends) if sends else 0.0,
                            time_avg=0.5, time_min=0.4, time_max=0.6)
    grid = (nranks, 1, 1)
    meta = RunMeta(benchmark=benchmark, scaling="weak", nranks=nranks, grid=grid,
                   problem=(8, 8, 8), kernel_params=dict(KERNEL_PARAM_DEFAULTS),
                   seed=0, elapsed_sec=elapsed)
    return RunProfile(meta=meta, summaries=[summary])


@pytest.fixture(scope="module")
def halo_series(tmp_path_factory):
    """Weak-scaling halo3d series written to disk (8 .. 64 ranks)."""
    out = tmp_path_factory.mktemp("halo_series")
    spec_path = write_experiment(
        out / "exp.json",
        benchmark="halo3d", scaling="weak",
        grids=[[2, 2, 2], [4, 2, 2], [4, 4, 2], [4, 4, 4]],
        base_problem=[16, 32, 32])
    report = run_experiment(load_experiment(spec_path), out_dir=out / "profiles")
    assert report.ok
    return out / "profiles"


@pytest.fixture(scope="module")
def amg_series(tmp_path_factory):
    out = tmp_path_factory.mktemp("amg_series")
    spec_path = write_experiment(
        out / "exp.json",
        benchmark="amg_vcycle", scaling="weak",
        grids=[[2, 2, 2], [4, 4, 4]],
        base_problem=[32, 32, 16])
    report = run_experiment(load_experiment(spec_path), out_dir=out / "profiles",
                            per_rank=True)
    assert report.ok
    return out / "profiles"


def test_load_profiles_from_directory(halo_series):
    pset = load_profiles(halo_series)
    assert pset.nranks_list == [8, 16, 32, 64]
    assert pset.benchmark == "halo3d"
    assert not pset.rejected


def test_load_profiles_glob(halo_series):
    pset = load_profiles(str(halo_series / "halo3d_*.commprof.json"))
    assert len(pset.profiles) == 4


def test_empty_glob_is_an_error(tmp_path):
    with pytest.raises(AnalysisError, match="no profiles matched"):
        load_profiles(str(tmp_path / "*.commprof.json"))


def test_corrupted_file_rejected_by_name_others_load(halo_series, tmp_path):
    target = tmp_path / "mixed"
    target.mkdir()
    for p in halo_series.glob("*.commprof.json"):
        (target / p.name).write_bytes(p.read_bytes())
    victim = target / "halo3d_4x2x2.commprof.json"
    doc = json.loads(victim.read_text())
    doc["summaries"][1]["sends_sum"] += 1  # breaks per-summary consistency
    victim.write_text(json.dumps(doc), encoding="utf-8")

    pset = load_profiles(target)
    assert len(pset.profiles) == 3
    assert len(pset.rejected) == 1
    path, why = pset.rejected[0]
    assert path.name == "halo3d_4x2x2.commprof.json"
    assert "sends_sum" in why or "avg_send_size" in why


def test_mixed_benchmarks_need_flag(tmp_path):
    write_profile(_synthetic_profile(nranks=2, benchmark="halo3d"),
                  tmp_path / "a.commprof.json")
    write_profile(_synthetic_profile(nranks=4, benchmark="sweep"),
                  tmp_path / "b.commprof.json")
    with pytest.raises(AnalysisError, match="allow-mixed"):
        load_profiles(tmp_path)
    pset = load_profiles(tmp_path, allow_mixed=True)
    assert len(pset.profiles) == 2


def test_duplicate_rank_counts_rejected(tmp_path):
    write_profile(_synthetic_profile(nranks=4), tmp_path / "a.commprof.json")
    write_profile(_synthetic_profile(nranks=4), tmp_path / "b.commprof.json")
    with pytest.raises(AnalysisError, match="duplicate rank count"):
        load_profiles(tmp_path)


def test_grouping_never_drops_rows(halo_series):
    pset = load_profiles(halo_series)
    table = metric_bytes_per_sec(pset, "halo_exchange")
    assert len(table.groups) == len(pset.profiles)


# -- rate metrics -----------------------------------------------------------------


def test_bytes_per_sec_simple_arithmetic(tmp_path):
    write_profile(_synthetic_profile(nranks=4, bytes_sent=10**6, elapsed=2.0),
                  tmp_path / "a.commprof.json")
    table = metric_bytes_per_sec(load_profiles(tmp_path), "halo_exchange")
    assert table.get(4, table.columns[0]) == 125000.0


def test_bytes_per_sec_matches_hand_recomputation(halo_series):
    pset = load_profiles(halo_series)
    table = metric_bytes_per_sec(pset, "halo_exchange")
    for profile in pset.profiles:
        total = sum(s.bytes_sent_sum for s in profile.summaries
                    if s.region.name == "halo_exchange")
        expect = total / profile.meta.elapsed_sec / profile.meta.nranks
        assert table.get(profile.meta.nranks, table.columns[0]) == pytest.approx(expect, rel=1e-12)


def test_msgs_per_sec_matches_hand_recomputation(halo_series):
    pset = load_profiles(halo_series)
    table = metric_msgs_per_sec(pset, "halo_exchange")
    for profile in pset.profiles:
        total = sum(s.sends_sum for s in profile.summaries
                    if s.region.name == "halo_exchange")
        expect = total / profile.meta.elapsed_sec / profile.meta.nranks
        assert table.get(profile.meta.nranks, table.columns[0]) == pytest.approx(expect, rel=1e-12)


def test_zero_communication_region_gives_zero(tmp_path):
    profile = _synthetic_profile(nranks=2, bytes_sent=0, sends=0)
    write_profile(profile, tmp_path / "a.commprof.json")
    table = metric_bytes_per_sec(load_profiles(tmp_path), "halo_exchange")
    assert table.get(2, table.columns[0]) == 0.0


def test_zero_elapsed_is_undefined_metric(tmp_path):
    write_profile(_synthetic_profile(elapsed=0.0), tmp_path / "a.commprof.json")
    with pytest.raises(AnalysisError, match="elapsed_sec is 0"):
        metric_bytes_per_sec(load_profiles(tmp_path), "halo_exchange")


def test_region_absent_is_an_error(halo_series):
    pset = load_profiles(halo_series)
    with pytest.raises(AnalysisError, match="absent"):
        metric_bytes_per_sec(pset, "sweep_comm")


def test_rate_inverse_reconstructs_raw_counter(halo_series):
    pset = load_profiles(halo_series)
    for fn, counter in ((metric_bytes_per_sec, "bytes_sent_sum"),
                        (metric_msgs_per_sec, "sends_sum")):
        table = fn(pset, "halo_exchange")
        for profile in pset.profiles:
            n = profile.meta.nranks
            raw = sum(getattr(s, counter) for s in profile.summaries
                      if s.region.name == "halo_exchange")
            value = table.get(n, table.columns[0])
            assert abs(value * n * profile.meta.elapsed_sec - raw) <= 1e-9 * max(raw, 1)


# -- time metric --------------------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_series(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep_series")
    spec_path = write_experiment(
        out / "exp.json",
        benchmark="sweep", scaling="weak",
        grids=[[2, 2, 1], [2, 2, 2]],
        base_problem=[16, 16, 16])
    report = run_experiment(load_experiment(spec_path), out_dir=out / "profiles")
    assert report.ok
    return out / "profiles"


def test_time_per_rank_inclusive_nesting(sweep_series):
    pset = load_profiles(sweep_series)
    table = metric_avg_time_per_rank(pset, ["main", "solve", "sweep_comm"])
    assert len(table.columns) == 3
    for n in table.groups:
        main = table.get(n, "main_time_avg_sec")
        assert main >= table.get(n, "solve_time_avg_sec")
        assert main >= table.get(n, "sweep_comm_time_avg_sec")


def test_time_per_rank_single_rank_equals_that_rank(tmp_path):
    spec_path = write_experiment(
        tmp_path / "exp.json", benchmark="halo3d", scaling="weak",
        grids=[[1, 1, 1]], base_problem=[8, 8, 8])
    report = run_experiment(load_experiment(spec_path), out_dir=tmp_path / "p",
                            per_rank=True)
    profile = model.load_profile(report.paths[0])
    pset = load_profiles(tmp_path / "p")
    table = metric_avg_time_per_rank(pset, ["main"])
    (main_stat,) = [r for r in profile.per_rank if r.region.name == "main"]
    assert table.get(1, "main_time_avg_sec") == main_stat.time_sec


# -- per-level metrics ------------------------------------------------------------------


def test_per_level_bytes_fine_above_coarse(amg_series):
    pset = load_profiles(amg_series)
    table = metric_per_level(pset, "bytes_sent")
    assert table.columns[0] == "level_0"
    for n in table.groups:
        levels = [table.cells[(n, c)] for c in table.columns if (n, c) in table.cells]
        assert levels[0] == max(levels)
        fine = [v for v in levels[:-1]]
        assert all(fine[i] > fine[i + 1] for i in range(len(fine) - 1))


def test_per_level_src_ranks_redistribution_fan_in(amg_series):
    pset = load_profiles(amg_series)
    table = metric_per_level(pset, "src_ranks_avg")
    # 64-rank run has the redistributed level 3; every fine level stays <= 6.
    assert table.get(64, "level_3") >= 7
    for column in ("level_0", "level_1", "level_2"):
        assert table.get(64, column) <= 6
    # 8-rank run has no level 3 cell at all.
    assert (8, "level_3") not in table.cells


def test_per_level_include_idle_lowers_average(amg_series):
    pset = load_profiles(amg_series)
    focused = metric_per_level(pset, "src_ranks_avg")
    diluted = metric_per_level(pset, "src_ranks_avg", include_idle=True)
    assert diluted.get(64, "level_3") < focused.get(64, "level_3")


def test_per_level_single_level_degenerates(tmp_path):
    spec_path = write_experiment(
        tmp_path / "exp.json", benchmark="amg_vcycle", scaling="weak",
        grids=[[2, 2, 2]], base_problem=[8, 8, 8],
        kernel_params={"coarsen_min": 8})
    report = run_experiment(load_experiment(spec_path), out_dir=tmp_path / "p")
    pset = load_profiles(tmp_path / "p")
    table = metric_per_level(pset, "bytes_sent")
    assert table.columns == ["level_0"]


def test_per_level_requires_level_labels(halo_series):
    pset = load_profiles(halo_series)
    with pytest.raises(AnalysisError, match="level"):
        metric_per_level(pset, "bytes_sent")


def test_src_ranks_needs_per_rank_records(tmp_path, amg_series):
    spec_path = write_experiment(
        tmp_path / "exp.json", benchmark="amg_vcycle", scaling="weak",
        grids=[[2, 2, 2]], base_problem=[16, 16, 16])
    report = run_experiment(load_experiment(spec_path), out_dir=tmp_path / "p")
    pset = load_profiles(tmp_path / "p")
    with pytest.raises(AnalysisError, match="per-rank"):
        metric_per_level(pset, "src_ranks_avg")


# -- emitters -----------------------------------------------------------------------------


def test_csv_round_trips_and_matches_cells(halo_series, tmp_path):
    pset = load_profiles(halo_series)
    table = metric_bytes_per_sec(pset, "halo_exchange")
    path = emit_csv(table, tmp_path / "out.csv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["nranks"] + table.columns
    assert len(rows) == 1 + len(table.groups)
    for row in rows[1:]:
        n = int(row[0])
        assert row[1] == model.fmt_float(table.get(n, table.columns[0]))


def test_svg_is_well_formed_xml(halo_series, tmp_path):
    from commprof import charts

    pset = load_profiles(halo_series)
    table = metric_bytes_per_sec(pset, "halo_exchange")
    path = charts.render_table(table, tmp_path / "chart.svg")
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")


def test_svg_rendering_is_deterministic(amg_series, tmp_path):
    from commprof import charts

    pset = load_profiles(amg_series)
    table = metric_per_level(pset, "bytes_sent")
    a = charts.render_table(table, tmp_path / "a.svg")
    b = charts.render_table(table, tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()


def test_metric_recomputation_after_reload_is_identical(halo_series):
    first = metric_bytes_per_sec(load_profiles(halo_series), "halo_exchange")
    second = metric_bytes_per_sec(load_profiles(halo_series), "halo_exchange")
    assert first.cells == second.cells
