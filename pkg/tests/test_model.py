from __future__ import annotations

import copy
import json

import pytest
from hypothesis import given, strategies as st

from commprof import model
from conftest import run_kernel

from commprof.model import (
    ExperimentError,
    RegionPath,
    dumps_profile,
    experiment_from_doc,
    fmt_float,
    parse_profile,
    quantize,
    validate_profile,
)


def test_fmt_float_always_reparses_as_float():
    assert fmt_float(125000.0) == "125000.0"
    assert fmt_float(0.5) == "0.5"
    assert fmt_float(1e20) == "1e+20"
    assert isinstance(json.loads(fmt_float(3.0)), float)


@given(st.floats(min_value=0.0, max_value=1e12, allow_nan=False, allow_infinity=False))
def test_quantize_is_idempotent_through_text(x):
    q = quantize(x)
    assert float(fmt_float(q)) == q
    assert fmt_float(quantize(float(fmt_float(q)))) == fmt_float(q)


def test_region_path_normalizes_labels():
    a = RegionPath.make(["main", "halo_exchange"], {"level": "1", "axis": "x"})
    b = RegionPath.make(("main", "halo_exchange"), {"axis": "x", "level": "1"})
    assert a == b
    assert a.name == "halo_exchange"
    assert a.display() == "main/halo_exchange{axis=x,level=1}"
    assert RegionPath.from_doc(a.to_doc()) == a


def _small_profile(per_rank=True):
    out, summaries = run_kernel("halo3d", (2, 2, 2), (8, 8, 8), iterations=2)
    meta = model.RunMeta(benchmark="halo3d", scaling="weak", nranks=8, grid=(2, 2, 2),
                         problem=(8, 8, 8), kernel_params=dict(model.KERNEL_PARAM_DEFAULTS),
                         seed=0, elapsed_sec=quantize(out.elapsed_sec))
    return model.RunProfile(meta=meta, summaries=summaries,
                            per_rank=out.stats if per_rank else None)


def test_profile_round_trip_is_byte_identical():
    profile = _small_profile()
    text = dumps_profile(profile)
    again = dumps_profile(parse_profile(text))
    assert text == again


def test_round_trip_without_per_rank():
    profile = _small_profile(per_rank=False)
    text = dumps_profile(profile)
    parsed = parse_profile(text)
    assert parsed.per_rank is None
    assert dumps_profile(parsed) == text


def test_validate_clean_profile_is_empty():
    assert validate_profile(_small_profile()) == []


def test_validate_flags_msg_sent_max_above_total():
    profile = _small_profile()
    bad = profile.per_rank[1]
    assert bad.sends >= 1
    bad.msg_sent_max = bad.bytes_sent_total + 1
    violations = [v for v in validate_profile(profile)
                  if "msg_sent_max exceeds bytes_sent_total" in v]
    assert len(violations) == 1
    assert f"rank={bad.rank}" in violations[0]


def test_validate_zero_communication_profile():
    out, summaries = run_kernel("halo3d", (1, 1, 1), (8, 8, 8))
    meta = model.RunMeta(benchmark="halo3d", scaling="weak", nranks=1, grid=(1, 1, 1),
                         problem=(8, 8, 8), kernel_params=dict(model.KERNEL_PARAM_DEFAULTS),
                         seed=0, elapsed_sec=quantize(out.elapsed_sec))
    profile = model.RunProfile(meta=meta, summaries=summaries, per_rank=out.stats)
    assert all(s.sends_sum == 0 for s in summaries)
    assert validate_profile(profile) == []


def test_validate_names_perturbed_summary():
    profile = _small_profile()
    target = profile.summaries[0]
    target.sends_sum += 1
    violations = validate_profile(profile)
    naming = [v for v in violations if target.region.display() in v and "sends_sum" in v]
    assert naming, violations


def test_validate_rejects_bad_grid_product():
    profile = _small_profile()
    profile.meta.nranks = 9
    assert any("grid product" in v for v in validate_profile(profile))


def test_summaries_recompute_exactly_from_parsed_per_rank():
    # Coherence must survive the trip through 9-significant-digit text.
    text = dumps_profile(_small_profile())
    parsed = parse_profile(text)
    recomputed = {s.region: s for s in model.summarize_stats(parsed.per_rank)}
    for stored in parsed.summaries:
        assert recomputed[stored.region] == stored


# -- experiment specs ----------------------------------------------------------


def _table2_doc(**overrides):
    doc = {
        "benchmark": "halo3d",
        "scaling": "weak",
        "grids": [[4, 4, 4], [8, 4, 4], [8, 8, 4], [8, 8, 8]],
        "base_problem": [32, 32, 16],
    }
    doc.update(overrides)
    return doc


def test_experiment_weak_series_ranks():
    spec = experiment_from_doc(_table2_doc())
    assert [g[0] * g[1] * g[2] for g in spec.grids] == [64, 128, 256, 512]


def test_experiment_defaults_msgs_per_neighbor():
    spec = experiment_from_doc(_table2_doc())
    assert spec.resolved_params()["msgs_per_neighbor"] == 36
    assert spec.resolved_params()["coarsen_min"] == 4


def test_experiment_strong_divisibility_error():
    doc = _table2_doc(benchmark="lag_step", scaling="strong",
                      grids=[[3, 3, 3]], base_problem=[32, 32, 32])
    with pytest.raises(ExperimentError, match="not divisible"):
        experiment_from_doc(doc)


def test_experiment_unknown_benchmark():
    with pytest.raises(ExperimentError, match="unknown benchmark"):
        experiment_from_doc(_table2_doc(benchmark="hpl"))


def test_experiment_empty_grids():
    with pytest.raises(ExperimentError, match="grids"):
        experiment_from_doc(_table2_doc(grids=[]))


def test_experiment_rejects_unknown_kernel_param():
    with pytest.raises(ExperimentError, match="unknown kernel parameter"):
        experiment_from_doc(_table2_doc(kernel_params={"warp_factor": 9}))


def test_experiment_full_doc_round_trip():
    spec = experiment_from_doc(_table2_doc(kernel_params={"msgs_per_neighbor": 12}, seed=7))
    again = experiment_from_doc(spec.to_doc())
    assert again == spec
