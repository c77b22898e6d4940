"""Record layout, aggregation arithmetic, and run determinism."""

import gzip
import os

import numpy as np
import pandas as pd
import pytest

from capire.config import load_settings, load_inputs
from capire.experiment import (Aggregator, ExperimentError, RECORD_HEADER,
                               aggregate_records, archetype_breakdown,
                               build_contexts, cohort_frame, encode_records,
                               factorial_main_effects, figure1_series,
                               iter_record_files, record_filename,
                               run_experiment, structural_at_semester,
                               write_report_data, write_tables)

ALL_IDS = ["A0B0C0", "A0B0C1", "A0B1C0", "A0B1C1",
           "A1B0C0", "A1B0C1", "A1B1C0", "A1B1C1"]

# published scenario outcomes, used as a pure-arithmetic fixture
TABLE2 = {
    "A0B0C0": (0.9996, 4.85), "A0B0C1": (0.9990, 6.07),
    "A0B1C0": (0.9896, 10.34), "A0B1C1": (0.9748, 13.20),
    "A1B0C0": (0.9989, 5.30), "A1B0C1": (0.9974, 6.80),
    "A1B1C0": (0.9880, 10.96), "A1B1C1": (0.9721, 14.28),
}


def _row(scenario_id, agent_id, semester, courses, terminal, rep=0,
         group="stable", stress=0.5, belonging=0.5, blocked=5):
    return {
        "scenario_id": scenario_id, "replication": rep, "agent_id": agent_id,
        "semester": semester, "archetype": "S1", "group": group,
        "n_enrolled": 2, "n_passed_cw": 1, "n_approved_new": 1, "n_failed": 1,
        "n_approved_total": courses, "stress": stress, "belonging": belonging,
        "backbone_completion": courses / 34.0, "blocked_credits": blocked,
        "distance_to_graduation": 1.0 - courses / 34.0,
        "bottleneck_approval_ratio": 0.0, "prerequisites_met_ratio": 0.1,
        "mean_in_degree_approved": 0.2, "mean_out_degree_approved": 0.3,
        "terminal_event": terminal,
    }


def _trajectory(scenario_id, agent_id, final_courses, final_semester, terminal,
                **kw):
    rows = []
    for t in range(1, final_semester + 1):
        courses = round(final_courses * t / final_semester)
        rows.append(_row(scenario_id, agent_id, t, courses,
                         terminal if t == final_semester else "", **kw))
    return rows


def test_record_header_contract():
    assert RECORD_HEADER == [
        "scenario_id", "replication", "agent_id", "semester", "archetype",
        "group", "n_enrolled", "n_passed_cw", "n_approved_new", "n_failed",
        "n_approved_total", "stress", "belonging", "backbone_completion",
        "blocked_credits", "distance_to_graduation",
        "bottleneck_approval_ratio", "prerequisites_met_ratio",
        "mean_in_degree_approved", "mean_out_degree_approved",
        "terminal_event"]


def test_two_agent_aggregate_example():
    # one graduate with 34 courses, one semester-2 dropout with 4: the rates
    # and the lower median follow by hand
    rows = (_trajectory("A0B0C0", 0, 34, 12, "graduation")
            + _trajectory("A0B0C0", 1, 4, 2, "dropout", group="vulnerable"))
    agg = Aggregator(8)
    agg.consume(pd.DataFrame(rows))
    (s,) = agg.scenario_stats()
    assert s.n_agents == 2
    assert s.dropout_rate == 0.5
    assert s.hard_dropout_rate == 0.5
    assert s.mean_courses == 19.0
    assert s.median_courses == 4       # lower median of {4, 34}
    assert s.std_courses == 15.0


def test_aggregation_is_order_independent():
    frames = [pd.DataFrame(_trajectory("A0B0C0", i, 3 * i, 4 + i,
                                       "dropout", rep=i))
              for i in range(5)]
    fwd, rev = Aggregator(8), Aggregator(8)
    for df in frames:
        fwd.consume(df)
    for df in reversed(frames):
        rev.consume(df)
    assert fwd.scenario_stats() == rev.scenario_stats()
    pd.testing.assert_frame_equal(structural_at_semester(fwd),
                                  structural_at_semester(rev))


def test_factorial_effects_match_published_fixture():
    stats = [{"scenario_id": sid, "dropout_rate": d, "mean_courses": c}
             for sid, (d, c) in TABLE2.items()]
    eff = factorial_main_effects(stats)
    assert eff["B_dropout"] == pytest.approx(-0.0176, abs=1e-9)
    assert eff["B_courses"] == pytest.approx(6.44, abs=1e-9)
    assert eff["A_dropout"] == pytest.approx(-0.00165, abs=1e-9)


def test_factorial_effects_reject_incomplete_design():
    stats = [{"scenario_id": sid, "dropout_rate": d, "mean_courses": c}
             for sid, (d, c) in TABLE2.items() if sid != "A1B1C1"]
    with pytest.raises(ExperimentError, match="A1B1C1"):
        factorial_main_effects(stats)


def test_lower_median_convention():
    # four agents with 0,0,3,9 courses: lower median is the 2nd smallest
    rows = []
    for i, courses in enumerate([0, 0, 3, 9]):
        rows += _trajectory("A0B0C0", i, courses, 2, "dropout")
    agg = Aggregator(8)
    agg.consume(pd.DataFrame(rows))
    assert agg.scenario_stats()[0].median_courses == 0
    rows += _trajectory("A0B0C0", 4, 20, 3, "dropout")
    agg = Aggregator(8)
    agg.consume(pd.DataFrame(rows))
    assert agg.scenario_stats()[0].median_courses == 3


def test_structural_snapshot_and_frozen_columns():
    rows = (_trajectory("A0B0C0", 0, 10, 12, "graduation")
            + _trajectory("A0B0C0", 1, 2, 3, "dropout"))
    agg = Aggregator(8)
    agg.consume(pd.DataFrame(rows))
    t3 = structural_at_semester(agg)
    # survivors-only column sees just agent 0's semester-8 row
    assert t3.loc[0, "n_survivors"] == 1
    expected = round(10 * 8 / 12) / 34.0
    assert t3.loc[0, "backbone_completion_mean"] == pytest.approx(expected)
    # frozen variant keeps the dropout's terminal state in the mix
    frozen = t3.loc[0, "frozen_backbone_completion_mean"]
    assert frozen == pytest.approx((expected + 2 / 34.0) / 2)


def test_figure1_series_shape():
    rows = (_trajectory("A0B0C0", 0, 6, 6, "dropout")
            + _trajectory("A0B0C0", 1, 2, 2, "dropout"))
    agg = Aggregator(8)
    agg.consume(pd.DataFrame(rows))
    fig = figure1_series(agg)
    assert list(fig.columns) == ["scenario_id", "semester", "backbone_mean"]
    assert fig["semester"].tolist() == [1, 2, 3, 4, 5, 6]
    # semester 1 averages both agents
    assert fig.loc[0, "backbone_mean"] == pytest.approx((1 + 1) / 2 / 34.0)


def test_encode_records_deterministic_bytes():
    df = pd.DataFrame(_trajectory("A0B0C0", 0, 4, 4, "dropout"))
    raw = encode_records(df, compress=False)
    assert encode_records(df, compress=False) == raw
    packed = encode_records(df, compress=True)
    assert encode_records(df, compress=True) == packed
    assert gzip.decompress(packed) == raw
    assert record_filename("A0B0C0", 3, True) == "A0B0C0_3.csv.gz"
    assert record_filename("A0B0C0", 3, False) == "A0B0C0_3.csv"


def test_cohort_frame_layout(shipped_settings, shipped_inputs):
    settings = load_settings(overrides={"n_students": "20"})
    ctx = build_contexts(settings, shipped_inputs)[0]
    df = cohort_frame(ctx, settings.master_seed, 0)
    assert list(df.columns) == RECORD_HEADER
    for agent_id, sub in df.groupby("agent_id"):
        assert sub["semester"].tolist() == list(range(1, len(sub) + 1))
        assert (sub["terminal_event"].iloc[:-1] == "").all()
    assert set(df["group"]) <= {"vulnerable", "stable"}


def _desk_settings(tmp_path, **extra):
    overrides = {"scenarios": "A0B0C0", "n_replications": "2",
                 "n_students": "40", "workers": "1",
                 "out_dir": str(tmp_path / "out")}
    overrides.update(extra)
    return load_settings(overrides=overrides)


def test_run_experiment_roundtrip(tmp_path, shipped_inputs):
    settings = _desk_settings(tmp_path)
    manifest = run_experiment(settings, shipped_inputs)
    assert os.path.exists(manifest)
    records_dir = os.path.join(settings.out_dir, "records")
    names = [os.path.basename(p) for p in iter_record_files(records_dir)]
    assert names == ["A0B0C0_0.csv.gz", "A0B0C0_1.csv.gz"]

    agg = aggregate_records(records_dir)
    (s,) = agg.scenario_stats()
    assert s.n_agents == 80

    text = open(manifest).read()
    total = int(text.rsplit("total_records=", 1)[1].strip())
    rows = sum(len(pd.read_csv(p)) for p in iter_record_files(records_dir))
    assert total == rows

    tables = write_tables(agg, os.path.join(settings.out_dir, "tables"))
    assert set(tables) == {"scenario_summary.csv", "table2.csv",
                           "table3_semester8.csv", "archetype_breakdown.csv"}
    summary = pd.read_csv(tables["scenario_summary.csv"])
    assert summary.loc[0, "scenario_id"] == "A0B0C0"
    assert summary.loc[0, "n_agents"] == 80

    report = write_report_data(agg, os.path.join(settings.out_dir, "report"))
    assert set(report) == {"figure1.csv", "table2.csv", "table3_semester8.csv"}


def test_run_experiment_byte_identical_reruns(tmp_path, shipped_inputs):
    a = _desk_settings(tmp_path / "a")
    b = _desk_settings(tmp_path / "b")
    run_experiment(a, shipped_inputs)
    run_experiment(b, shipped_inputs)
    for name in ("A0B0C0_0.csv.gz", "A0B0C0_1.csv.gz"):
        pa = os.path.join(a.out_dir, "records", name)
        pb = os.path.join(b.out_dir, "records", name)
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_archetype_breakdown_groups(tmp_path, shipped_inputs):
    settings = _desk_settings(tmp_path)
    run_experiment(settings, shipped_inputs)
    agg = aggregate_records(os.path.join(settings.out_dir, "records"))
    br = archetype_breakdown(agg)
    assert set(br["group"]) == {"stable", "vulnerable"}
    assert br["n_agents"].sum() == 80


def test_aggregator_rejects_bad_snapshot_semester():
    with pytest.raises(ExperimentError, match="snapshot semester"):
        Aggregator(0)
    with pytest.raises(ExperimentError, match="no record files"):
        list(iter_record_files("/nonexistent-dir-for-test"))
