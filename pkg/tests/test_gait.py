import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_ncd import gait as G
from hybrid_ncd.errors import LoadError, ParameterError
from hybrid_ncd.ncd import Trajectory


def bits(s):
    return np.array([int(c) for c in s])


def test_contact_edges_examples():
    ev = G.detect_contact_events(bits("0011100"), bits("1110001111"), "right")
    assert ev.heel_strikes == [("right", 2)]
    assert ev.toe_offs == [("right", 3)]


def test_contact_edges_reject_non_binary():
    with pytest.raises(ParameterError):
        G.detect_contact_events(np.array([0, 2, 1]), np.zeros(3), "left")


def test_constant_signals_have_no_edges():
    ev = G.detect_contact_events(np.ones(50), np.zeros(50), "left")
    assert ev.heel_strikes == [] and ev.toe_offs == []


def test_schmitt_trigger_ignores_noise_below_hysteresis():
    rng = np.random.default_rng(0)
    clean = np.repeat([0.0, 1.0, 0.0, 1.0, 0.0], 200)
    # auto hysteresis is 0.1; half-width 0.05 exceeds the noise amplitude
    noisy = clean + rng.uniform(-0.04, 0.04, clean.size)
    b = G.threshold_contact(noisy)
    np.testing.assert_array_equal(b, clean.astype(int))
    assert list(G.rising_edges(b)) == [200, 600]


def test_schmitt_trigger_hysteresis_band():
    x = np.array([0.0, 0.52, 0.56, 0.49, 0.46, 0.44, 0.5])
    b = G.threshold_contact(x, threshold=0.5, hysteresis=0.1)
    assert b.tolist() == [0, 0, 1, 1, 1, 0, 0]
    assert G.threshold_contact([0.9, 0.8], threshold=0.5, hysteresis=0.1).tolist() == [1, 1]


def test_alternation_violations_flagged():
    ev = G.ContactEvents([("right", 10), ("right", 30)], [("right", 20)])
    assert ev.alternation_violations() == []
    ev = G.ContactEvents([("right", 10), ("right", 20)], [("right", 30)])
    assert ev.alternation_violations() == [("right", 20, "heel_strike")]


def test_mode_transitions_examples():
    assert G.extract_mode_transitions(bits("000111"), 1) == [(3, 0, 1)]
    assert G.extract_mode_transitions(bits("0001011"), 2) == [(5, 0, 1)]
    assert G.extract_mode_transitions(bits("0001011"), 1) == [(3, 0, 1), (4, 1, 0), (5, 0, 1)]
    assert G.extract_mode_transitions(np.array([0, 0, -1, -1, 0, 1, 1]), 2) == [(5, 0, 1)]
    with pytest.raises(ParameterError):
        G.extract_mode_transitions(bits("01"), 0)


def test_match_events_hand_counted():
    rep = G.match_events([10, 55, 200], [12, 50, 120], max_window_ms=100, sample_rate=500)
    assert (rep.matched, rep.false_positives, rep.false_negatives) == (2, 1, 1)
    assert rep.offsets_ms == [-4.0, 10.0]
    assert rep.false_positive_rate == pytest.approx(1 / 3)
    assert rep.false_negative_rate == pytest.approx(1 / 3)
    assert rep.mean_abs_offset_ms == pytest.approx(7.0)


def test_match_events_each_event_used_once():
    rep = G.match_events([100, 101], [100], sample_rate=1000)
    assert (rep.matched, rep.false_positives, rep.false_negatives) == (1, 1, 0)
    assert rep.offsets_ms == [0.0]


def test_match_events_empty_inputs():
    rep = G.match_events([], [])
    assert rep.false_positive_rate == 0.0 and rep.false_negative_rate == 0.0
    assert rep.to_dict()["mean_offset_ms"] is None


@settings(max_examples=60, deadline=None)
@given(
    p=st.lists(st.integers(0, 400), max_size=15, unique=True),
    t=st.lists(st.integers(0, 400), max_size=15, unique=True),
)
def test_match_events_symmetry(p, t):
    p, t = sorted(p), sorted(t)
    a = G.match_events(p, t, max_window_ms=20, sample_rate=500)
    b = G.match_events(t, p, max_window_ms=20, sample_rate=500)
    assert a.false_positives == b.false_negatives
    assert a.false_negatives == b.false_positives
    assert a.matched == b.matched


def _write(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")


def _table(n, fs=500.0):
    schema = G.GaitSchema()
    header = [schema.time, *schema.kinematics, *schema.pressure]
    rng = np.random.default_rng(0)
    rows = [[i / fs, *rng.normal(size=16).round(6)] for i in range(n)]
    return header, rows


def test_load_trims_and_separates_channels(tmp_path):
    header, rows = _table(1000)
    _write(tmp_path / "g.csv", header, rows)
    rec = G.load_gait_csv(tmp_path / "g.csv", G.GaitSchema(trim_seconds=0.5))
    assert len(rec) == 750
    assert rec.kinematics.state_dim == 12
    assert isinstance(rec.kinematics, Trajectory)
    assert not isinstance(rec.pressure, Trajectory)
    assert rec.pressure.values.shape == (750, 4)
    assert rec.sample_rate == pytest.approx(500.0)


def test_load_missing_column_named(tmp_path):
    header, rows = _table(20)
    i = header.index("left_hip_current")
    _write(tmp_path / "g.csv", header[:i] + header[i + 1 :], [r[:i] + r[i + 1 :] for r in rows])
    with pytest.raises(LoadError, match="left_hip_current"):
        G.load_gait_csv(tmp_path / "g.csv", G.GaitSchema(trim_seconds=0))


def test_load_nan_row_cited(tmp_path):
    header, rows = _table(100)
    rows[56][3] = "nan"
    _write(tmp_path / "g.csv", header, rows)
    with pytest.raises(LoadError, match="row.* 57"):
        G.load_gait_csv(tmp_path / "g.csv", G.GaitSchema(trim_seconds=0))


def test_load_rejects_jitter(tmp_path):
    header, rows = _table(100)
    rows[40][0] += 0.0002  # 10% of the 2 ms period
    _write(tmp_path / "g.csv", header, rows)
    with pytest.raises(LoadError, match="non-uniform"):
        G.load_gait_csv(tmp_path / "g.csv", G.GaitSchema(trim_seconds=0))


def test_load_too_short_for_trim(tmp_path):
    header, rows = _table(100)
    _write(tmp_path / "g.csv", header, rows)
    with pytest.raises(LoadError, match="trim"):
        G.load_gait_csv(tmp_path / "g.csv")


def test_load_without_pressure(tmp_path):
    header, rows = _table(50)
    _write(tmp_path / "g.csv", header[:13], [r[:13] for r in rows])
    with pytest.raises(LoadError, match="right_heel"):
        G.load_gait_csv(tmp_path / "g.csv", G.GaitSchema(trim_seconds=0))
    rec = G.load_gait_csv(tmp_path / "g.csv", G.GaitSchema(trim_seconds=0), require_pressure=False)
    assert rec.pressure is None
    with pytest.raises(ParameterError):
        G.segment_gait(rec, segment_seconds=None)


def test_csv_roundtrip(tmp_path):
    rec, _ = G.synthetic_gait(12.0, seed=3)
    G.write_gait_csv(tmp_path / "g.csv", rec)
    back = G.load_gait_csv(tmp_path / "g.csv")
    np.testing.assert_allclose(back.kinematics.samples, rec.kinematics.samples[5000:], rtol=1e-8, atol=1e-8)
    assert back.trim == (5000, 6000)


def test_synthetic_pressure_recovers_true_events():
    rec, truth = G.synthetic_gait(20.0, seed=1)
    ev = G.ground_truth_events(rec.pressure)
    for side in G.SIDES:
        np.testing.assert_array_equal(ev.indices("heel_strike", side), truth[f"{side}_heel_strike"])
        np.testing.assert_array_equal(ev.indices("toe_off", side), truth[f"{side}_toe_off"])
    assert ev.alternation_violations() == []


def test_segment_gait_report(tmp_path):
    rec, _ = G.synthetic_gait(25.0, seed=2)
    res = G.segment_gait(rec, segment_seconds=15.0, seed=4)
    assert res.window[1] - res.window[0] == 7500
    rep = res.report_dict()
    assert rep["phases"] == 2
    assert set(rep["transition_types"].values()) == {"right_heel_strike", "left_heel_strike"}
    for row in rep["rows"]:
        assert row["false_positive_rate"] + row["false_negative_rate"] <= 0.05
    res.write_report(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["events"] == rep["events"]
    res.write_events(tmp_path / "e.csv", rec.sample_rate)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "type,side,sample,time_ms"
    assert len(lines) == len(res.transitions) + 1


def test_random_window_is_seeded():
    rec, _ = G.synthetic_gait(30.0, seed=0)
    a = G.segment_gait(rec, segment_seconds=10.0, seed=7, validate=False)
    b = G.segment_gait(rec, segment_seconds=10.0, seed=7, validate=False)
    assert a.window == b.window
    assert a.transitions == b.transitions
