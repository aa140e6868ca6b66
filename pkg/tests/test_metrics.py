import json

import numpy as np
import pytest

from sevot import metrics
from sevot.metrics import (
    NO_INFRACTION,
    DrivingRecord,
    InfractionEvent,
    confusion,
    driving_metrics,
    iou,
    record_from_steps,
    row_normalized,
    segmentation_report,
    severity_score,
    success_rate,
    write_infraction_table_csv,
    write_report_json,
    write_series_csv,
)


def test_confusion_examples():
    preds = np.array([[0, 1], [2, 2]])
    truths = np.array([[0, 1], [2, 1]])
    cm = confusion(preds, truths, 3)
    assert cm[0, 0] == 1 and cm[1, 1] == 1 and cm[2, 2] == 1 and cm[1, 2] == 1
    assert cm.sum() == 4
    perfect = confusion(truths, truths, 3)
    assert (perfect == np.diag(np.diag(perfect))).all()
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((3, 2)), 3)


def test_confusion_total_is_pixel_count():
    rng = np.random.default_rng(0)
    preds = rng.integers(0, 5, size=(7, 9))
    truths = rng.integers(0, 5, size=(7, 9))
    assert confusion(preds, truths, 5).sum() == 63


def test_row_normalized():
    cm = np.array([[2, 2], [0, 0]])
    out = row_normalized(cm)
    np.testing.assert_allclose(out[0], [0.5, 0.5])
    np.testing.assert_allclose(out[1], [0.0, 0.0])


def test_iou_examples():
    cm = np.array([[50, 15, 10], [10, 30, 0], [0, 0, 0]])
    report = iou(cm)
    # class 0: TP=50, FP=10, FN=25
    assert report.per_class[0] == pytest.approx(50 / 85)
    assert report.valid[0] and report.valid[1]
    assert not report.valid[2]
    assert np.isnan(report.per_class[2])
    assert report.miou == pytest.approx((50 / 85 + 30 / 55) / 2)

    perfect = iou(np.diag([5, 5, 5]))
    assert perfect.miou == 1.0

    zero_tp = iou(np.array([[0, 3], [2, 0]]))
    assert zero_tp.per_class[0] == 0.0


def test_iou_handles_half_half():
    cm = np.zeros((2, 2), dtype=int)
    cm[0, 0] = 50
    cm[0, 1] = 25
    cm[1, 0] = 0
    cm[1, 1] = 0
    # TP=50, FP=0, FN=25 -> wait, FN counts row minus TP
    report = iou(cm)
    assert report.per_class[0] == pytest.approx(50 / 75)


def test_iou_permutation_equivariance():
    rng = np.random.default_rng(1)
    cm = rng.integers(0, 30, size=(5, 5))
    perm = rng.permutation(5)
    permuted = cm[np.ix_(perm, perm)]
    original = iou(cm).per_class
    shuffled = iou(permuted).per_class
    np.testing.assert_allclose(shuffled, original[perm], equal_nan=True)


def test_severity_score_examples():
    D = np.zeros((3, 3))
    D[0, 1] = 5.0
    cm = np.zeros((3, 3), dtype=int)
    cm[0, 0] = 60
    cm[1, 1] = 30
    cm[2, 2] = 9
    cm[0, 1] = 1
    assert severity_score(cm, D) == pytest.approx(5.0 / 100.0)
    assert severity_score(np.diag([10, 10]), np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.0
    with pytest.raises(ValueError):
        severity_score(np.zeros((2, 2)), np.zeros((3, 3)))


def test_severity_score_step_matrix_is_error_rate():
    rng = np.random.default_rng(2)
    cm = rng.integers(0, 40, size=(6, 6))
    step = np.ones((6, 6)) - np.eye(6)
    accuracy = np.trace(cm) / cm.sum()
    assert severity_score(cm, step) == pytest.approx(1.0 - accuracy)


def _record(steps=100, km=0.5, events=(), goal=False):
    return DrivingRecord(
        steps=steps, distance_km=km, events=tuple(events), reached_goal=goal
    )


def test_driving_metrics_no_collision_marker():
    report = driving_metrics([_record()], step_cap=1000)
    assert report["km_per_collision"] == NO_INFRACTION
    assert report["km_per_infraction"]["collision-person"] == NO_INFRACTION
    assert report["drive_percent"] == pytest.approx(10.0)


def test_driving_metrics_ratios():
    events = [
        InfractionEvent("collision-car", 10, (0.0, 0.0)),
        InfractionEvent("collision-car", 90, (1.0, 0.0)),
    ]
    report = driving_metrics([_record(steps=500, km=10.0, events=events)], step_cap=500)
    assert report["km_per_collision"] == pytest.approx(5.0)
    assert report["drive_percent"] == pytest.approx(100.0)
    assert report["infractions"]["collision-car"] == 2


def test_driving_metrics_additivity():
    a = _record(steps=100, km=1.0, events=[InfractionEvent("off-line", 5, (0, 0))])
    b = _record(steps=200, km=3.0, events=[InfractionEvent("off-line", 9, (0, 0))])
    combined = driving_metrics([a, b], step_cap=1000)
    assert combined["total_steps"] == 300
    assert combined["total_km"] == pytest.approx(4.0)
    assert combined["km_per_offline"] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        driving_metrics([], step_cap=10)
    with pytest.raises(ValueError):
        driving_metrics([a], step_cap=0)


def test_success_rate():
    records = [_record(goal=True) for _ in range(13)] + [_record(goal=False) for _ in range(7)]
    assert success_rate(records) == pytest.approx(0.65)
    assert success_rate([_record(goal=True)]) == 1.0
    assert success_rate([_record(goal=False)]) == 0.0
    with pytest.raises(ValueError):
        success_rate([])


def test_record_from_steps_counts_threshold_crossings():
    rows = []
    o_l_series = [0.0, 0.4, 0.5, 0.2, 0.6, 0.1]  # two excursions above 0.3
    for t, o_l in enumerate(o_l_series):
        rows.append({"t": t, "o_l": o_l, "o_r": 0.0, "c": 0.0, "speed": 0.2, "x": t, "y": 0.0})
    record = record_from_steps(rows, offline_threshold=0.3)
    kinds = [e.kind for e in record.events]
    assert kinds.count("off-line") == 2
    assert record.steps == 6
    assert record.distance_km == pytest.approx(6 * 0.2 / 1000.0)


def test_record_from_steps_collision_classes():
    rows = [
        {"t": 0, "o_l": 0.0, "o_r": 0.0, "c": 0.0, "speed": 0.1, "hit": None},
        {"t": 1, "o_l": 0.0, "o_r": 0.0, "c": 1.0, "speed": 0.1, "hit": "bike", "done": "crash"},
    ]
    record = record_from_steps(rows)
    assert [e.kind for e in record.events] == ["collision-person"]
    assert record.final_reason == "crash"
    assert not record.reached_goal

    goal_rows = [{"t": 0, "o_l": 0.0, "o_r": 0.0, "c": 0.0, "speed": 0.3, "done": "goal"}]
    assert record_from_steps(goal_rows).reached_goal


def test_report_writers(tmp_path):
    events = [InfractionEvent("collision-person", 5, (0, 0))]
    report = driving_metrics([_record(steps=50, km=2.0, events=events)], step_cap=100)
    json_path = tmp_path / "driving.json"
    write_report_json(report, json_path)
    parsed = json.loads(json_path.read_text())
    assert parsed["km_per_infraction"]["off-road"] == NO_INFRACTION
    assert parsed["km_per_infraction"]["collision-person"] == pytest.approx(2.0)

    csv_path = tmp_path / "table.csv"
    write_infraction_table_csv(report, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "infraction,km_per_event"
    assert len(lines) == 1 + len(metrics.INFRACTION_KINDS)
    assert any(NO_INFRACTION in line for line in lines)

    series_path = tmp_path / "series.csv"
    write_series_csv([(0, 1.5), (1, 2.5)], series_path, header="step,loss")
    assert series_path.read_text() == "step,loss\n0,1.5\n1,2.5\n"


def test_segmentation_report_schema():
    cm = np.diag([10, 20, 30])
    cm[0, 1] = 2
    D = np.ones((3, 3)) - np.eye(3)
    report = segmentation_report(cm, D, ["a", "b", "c"])
    assert set(report) == {"accuracy", "miou", "per_class_iou", "severity_score", "confusion"}
    assert report["per_class_iou"]["b"] == pytest.approx(20 / 22)
    assert report["accuracy"] == pytest.approx(60 / 62)
