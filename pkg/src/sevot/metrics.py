"""Segmentation and driving evaluation: IoU, severity-weighted confusion
statistics, and infraction-distance driving metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# distinguished report value for "no infractions of this kind occurred";
# deliberately a string so it can never be mistaken for a finite distance
NO_INFRACTION = "no-infraction"

# nominal wall-clock length of one simulation step, for km/h-style rates
SECONDS_PER_STEP = 1.0

COLLISION_KIND_OF_CLASS = {
    "person": "collision-person",
    "bike": "collision-person",
    "car": "collision-car",
    "bus": "collision-car",
    "building": "collision-static",
}

INFRACTION_KINDS = (
    "collision-person",
    "collision-car",
    "collision-static",
    "off-line",
    "off-road",
)


def confusion(preds, truths, n_classes: int) -> np.ndarray:
    """Exact (true class, predicted class) counts over label grids."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if preds.shape != truths.shape:
        raise ValueError(f"shape mismatch: preds {preds.shape} vs truths {truths.shape}")
    idx = n_classes * truths.ravel() + preds.ravel()
    counts = np.bincount(idx, minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes).astype(np.int64)


def row_normalized(cm: np.ndarray) -> np.ndarray:
    """Per-true-class prediction distribution; all-zero rows stay zero."""
    cm = np.asarray(cm, dtype=float)
    sums = cm.sum(axis=1, keepdims=True)
    return cm / np.where(sums > 0, sums, 1.0)


@dataclass(frozen=True)
class IouReport:
    per_class: np.ndarray  # NaN for classes with an empty denominator
    miou: float
    valid: np.ndarray  # classes included in the mean


def iou(cm) -> IouReport:
    """Per-class TP/(TP+FP+FN) and its mean over classes that occur.

    Classes absent from both prediction and truth have an empty denominator;
    they are excluded from the mean and flagged in ``valid``.
    """
    cm = np.asarray(cm, dtype=float)
    tp = np.diag(cm)
    denom = cm.sum(axis=1) + cm.sum(axis=0) - tp
    valid = denom > 0
    per_class = np.full(cm.shape[0], np.nan)
    per_class[valid] = tp[valid] / denom[valid]
    miou = float(per_class[valid].mean()) if valid.any() else float("nan")
    return IouReport(per_class=per_class, miou=miou, valid=valid)


def severity_score(cm, D) -> float:
    """Confusion counts weighted by the ground matrix, per evaluated pixel.

    Rows of both tables index the true class.  With a step matrix this is
    exactly 1 - accuracy.
    """
    cm = np.asarray(cm, dtype=float)
    costs = np.asarray(D, dtype=float)
    if cm.shape != costs.shape:
        raise ValueError(f"dimension mismatch: confusion {cm.shape} vs matrix {costs.shape}")
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float((cm * costs).sum() / total)


def accuracy_of(cm) -> float:
    cm = np.asarray(cm, dtype=float)
    return float(np.trace(cm) / cm.sum())


# ---------------------------------------------------------------------------
# Driving metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InfractionEvent:
    kind: str
    t: int
    position: tuple[float, float]


@dataclass(frozen=True)
class DrivingRecord:
    """Per-episode summary consumed by the Table-style driving report."""

    steps: int
    distance_km: float
    events: tuple[InfractionEvent, ...]
    reached_goal: bool
    final_reason: str | None = None


def record_from_steps(
    step_rows,
    offline_threshold: float = 0.3,
    offroad_threshold: float = 0.3,
    reached_goal: bool | None = None,
) -> DrivingRecord:
    """Build a DrivingRecord from per-step episode log rows.

    Off-line / off-road events are counted on upward threshold crossings
    (the signal must drop below the threshold to re-arm), so one sustained
    excursion is one infraction.  The thresholds are exposed because the
    evaluation convention and the termination rule need not agree.
    """
    step_rows = list(step_rows)
    distance_m = 0.0
    events: list[InfractionEvent] = []
    armed_line = True
    armed_road = True
    reason = None
    for row in step_rows:
        pos = (float(row.get("x", 0.0)), float(row.get("y", 0.0)))
        distance_m += float(row.get("speed", 0.0))
        if row.get("c", 0) and row.get("hit") is not None:
            kind = COLLISION_KIND_OF_CLASS.get(row["hit"], "collision-static")
            events.append(InfractionEvent(kind, int(row["t"]), pos))
        if row.get("o_l", 0.0) >= offline_threshold:
            if armed_line:
                events.append(InfractionEvent("off-line", int(row["t"]), pos))
                armed_line = False
        else:
            armed_line = True
        if row.get("o_r", 0.0) >= offroad_threshold:
            if armed_road:
                events.append(InfractionEvent("off-road", int(row["t"]), pos))
                armed_road = False
        else:
            armed_road = True
        if row.get("done"):
            reason = row["done"]
    goal = reason == "goal" if reached_goal is None else bool(reached_goal)
    return DrivingRecord(
        steps=len(step_rows),
        distance_km=distance_m / 1000.0,
        events=tuple(events),
        reached_goal=goal,
        final_reason=reason,
    )


def _per_event_km(total_km: float, count: int):
    return total_km / count if count else NO_INFRACTION


def driving_metrics(records, step_cap: int) -> dict:
    """Aggregate driving report: drive fraction, distances and
    per-infraction-type average distances (Table-style layout).

    Kinds with zero occurrences report the distinguished no-infraction
    marker rather than a float.
    """
    records = list(records)
    if not records:
        raise ValueError("no driving records")
    if step_cap <= 0:
        raise ValueError("step_cap must be positive")
    total_steps = sum(r.steps for r in records)
    total_km = sum(r.distance_km for r in records)
    counts = {kind: 0 for kind in INFRACTION_KINDS}
    for record in records:
        for event in record.events:
            counts[event.kind] += 1
    collisions = counts["collision-person"] + counts["collision-car"] + counts["collision-static"]
    mean_speed_m_per_step = (total_km * 1000.0 / total_steps) if total_steps else 0.0
    report = {
        "episodes": len(records),
        "total_steps": total_steps,
        "step_cap": step_cap,
        "drive_percent": 100.0 * total_steps / step_cap,
        "total_km": total_km,
        "mean_speed_kmh": mean_speed_m_per_step * 3600.0 / SECONDS_PER_STEP / 1000.0,
        "km_per_offline": _per_event_km(total_km, counts["off-line"]),
        "km_per_offroad": _per_event_km(total_km, counts["off-road"]),
        "km_per_collision": _per_event_km(total_km, collisions),
        "infractions": dict(counts),
        "km_per_infraction": {k: _per_event_km(total_km, counts[k]) for k in INFRACTION_KINDS},
        "success_rate": success_rate(records),
    }
    return report


def success_rate(records) -> float:
    records = list(records)
    if not records:
        raise ValueError("no driving records")
    return sum(1 for r in records if r.reached_goal) / len(records)


# ---------------------------------------------------------------------------
# Report output
# ---------------------------------------------------------------------------


def segmentation_report(cm, D, class_names) -> dict:
    rep = iou(cm)
    return {
        "accuracy": accuracy_of(cm),
        "miou": rep.miou,
        "per_class_iou": {
            name: (None if not rep.valid[k] else float(rep.per_class[k]))
            for k, name in enumerate(class_names)
        },
        "severity_score": severity_score(cm, D),
        "confusion": np.asarray(cm).tolist(),
    }


def write_report_json(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


def write_infraction_table_csv(report: dict, path) -> None:
    """Two-column CSV mirroring the per-infraction-distance table layout."""
    lines = ["infraction,km_per_event"]
    for kind in INFRACTION_KINDS:
        value = report["km_per_infraction"][kind]
        lines.append(f"{kind},{value if isinstance(value, str) else format(value, '.6g')}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_series_csv(pairs, path, header: str = "x,y") -> None:
    """Plot-ready two-column series."""
    lines = [header]
    for x, y in pairs:
        lines.append(f"{x},{y}")
    Path(path).write_text("\n".join(lines) + "\n")
