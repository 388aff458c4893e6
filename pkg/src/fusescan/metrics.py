"""Scoring, aggregation, and report rendering.

A detector run produces one :class:`EvalRecord` per image. This module turns
those into per-group accuracy / average-precision tables, aggregates groups
into an unweighted mean with a sample standard deviation, and renders the
result as CSV (full precision) or an aligned markdown table (percentages,
two decimals). Rounding happens only at rendering; every stored number keeps
full float precision.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClasses, EmptyInput, SplitViolation

REAL, FAKE = 0, 1


@dataclass(frozen=True)
class EvalRecord:
    """One scored image: the model's fake-probability plus its provenance."""

    score: float
    label: int
    generator_id: str = ""
    dataset_id: str = ""

    def __post_init__(self):
        if not np.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be a finite value in [0, 1], got {self.score}")
        if self.label not in (REAL, FAKE):
            raise ValueError(f"label must be {REAL} (real) or {FAKE} (fake), got {self.label}")


def accuracy(records, threshold: float = 0.5) -> float:
    """Fraction of records whose thresholded score matches the label.

    A score exactly at the threshold counts as a fake prediction.
    """
    records = list(records)
    if not records:
        raise EmptyInput("accuracy over zero records")
    hits = sum((r.score >= threshold) == (r.label == FAKE) for r in records)
    return hits / len(records)


def average_precision(records) -> float:
    """Mean of precision-at-k over the ranks k where positives sit.

    Records are ranked by descending score; ties keep their input order
    (stable sort), so the value is deterministic for any input permutation
    of distinct records.
    """
    records = list(records)
    if not records:
        raise EmptyInput("average precision over zero records")
    labels = np.fromiter((r.label for r in records), dtype=np.int64, count=len(records))
    n_pos = int((labels == FAKE).sum())
    if n_pos == 0 or n_pos == len(records):
        raise DegenerateClasses(
            f"average precision needs both classes, got {n_pos} positives of {len(records)}"
        )
    scores = np.fromiter((r.score for r in records), dtype=np.float64, count=len(records))
    order = np.argsort(-scores, kind="stable")
    positive = labels[order] == FAKE
    cumulative = np.cumsum(positive)
    ranks = np.arange(1, len(records) + 1)
    precision_at_rank = cumulative / ranks
    return float(precision_at_rank[positive].sum() / n_pos)


def per_class_accuracy(records, threshold: float = 0.5):
    """(real_accuracy, fake_accuracy); a side missing from the records is None."""
    records = list(records)
    if not records:
        raise EmptyInput("per-class accuracy over zero records")
    out = []
    for cls in (REAL, FAKE):
        members = [r for r in records if r.label == cls]
        out.append(accuracy(members, threshold) if members else None)
    return tuple(out)


@dataclass(frozen=True)
class MetricsReport:
    """Metrics for one group of records; AP is None when a class is absent."""

    n: int
    accuracy: float
    average_precision: float = None
    real_accuracy: float = None
    fake_accuracy: float = None


def compute_report(records, threshold: float = 0.5) -> MetricsReport:
    """Score one group of records into a :class:`MetricsReport`."""
    records = list(records)
    acc = accuracy(records, threshold)
    try:
        ap = average_precision(records)
    except DegenerateClasses:
        ap = None
    real_acc, fake_acc = per_class_accuracy(records, threshold)
    return MetricsReport(n=len(records), accuracy=acc, average_precision=ap,
                         real_accuracy=real_acc, fake_accuracy=fake_acc)


def group_records(records, by: str) -> dict:
    """Split records for per-dataset or per-generator evaluation.

    ``by="dataset"`` groups on ``dataset_id``. ``by="generator"`` keys each
    group by a fake generator and pairs its fakes with every real record
    from the same dataset, since each generator is judged against the shared
    real pool it was benchmarked with.
    """
    records = list(records)
    if not records:
        raise EmptyInput("grouping zero records")
    if by == "dataset":
        groups = {}
        for r in records:
            groups.setdefault(r.dataset_id, []).append(r)
        return groups
    if by == "generator":
        reals_by_dataset = {}
        for r in records:
            if r.label == REAL:
                reals_by_dataset.setdefault(r.dataset_id, []).append(r)
        groups = {}
        for r in records:
            if r.label == FAKE:
                groups.setdefault(r.generator_id, []).append(r)
        for gen, members in groups.items():
            datasets = {m.dataset_id for m in members}
            for ds in sorted(datasets):
                members.extend(reals_by_dataset.get(ds, []))
        return groups
    raise ValueError(f"unknown grouping '{by}' (use 'dataset' or 'generator')")


@dataclass(frozen=True)
class AggregateReport:
    """Per-group reports plus their unweighted mean and sample spread."""

    per_group: dict
    mean_accuracy: float
    std_accuracy: float = None
    mean_average_precision: float = None
    std_average_precision: float = None


def aggregate(per_group: dict) -> AggregateReport:
    """Average group metrics without size weighting.

    The spread is the sample standard deviation (n-1 denominator) and is
    None for a single group. Groups lacking an AP are skipped in the AP
    aggregate only.
    """
    if not per_group:
        raise EmptyInput("aggregating zero groups")
    accs = [r.accuracy for r in per_group.values()]
    aps = [r.average_precision for r in per_group.values() if r.average_precision is not None]
    mean_acc = float(np.mean(accs))
    std_acc = float(np.std(accs, ddof=1)) if len(accs) > 1 else None
    mean_ap = float(np.mean(aps)) if aps else None
    std_ap = float(np.std(aps, ddof=1)) if len(aps) > 1 else None
    return AggregateReport(per_group=dict(per_group), mean_accuracy=mean_acc,
                           std_accuracy=std_acc, mean_average_precision=mean_ap,
                           std_average_precision=std_ap)


def _sorted_rows(agg: AggregateReport):
    return sorted(agg.per_group.items(), key=lambda kv: (kv[1].accuracy, kv[0]))


def _pct(value) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}"


def render_csv(agg: AggregateReport) -> str:
    """Full-precision CSV: one row per group (ascending accuracy) plus footers."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "n", "accuracy", "average_precision",
                     "real_accuracy", "fake_accuracy"])

    def fmt(value):
        return "" if value is None else repr(value)

    for name, rep in _sorted_rows(agg):
        writer.writerow([name, rep.n, fmt(rep.accuracy), fmt(rep.average_precision),
                         fmt(rep.real_accuracy), fmt(rep.fake_accuracy)])
    writer.writerow(["mean", "", fmt(agg.mean_accuracy),
                     fmt(agg.mean_average_precision), "", ""])
    writer.writerow(["std", "", fmt(agg.std_accuracy),
                     fmt(agg.std_average_precision), "", ""])
    return buf.getvalue()


def render_markdown(agg: AggregateReport) -> str:
    """Aligned markdown table with percentage cells rounded to two decimals."""
    rows = [["Group", "n", "Acc / AP (%)", "rAcc / fAcc (%)"]]
    for name, rep in _sorted_rows(agg):
        rows.append([name, str(rep.n),
                     f"{_pct(rep.accuracy)} / {_pct(rep.average_precision)}",
                     f"{_pct(rep.real_accuracy)} / {_pct(rep.fake_accuracy)}"])
    rows.append(["Mean", "",
                 f"{_pct(agg.mean_accuracy)} / {_pct(agg.mean_average_precision)}", ""])
    rows.append(["STD", "",
                 f"{_pct(agg.std_accuracy)} / {_pct(agg.std_average_precision)}", ""])

    widths = [max(len(row[col]) for row in rows) for col in range(len(rows[0]))]
    lines = []
    for i, row in enumerate(rows):
        cells = [cell.ljust(widths[col]) for col, cell in enumerate(row)]
        lines.append("| " + " | ".join(cells) + " |")
        if i == 0:
            lines.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(lines) + "\n"


def split_violations(train_entries, test_entries) -> list:
    """Fake-source overlap between a train and a test manifest.

    Checks two axes: no fake generator and no fake dataset source may appear
    on both sides. Real records are exempt; they may come from anywhere.
    Returns ``axis:value`` strings, empty when the split is clean.
    """
    def fake_sources(entries):
        gens, datasets = set(), set()
        for e in entries:
            if e.label == "fake":
                gens.add(e.generator_id)
                datasets.add(e.dataset_id)
        return gens, datasets

    train_gens, train_ds = fake_sources(train_entries)
    test_gens, test_ds = fake_sources(test_entries)
    found = [f"generator:{g}" for g in sorted(train_gens & test_gens)]
    found += [f"dataset:{d}" for d in sorted(train_ds & test_ds)]
    return found


def assert_two_axis_split(train_entries, test_entries, strict: bool = True) -> list:
    """Audit (and in strict mode enforce) generator/dataset split hygiene."""
    found = split_violations(train_entries, test_entries)
    if strict and found:
        raise SplitViolation(found)
    return found
