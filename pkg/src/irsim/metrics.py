"""Decision logging, victim accounting, distance-bucketed correctness, timing stats.

A :class:`DecisionLog` collects one record per delivered warning. A PENDING
record is provisional and must be superseded by exactly one final record
for the same (receiver, event, sender) triple; a second final record for a
triple is a protocol-invariant breach and raises.

"Trusted fraction" per distance bucket is decision correctness: accepting
a true warning or rejecting a false one counts as correct. The raw
acceptance rate is exported alongside for comparison.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .protocol import Disposition

BUCKET_WIDTH_M = 20.0

_DISPOSITION_NAMES = {
    Disposition.ACCEPT: "accept",
    Disposition.REJECT: "reject",
    Disposition.PENDING: "pending",
}
_DISPOSITION_FROM_NAME = {v: k for k, v in _DISPOSITION_NAMES.items()}


class MetricsError(Exception):
    """Raised when the decision log is fed inconsistent records."""


@dataclass(frozen=True, slots=True)
class DecisionRecord:
    time: float
    receiver: int
    sender: int
    event_id: int
    ground_truth: bool
    decision: Disposition
    distance_m: float
    latency_ns: Optional[int] = None

    def __post_init__(self) -> None:
        if self.distance_m < 0:
            raise ValueError("distance must be >= 0")


@dataclass
class _TripleState:
    final: Optional[DecisionRecord] = None
    was_pending: bool = False


class DecisionLog:
    """Append-only log of warning decisions for one run."""

    def __init__(self) -> None:
        self.records: list[DecisionRecord] = []
        self._state: dict[tuple[int, int, int], _TripleState] = {}

    def __len__(self) -> int:
        return len(self.records)

    def record(self, rec: DecisionRecord) -> None:
        key = (rec.receiver, rec.event_id, rec.sender)
        state = self._state.setdefault(key, _TripleState())
        if rec.decision is Disposition.PENDING:
            if state.final is not None or state.was_pending:
                raise MetricsError(f"duplicate provisional decision for {key}")
            state.was_pending = True
        else:
            if state.final is not None:
                raise MetricsError(f"duplicate final decision for {key}")
            state.final = rec
        self.records.append(rec)

    def final_records(self) -> list[DecisionRecord]:
        return [s.final for s in self._state.values() if s.final is not None]

    def unresolved(self) -> list[tuple[int, int, int]]:
        """Triples still waiting for a final record."""
        return [k for k, s in self._state.items() if s.was_pending and s.final is None]

    def pending_resolved_count(self) -> int:
        return sum(1 for s in self._state.values() if s.was_pending and s.final is not None)


@dataclass(frozen=True)
class RunInfo:
    """Context a log needs to be turned into a report."""

    config_hash: str
    seed: int
    pipeline: str
    benign: frozenset[int]
    range_m: float
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class BucketStat:
    low_m: float
    high_m: float
    samples: int
    trusted_fraction: float
    acceptance_rate: float


@dataclass
class MetricsReport:
    """Per-run results. Latency fields are wall-clock and non-deterministic."""

    config_hash: str
    seed: int
    pipeline: str
    victims: int
    buckets: list[BucketStat]
    histogram: dict[str, int]
    pending_resolved: int
    latency_mean_ns: Optional[float] = None
    latency_median_ns: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def deterministic_view(self) -> dict:
        """Everything except the timing instrumentation, as plain data."""
        return {
            "schema": "irsim-metrics/1",
            "config_hash": self.config_hash,
            "seed": self.seed,
            "pipeline": self.pipeline,
            "victims": self.victims,
            "buckets": [
                {
                    "low_m": b.low_m,
                    "high_m": b.high_m,
                    "samples": b.samples,
                    "trusted_fraction": b.trusted_fraction,
                    "acceptance_rate": b.acceptance_rate,
                }
                for b in self.buckets
            ],
            "histogram": dict(sorted(self.histogram.items())),
            "pending_resolved": self.pending_resolved,
            "extras": {k: self.extras[k] for k in sorted(self.extras)},
        }


def finalize(log: DecisionLog, info: RunInfo) -> MetricsReport:
    """Reduce a completed decision log to a report.

    Requires every provisional record to have been superseded; victims are
    counted once per benign vehicle that finally accepted a false warning.
    """
    dangling = log.unresolved()
    if dangling:
        raise MetricsError(f"{len(dangling)} pending decisions never finalized")

    finals = log.final_records()
    victims = len(
        {
            r.receiver
            for r in finals
            if r.decision is Disposition.ACCEPT and not r.ground_truth and r.receiver in info.benign
        }
    )

    n_buckets = max(1, int(-(-info.range_m // BUCKET_WIDTH_M)))
    samples = [0] * n_buckets
    correct = [0] * n_buckets
    accepts = [0] * n_buckets
    for r in finals:
        idx = min(int(r.distance_m // BUCKET_WIDTH_M), n_buckets - 1)
        samples[idx] += 1
        if r.decision is Disposition.ACCEPT:
            accepts[idx] += 1
            if r.ground_truth:
                correct[idx] += 1
        elif not r.ground_truth:
            correct[idx] += 1
    buckets = [
        BucketStat(
            i * BUCKET_WIDTH_M,
            (i + 1) * BUCKET_WIDTH_M,
            samples[i],
            correct[i] / samples[i] if samples[i] else 0.0,
            accepts[i] / samples[i] if samples[i] else 0.0,
        )
        for i in range(n_buckets)
    ]

    histogram: dict[str, int] = {}
    for r in finals:
        name = _DISPOSITION_NAMES[r.decision]
        histogram[name] = histogram.get(name, 0) + 1

    latencies = [r.latency_ns for r in log.records if r.latency_ns is not None]
    mean_ns = float(statistics.fmean(latencies)) if latencies else None
    median_ns = float(statistics.median(latencies)) if latencies else None

    return MetricsReport(
        config_hash=info.config_hash,
        seed=info.seed,
        pipeline=info.pipeline,
        victims=victims,
        buckets=buckets,
        histogram=histogram,
        pending_resolved=log.pending_resolved_count(),
        latency_mean_ns=mean_ns,
        latency_median_ns=median_ns,
        extras=dict(info.extras),
    )


# -- export / import ---------------------------------------------------------


def export(report: MetricsReport, fmt: str, destination: Path | str, include_latency: bool = False) -> Path:
    """Write a report to ``destination`` as JSON or CSV.

    JSON carries the full report object (timing only when
    ``include_latency`` is set, since it varies run to run). CSV holds one
    row per distance bucket followed by a key/value summary block. Both
    parse back losslessly via :func:`load_report`.
    """
    path = Path(destination)
    fmt = fmt.lower()
    if fmt == "json":
        payload = report.deterministic_view()
        if include_latency:
            payload["latency_mean_ns"] = report.latency_mean_ns
            payload["latency_median_ns"] = report.latency_median_ns
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    elif fmt == "csv":
        text = _to_csv(report)
    else:
        raise ValueError(f"unknown export format: {fmt}")
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path


def _to_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bucket_low_m", "bucket_high_m", "samples", "trusted_fraction", "acceptance_rate"])
    for b in report.buckets:
        writer.writerow([repr(b.low_m), repr(b.high_m), b.samples, repr(b.trusted_fraction), repr(b.acceptance_rate)])
    writer.writerow([])
    writer.writerow(["key", "value"])
    writer.writerow(["config_hash", report.config_hash])
    writer.writerow(["seed", report.seed])
    writer.writerow(["pipeline", report.pipeline])
    writer.writerow(["victims", report.victims])
    writer.writerow(["pending_resolved", report.pending_resolved])
    for name in sorted(report.histogram):
        writer.writerow([f"decision_{name}", report.histogram[name]])
    for name in sorted(report.extras):
        writer.writerow([f"extra_{name}", json.dumps(report.extras[name])])
    return buf.getvalue()


def load_report(path: Path | str) -> MetricsReport:
    """Parse a report previously written by :func:`export` (JSON or CSV)."""
    path = Path(path)
    if path.suffix == ".json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        return MetricsReport(
            config_hash=payload["config_hash"],
            seed=payload["seed"],
            pipeline=payload["pipeline"],
            victims=payload["victims"],
            buckets=[
                BucketStat(b["low_m"], b["high_m"], b["samples"], b["trusted_fraction"], b["acceptance_rate"])
                for b in payload["buckets"]
            ],
            histogram=dict(payload["histogram"]),
            pending_resolved=payload["pending_resolved"],
            latency_mean_ns=payload.get("latency_mean_ns"),
            latency_median_ns=payload.get("latency_median_ns"),
            extras=dict(payload.get("extras", {})),
        )
    buckets: list[BucketStat] = []
    summary: dict[str, str] = {}
    in_summary = False
    for row in csv.reader(path.read_text(encoding="utf-8").splitlines()):
        if not row:
            in_summary = True
            continue
        if row[0] in ("bucket_low_m", "key"):
            continue
        if in_summary:
            summary[row[0]] = row[1]
        else:
            buckets.append(BucketStat(float(row[0]), float(row[1]), int(row[2]), float(row[3]), float(row[4])))
    histogram = {
        k.removeprefix("decision_"): int(v) for k, v in summary.items() if k.startswith("decision_")
    }
    extras = {
        k.removeprefix("extra_"): json.loads(v) for k, v in summary.items() if k.startswith("extra_")
    }
    return MetricsReport(
        config_hash=summary["config_hash"],
        seed=int(summary["seed"]),
        pipeline=summary["pipeline"],
        victims=int(summary["victims"]),
        buckets=buckets,
        histogram=histogram,
        pending_resolved=int(summary["pending_resolved"]),
        extras=extras,
    )


# -- event-log replay ---------------------------------------------------------

_DECISION_LINE_KINDS = ("DELIVER", "RESOLVE", "EXPIRE")


def replay_event_log(lines: Iterable[str], info: RunInfo) -> DecisionLog:
    """Rebuild a decision log from a persisted event log.

    Only decision-bearing lines are consumed. Latency is instrumentation
    and is not recoverable from a log.
    """
    log = DecisionLog()
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if parts[1] not in _DECISION_LINE_KINDS:
            continue
        time_s, _kind, sender, receiver, event_id, decision, truth, distance = parts
        log.record(
            DecisionRecord(
                time=float(time_s),
                receiver=int(receiver),
                sender=int(sender),
                event_id=int(event_id),
                ground_truth=truth == "1",
                decision=_DISPOSITION_FROM_NAME[decision],
                distance_m=float(distance),
            )
        )
    return log
