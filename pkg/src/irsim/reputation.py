"""Pure reputation mathematics: ledgers, trust/heuristic banding, and the decision matrix.

Everything in this module is deterministic and side-effect free. Reputation
points are non-negative integers; band thresholds are kept exact (integer
band arithmetic uses rationals) so classification has no gaps or overlaps
at boundaries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from fractions import Fraction
from importlib import resources
from typing import Iterable, Optional

VehicleId = int


class TrustLevel(IntEnum):
    """Local trust band of a sender, ordered LOW < MEDIUM < TOP."""

    LOW = 0
    MEDIUM = 1
    TOP = 2


class HeuristicBand(IntEnum):
    """Distance-to-event band of a sender, ordered NEAR < MIDDLE < AWAY."""

    NEAR = 0
    MIDDLE = 1
    AWAY = 2


class RrlStanding(IntEnum):
    """Network-wide standing of a vehicle in the roadside unit's ledger.

    FLAGGED marks the low-points (misbehaving) end, CLEAR the high-points
    (trusted) end. A vehicle absent from the ledger is CLEAR: it has never
    been reported, so the network holds no opinion against it.
    """

    FLAGGED = 0
    WATCH = 1
    CLEAR = 2


class TrustDecision(IntEnum):
    REJECT = 0
    UNSURE = 1
    ACCEPT = 2


@dataclass(frozen=True, slots=True)
class ReputationRecord:
    """One vehicle's reputation state in a ledger.

    ``points`` is floored at zero; ``misbehavior_points`` only ever grows.
    """

    vehicle: VehicleId
    points: int
    misbehavior_points: int = 0
    last_update: float = 0.0

    def __post_init__(self) -> None:
        if self.points < 0:
            raise ValueError("reputation points must be >= 0")
        if self.misbehavior_points < 0:
            raise ValueError("misbehavior points must be >= 0")


class LocalReputationList:
    """A vehicle's private per-sender reputation ledger.

    At most one record per vehicle. The derived ranking puts the highest
    points first (the most trusted senders at the top).
    """

    def __init__(self, records: Iterable[ReputationRecord] = ()) -> None:
        self.entries: dict[VehicleId, ReputationRecord] = {}
        for rec in records:
            self.upsert(rec)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, vehicle: VehicleId) -> bool:
        return vehicle in self.entries

    def get(self, vehicle: VehicleId) -> Optional[ReputationRecord]:
        return self.entries.get(vehicle)

    def upsert(self, record: ReputationRecord) -> None:
        self.entries[record.vehicle] = record

    def points(self) -> list[int]:
        return [rec.points for rec in self.entries.values()]

    def ranked(self) -> list[ReputationRecord]:
        """Records ordered by points descending (ties broken by vehicle id)."""
        return sorted(self.entries.values(), key=lambda r: (-r.points, r.vehicle))

    def ensure(self, vehicle: VehicleId, default_points: int, now: float) -> ReputationRecord:
        """Return the record for ``vehicle``, creating one at ``default_points``."""
        rec = self.entries.get(vehicle)
        if rec is None:
            rec = ReputationRecord(vehicle, default_points, 0, now)
            self.entries[vehicle] = rec
        return rec

    def adjust(self, vehicle: VehicleId, delta: int, now: float, default_points: int) -> ReputationRecord:
        """Apply a point delta to ``vehicle``, creating a neutral entry first if needed."""
        rec = self.ensure(vehicle, default_points, now)
        rec = apply_point_delta(rec, delta, now=now)
        self.entries[vehicle] = rec
        return rec


@dataclass
class RsuReputationList:
    """A published snapshot of the roadside unit's network-wide ledger.

    ``version`` strictly increases with each publication. The derived
    ranking puts the lowest points first (suspects surface at the top).
    Treat instances as immutable; band computation is cached per snapshot.
    """

    entries: dict[VehicleId, ReputationRecord]
    version: int
    issuer: int

    def __post_init__(self) -> None:
        self._bands: Optional[TrustBands] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, vehicle: VehicleId) -> bool:
        return vehicle in self.entries

    def ranked(self) -> list[ReputationRecord]:
        return sorted(self.entries.values(), key=lambda r: (r.points, r.vehicle))

    def trust_bands(self) -> Optional[TrustBands]:
        if self._bands is None and self.entries:
            self._bands = compute_trust_bands([r.points for r in self.entries.values()])
        return self._bands


@dataclass(frozen=True, slots=True)
class TrustBands:
    """Band geometry over a set of reputation points.

    ``th`` is exactly (max_points - min_points) / 3, kept as a rational so
    integer points classify without floating-point boundary wobble.
    """

    min_points: int
    max_points: int
    th: Fraction

    def __post_init__(self) -> None:
        if self.max_points < self.min_points:
            raise ValueError("max_points must be >= min_points")
        if self.th != Fraction(self.max_points - self.min_points, 3):
            raise ValueError("th must equal (max_points - min_points) / 3")


@dataclass(frozen=True, slots=True)
class HeuristicBands:
    """Band geometry over a set of distance heuristics; h_eval = 2 * w."""

    w: float
    h_eval: float

    def __post_init__(self) -> None:
        if self.w < 0:
            raise ValueError("band width must be >= 0")
        if self.h_eval != 2 * self.w:
            raise ValueError("h_eval must equal 2 * w")


def compute_trust_bands(points: Iterable[int]) -> TrustBands:
    """Derive trust bands from a non-empty collection of reputation points.

    The band length is one third of the observed point spread.
    """
    pts = list(points)
    if not pts:
        raise ValueError("no reputation data")
    for p in pts:
        if p < 0:
            raise ValueError("reputation points must be >= 0")
    lo, hi = min(pts), max(pts)
    return TrustBands(lo, hi, Fraction(hi - lo, 3))


def classify_trust(points: int, bands: TrustBands) -> TrustLevel:
    """Place a point value into LOW / MEDIUM / TOP.

    LOW covers points below min + th, MEDIUM the middle third inclusive of
    both edges, TOP everything above min + 2*th. A degenerate spread
    (th == 0) carries no information, so everything classifies MEDIUM.
    """
    if bands.th == 0:
        return TrustLevel.MEDIUM
    low_edge = bands.min_points + bands.th
    high_edge = bands.min_points + 2 * bands.th
    if points < low_edge:
        return TrustLevel.LOW
    if points <= high_edge:
        return TrustLevel.MEDIUM
    return TrustLevel.TOP


def heuristic_from_distance(distance_m: float) -> float:
    """Convert a straight-line distance to the event into a heuristic: ten meters per unit."""
    if not math.isfinite(distance_m) or distance_m < 0:
        raise ValueError("distance must be finite and >= 0")
    return distance_m / 10.0


def compute_heuristic_bands(heuristics: Iterable[float]) -> HeuristicBands:
    """Derive heuristic bands from the neighbors' heuristics (non-empty)."""
    hs = list(heuristics)
    if not hs:
        raise ValueError("no neighbor heuristics")
    for h in hs:
        if not math.isfinite(h) or h < 0:
            raise ValueError("heuristics must be finite and >= 0")
    w = (max(hs) - min(hs)) / 3.0
    return HeuristicBands(w, 2 * w)


def classify_heuristic(h: float, bands: HeuristicBands) -> HeuristicBand:
    """Place a heuristic into NEAR / MIDDLE / AWAY.

    Thresholds are absolute in h: NEAR below 2w, MIDDLE from 2w up to 3w,
    AWAY from 3w on. Zero width classifies everything MIDDLE.
    """
    if bands.w == 0:
        return HeuristicBand.MIDDLE
    if h < bands.h_eval:
        return HeuristicBand.NEAR
    if h < 3 * bands.w:
        return HeuristicBand.MIDDLE
    return HeuristicBand.AWAY


# Local experience outweighs the network opinion: a TOP sender survives a
# WATCH standing, and a FLAGGED sender with LOW local trust lands on UNSURE
# rather than an outright reject.
_DECISION_MATRIX: dict[tuple[TrustLevel, RrlStanding], TrustDecision] = {
    (TrustLevel.TOP, RrlStanding.CLEAR): TrustDecision.ACCEPT,
    (TrustLevel.TOP, RrlStanding.WATCH): TrustDecision.ACCEPT,
    (TrustLevel.TOP, RrlStanding.FLAGGED): TrustDecision.REJECT,
    (TrustLevel.MEDIUM, RrlStanding.CLEAR): TrustDecision.ACCEPT,
    (TrustLevel.MEDIUM, RrlStanding.WATCH): TrustDecision.UNSURE,
    (TrustLevel.MEDIUM, RrlStanding.FLAGGED): TrustDecision.REJECT,
    (TrustLevel.LOW, RrlStanding.CLEAR): TrustDecision.REJECT,
    (TrustLevel.LOW, RrlStanding.WATCH): TrustDecision.REJECT,
    (TrustLevel.LOW, RrlStanding.FLAGGED): TrustDecision.UNSURE,
}


def decide_trust(local: TrustLevel, standing: RrlStanding) -> TrustDecision:
    """Combine the local trust level with the network standing (exact 9-entry lookup)."""
    return _DECISION_MATRIX[(local, standing)]


def rrl_is_stale(rrl: RsuReputationList, neighbors: Iterable[VehicleId]) -> bool:
    """True when fewer than half of the current neighbors appear in the ledger."""
    ids = set(neighbors)
    present = sum(1 for v in ids if v in rrl.entries)
    return 2 * present < len(ids)


def apply_point_delta(record: ReputationRecord, delta: int, now: Optional[float] = None) -> ReputationRecord:
    """Return a copy of ``record`` with points shifted by ``delta``, floored at zero.

    Misbehavior points are untouched. ``now`` refreshes last_update when given.
    """
    new_points = max(0, record.points + delta)
    return replace(
        record,
        points=new_points,
        last_update=record.last_update if now is None else now,
    )


_STANDING_FROM_LEVEL = {
    TrustLevel.TOP: RrlStanding.CLEAR,
    TrustLevel.MEDIUM: RrlStanding.WATCH,
    TrustLevel.LOW: RrlStanding.FLAGGED,
}


def standing_of(rrl: Optional[RsuReputationList], vehicle: VehicleId) -> RrlStanding:
    """Normalize a vehicle's position in the network ledger.

    High points map to CLEAR, the middle band to WATCH, low points to
    FLAGGED. No ledger, an empty ledger, or an absent vehicle all mean
    "never reported" and read as CLEAR.
    """
    if rrl is None or not rrl.entries:
        return RrlStanding.CLEAR
    rec = rrl.entries.get(vehicle)
    if rec is None:
        return RrlStanding.CLEAR
    bands = rrl.trust_bands()
    assert bands is not None
    return _STANDING_FROM_LEVEL[classify_trust(rec.points, bands)]


def load_conformance_cases() -> dict:
    """Load the bundled worked-example fixture used for cross-implementation testing.

    See README for the schema. The same file can be consumed by other
    implementations of this decision engine.
    """
    path = resources.files("irsim").joinpath("data/conformance.json")
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)
