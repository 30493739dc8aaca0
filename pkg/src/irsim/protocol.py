"""Vehicle-side and roadside-unit state machines for safety-message trust.

A vehicle runs every incoming warning through a fixed pipeline:
corroboration against warnings it is already holding, conflict detection,
sender-distance plausibility, then a banded trust decision combining its
own ledger with the roadside unit's published one. Lone suspicious
warnings are buffered and expire to a rejection if nobody corroborates
them. The roadside unit pairs misbehavior reports from distinct reporters
before it dings anyone, and periodically broadcasts its ledger.

Nodes are single-owner state machines: all mutation happens through the
handler methods, which the caller must invoke sequentially per node.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Iterable, NamedTuple, Optional

from .reputation import (
    HeuristicBand,
    LocalReputationList,
    ReputationRecord,
    RsuReputationList,
    RrlStanding,
    TrustDecision,
    TrustLevel,
    VehicleId,
    apply_point_delta,
    classify_heuristic,
    classify_trust,
    compute_heuristic_bands,
    compute_trust_bands,
    decide_trust,
    heuristic_from_distance,
    rrl_is_stale,
    standing_of,
)

EventId = int
RsuId = int

Position = tuple[float, float]


class EventKind(Enum):
    CRASH = "crash"
    ICE = "ice"
    SUDDEN_BRAKE = "sudden-brake"


class Disposition(IntEnum):
    """Final or provisional fate of a received warning."""

    REJECT = 0
    PENDING = 1
    ACCEPT = 2


@dataclass(frozen=True, slots=True)
class Beacon:
    sender: VehicleId
    position: Position
    speed: float
    heading: tuple[float, float]
    timestamp: float


@dataclass(frozen=True, slots=True)
class Warning:
    sender: VehicleId
    event_id: EventId
    event_kind: EventKind
    event_position: Position
    timestamp: float


@dataclass(frozen=True, slots=True)
class MisbehaviorReport:
    reporter: VehicleId
    accused: VehicleId
    event_id: EventId
    timestamp: float
    signature_valid: bool = True

    def __post_init__(self) -> None:
        if self.reporter == self.accused:
            raise ValueError("reporter and accused must differ")


@dataclass(frozen=True, slots=True)
class RrlBroadcast:
    issuer: RsuId
    version: int
    entries: tuple[tuple[VehicleId, int, int], ...]
    timestamp: float
    signature_valid: bool = True


@dataclass(frozen=True, slots=True)
class RsuForward:
    """Misbehaving-vehicle digest pushed to an adjacent roadside unit."""

    origin: RsuId
    destination: RsuId
    entries: tuple[tuple[VehicleId, int, int], ...]
    timestamp: float


class PendingState(Enum):
    AWAITING = "awaiting"
    RESOLVED = "resolved"


@dataclass
class PendingWarning:
    """Per-event memory of received warnings.

    AWAITING entries are lone suspicious warnings waiting for a second
    opinion; RESOLVED entries keep the reference information around so
    later copies can still be credited or contradicted until the buffer
    entry ages out.
    """

    warning: Warning
    first_seen: float
    corroborators: set[VehicleId]
    state: PendingState
    resolution: Optional[Disposition] = None


class NeighborEntry(NamedTuple):
    position: Position
    last_seen: float
    beacon: Optional[Beacon] = None


NeighborTable = dict[VehicleId, NeighborEntry]


@dataclass
class ProtocolConfig:
    """Timing and geometry knobs shared by vehicles and roadside units."""

    grid: tuple[float, float] = (1000.0, 1000.0)
    pending_ttl: float = 2.0
    neighbor_ttl: float = 1.5
    suspicion_ttl: float = 30.0
    broadcast_period: float = 1.0
    corroboration_tolerance_m: float = 20.0
    plausibility_radius_m: float = 300.0
    strict_top_heuristic: bool = False
    initial_points: int = 5


@dataclass
class WarningOutcome:
    """Result of one warning delivery.

    ``disposition`` is None when the message was a duplicate and ignored.
    ``finalized`` lists earlier pending messages this delivery resolved,
    as (sender, event_id, disposition) tuples.
    """

    disposition: Optional[Disposition]
    reports: list[MisbehaviorReport] = field(default_factory=list)
    finalized: list[tuple[VehicleId, EventId, Disposition]] = field(default_factory=list)


def _distance(a: Position, b: Position) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class VehicleNode:
    """On-board trust state: local ledger, cached network ledger, pending buffer.

    ``distance_noise`` models signal-strength ranging error: called with the
    true distance in meters, it returns an additive offset. Ranging error
    grows with range, so the offset distribution may depend on the input.
    """

    def __init__(
        self,
        vehicle_id: VehicleId,
        config: ProtocolConfig,
        kind: str = "benign",
        distance_noise: Optional[Callable[[float], float]] = None,
    ) -> None:
        self.id = vehicle_id
        self.config = config
        self.kind = kind
        self.position: Optional[Position] = None
        self.lrl = LocalReputationList()
        self.cached_rrl: Optional[RsuReputationList] = None
        self.pending: dict[EventId, PendingWarning] = {}
        self.neighbors: NeighborTable = {}
        self._distance_noise = distance_noise

    # -- beacons ---------------------------------------------------------

    def handle_beacon(self, beacon: Beacon, now: float) -> None:
        """Refresh the neighbor table from a status beacon and evict stale rows."""
        if beacon.sender != self.id:
            self.neighbors[beacon.sender] = NeighborEntry(beacon.position, now, beacon)
        ttl = self.config.neighbor_ttl
        stale = [vid for vid, entry in self.neighbors.items() if now - entry.last_seen > ttl]
        for vid in stale:
            del self.neighbors[vid]

    # -- warnings ---------------------------------------------------------

    def handle_warning(self, warning: Warning, now: float) -> WarningOutcome:
        """Run the full message-trust pipeline for one incoming warning."""
        if warning.sender == self.id:
            return WarningOutcome(None)
        if not self._position_ok(warning.event_position):
            return WarningOutcome(Disposition.REJECT)

        entry = self.pending.get(warning.event_id)
        if entry is not None:
            return self._handle_repeat(entry, warning, now)

        report = self._implausibly_far(warning, now)
        if report is not None:
            return WarningOutcome(Disposition.REJECT, [report])

        return self._handle_lone(warning, now)

    def _handle_repeat(self, entry: PendingWarning, warning: Warning, now: float) -> WarningOutcome:
        sender = warning.sender
        if sender in entry.corroborators:
            # Re-broadcast by a vehicle already counted for this event.
            return WarningOutcome(None)
        if self._consistent(entry.warning, warning):
            finalized: list[tuple[VehicleId, EventId, Disposition]] = []
            if entry.state is PendingState.AWAITING:
                # Second opinion arrived: the event is corroborated. Credit
                # everyone who vouched for it, including the new sender.
                for vid in entry.corroborators:
                    self._adjust(vid, +1, now)
                entry.state = PendingState.RESOLVED
                entry.resolution = Disposition.ACCEPT
                finalized.append((entry.warning.sender, warning.event_id, Disposition.ACCEPT))
            self._adjust(sender, +1, now)
            entry.corroborators.add(sender)
            return WarningOutcome(Disposition.ACCEPT, [], finalized)
        # Same event, different story: penalize the newcomer.
        self._adjust(sender, -1, now)
        return WarningOutcome(Disposition.REJECT)

    def _implausibly_far(self, warning: Warning, now: float) -> Optional[MisbehaviorReport]:
        entry = self.neighbors.get(warning.sender)
        if entry is None:
            return None
        est = self._estimate_distance(_distance(entry.position, warning.event_position), entry.position)
        if est > self.config.plausibility_radius_m:
            self._adjust(warning.sender, -1, now)
            return MisbehaviorReport(self.id, warning.sender, warning.event_id, now)
        return None

    def _handle_lone(self, warning: Warning, now: float) -> WarningOutcome:
        sender = warning.sender
        self.lrl.ensure(sender, self._default_points(), now)
        bands = compute_trust_bands(self.lrl.points())
        nb = self.neighbors.get(sender)

        if nb is None:
            # Never heard a beacon from this sender: assume the worst.
            level = TrustLevel.LOW
            h_band = HeuristicBand.AWAY
        else:
            rec = self.lrl.get(sender)
            assert rec is not None
            level = classify_trust(rec.points, bands)
            h_band = self._sender_heuristic_band(nb, warning.event_position)

        if level is TrustLevel.TOP and self._heuristic_acceptable(h_band):
            self._remember(warning, now, Disposition.ACCEPT)
            return WarningOutcome(Disposition.ACCEPT)

        decision = decide_trust(level, standing_of(self.cached_rrl, sender))
        if decision is TrustDecision.ACCEPT:
            self._remember(warning, now, Disposition.ACCEPT)
            return WarningOutcome(Disposition.ACCEPT)
        if decision is TrustDecision.REJECT:
            self._adjust(sender, -1, now)
            self._remember(warning, now, Disposition.REJECT)
            report = MisbehaviorReport(self.id, sender, warning.event_id, now)
            return WarningOutcome(Disposition.REJECT, [report])
        # Unsure: hold the message and wait for somebody else to confirm it.
        self.pending[warning.event_id] = PendingWarning(
            warning, now, {sender}, PendingState.AWAITING
        )
        return WarningOutcome(Disposition.PENDING)

    def _sender_heuristic_band(self, nb: NeighborEntry, event_pos: Position) -> HeuristicBand:
        hs = [
            heuristic_from_distance(_distance(entry.position, event_pos))
            for entry in self.neighbors.values()
        ]
        h_bands = compute_heuristic_bands(hs)
        est = self._estimate_distance(_distance(nb.position, event_pos), nb.position)
        return classify_heuristic(heuristic_from_distance(est), h_bands)

    def _heuristic_acceptable(self, band: HeuristicBand) -> bool:
        if self.config.strict_top_heuristic:
            return band is HeuristicBand.NEAR
        return band in (HeuristicBand.NEAR, HeuristicBand.MIDDLE)

    def _consistent(self, reference: Warning, candidate: Warning) -> bool:
        if reference.event_kind is not candidate.event_kind:
            return False
        gap = _distance(reference.event_position, candidate.event_position)
        return gap <= self.config.corroboration_tolerance_m

    def _remember(self, warning: Warning, now: float, resolution: Disposition) -> None:
        # Keep decided warnings around (until the buffer ages out) so later
        # copies can corroborate and conflicting ones can be caught.
        self.pending[warning.event_id] = PendingWarning(
            warning, now, {warning.sender}, PendingState.RESOLVED, resolution
        )

    # -- pending buffer ----------------------------------------------------

    def expire_pending(self, now: float) -> tuple[list[tuple[Warning, Disposition]], list[MisbehaviorReport]]:
        """Age out the pending buffer.

        Lone warnings past the TTL resolve to a rejection: the sender loses a
        point and one misbehavior report is emitted. Entries that were
        already resolved just drop out without penalty.
        """
        resolutions: list[tuple[Warning, Disposition]] = []
        reports: list[MisbehaviorReport] = []
        ttl = self.config.pending_ttl
        for event_id in [e for e, p in self.pending.items() if now - p.first_seen > ttl]:
            entry = self.pending.pop(event_id)
            if entry.state is PendingState.AWAITING and len(entry.corroborators) == 1:
                sender = entry.warning.sender
                self._adjust(sender, -1, now)
                reports.append(MisbehaviorReport(self.id, sender, event_id, now))
                entry.state = PendingState.RESOLVED
                entry.resolution = Disposition.REJECT
                resolutions.append((entry.warning, Disposition.REJECT))
        return resolutions, reports

    # -- network ledger ----------------------------------------------------

    def handle_rrl_broadcast(self, broadcast: RrlBroadcast) -> bool:
        """Cache a newer ledger snapshot; seed an empty local ledger from it."""
        if not broadcast.signature_valid:
            return False
        if self.cached_rrl is not None and broadcast.version <= self.cached_rrl.version:
            return False
        entries = {
            vid: ReputationRecord(vid, points, misbehavior, broadcast.timestamp)
            for vid, points, misbehavior in broadcast.entries
        }
        self.cached_rrl = RsuReputationList(entries, broadcast.version, broadcast.issuer)
        if len(self.lrl) == 0:
            for vid, points, misbehavior in broadcast.entries:
                if vid != self.id:
                    self.lrl.upsert(ReputationRecord(vid, points, 0, broadcast.timestamp))
        return True

    def maybe_request_rrl(self, now: Optional[float] = None) -> bool:
        """True when the cached ledger is missing or covers under half the neighbors."""
        if self.cached_rrl is None:
            return True
        ids = self._neighbor_ids(now)
        return rrl_is_stale(self.cached_rrl, ids)

    def _neighbor_ids(self, now: Optional[float]) -> set[VehicleId]:
        if now is None:
            return set(self.neighbors)
        ttl = self.config.neighbor_ttl
        return {vid for vid, e in self.neighbors.items() if now - e.last_seen <= ttl}

    # -- internals ---------------------------------------------------------

    def _adjust(self, vehicle: VehicleId, delta: int, now: float) -> None:
        self.lrl.adjust(vehicle, delta, now, self._default_points())

    def _default_points(self) -> int:
        """Neutral entry points for a sender we have no history with."""
        pts = self.lrl.points()
        if not pts:
            return self.config.initial_points
        return (min(pts) + max(pts)) // 2

    def _estimate_distance(self, true_distance: float, sender_position: Position) -> float:
        """Signal-strength estimate of a sender-derived distance.

        The ranging error scales with how far away the measured sender is.
        """
        if self._distance_noise is None:
            return true_distance
        ranging = _distance(self.position, sender_position) if self.position is not None else true_distance
        return max(0.0, true_distance + self._distance_noise(ranging))

    def _position_ok(self, pos: Position) -> bool:
        x, y = pos
        if not (math.isfinite(x) and math.isfinite(y)):
            return False
        w, h = self.config.grid
        return 0.0 <= x <= w and 0.0 <= y <= h


@dataclass
class SuspicionEntry:
    first_seen: float
    reporter: VehicleId
    event_id: EventId


class RsuNode:
    """Roadside unit: network ledger, suspicion pairing, periodic publication.

    A single report only marks both parties suspicious. Misbehavior points
    move only once a second, distinct, non-flagged reporter confirms the
    same event; the matter is then settled and later reports about it are
    dropped.
    """

    def __init__(
        self,
        rsu_id: RsuId,
        position: Position,
        coverage_radius: float,
        config: ProtocolConfig,
        adjacent: tuple[RsuId, ...] = (),
    ) -> None:
        self.id = rsu_id
        self.position = position
        self.coverage_radius = coverage_radius
        self.config = config
        self.adjacent = adjacent
        self.entries: dict[VehicleId, ReputationRecord] = {}
        self.version = 0
        self.suspicion: dict[VehicleId, SuspicionEntry] = {}
        self._settled: dict[tuple[VehicleId, EventId], float] = {}

    def seed(
        self,
        vehicles: list[VehicleId],
        points: int,
        anchors: Iterable[tuple[VehicleId, int, int]] = (),
        now: float = 0.0,
    ) -> None:
        """Pre-populate the ledger with registered vehicles at neutral points.

        ``anchors`` are ledger-only entries (trusted infrastructure agents,
        previously confirmed misbehavers) that pin the band geometry to the
        full reputation scale; they never appear on the road.
        """
        for vid in vehicles:
            self.entries[vid] = ReputationRecord(vid, points, 0, now)
        for vid, pts, misbehavior in anchors:
            self.entries[vid] = ReputationRecord(vid, pts, misbehavior, now)

    def handle_report(self, report: MisbehaviorReport, now: float) -> bool:
        """Process one misbehavior report; returns True when state changed."""
        if not report.signature_valid:
            return False
        if self._standing(report.reporter) is RrlStanding.FLAGGED:
            return False
        if (report.accused, report.event_id) in self._settled:
            return False

        accused_entry = self.suspicion.get(report.accused)
        if report.accused not in self.suspicion and report.reporter not in self.suspicion:
            entry = SuspicionEntry(now, report.reporter, report.event_id)
            self.suspicion[report.accused] = entry
            self.suspicion[report.reporter] = entry
            return True
        if (
            accused_entry is not None
            and accused_entry.event_id == report.event_id
            and accused_entry.reporter != report.reporter
        ):
            self._escalate(report, accused_entry, now)
            return True
        return False

    def _escalate(self, report: MisbehaviorReport, entry: SuspicionEntry, now: float) -> None:
        accused = report.accused
        rec = self._ensure(accused, now)
        self.entries[accused] = apply_point_delta(
            ReputationRecord(accused, rec.points, rec.misbehavior_points + 1, rec.last_update),
            -1,
            now=now,
        )
        for reporter in (entry.reporter, report.reporter):
            self._bump(reporter, +1, now)
        # Both reporters are vindicated; the accusation is adjudicated.
        self.suspicion.pop(accused, None)
        first = self.suspicion.get(entry.reporter)
        if first is not None and first.event_id == report.event_id:
            del self.suspicion[entry.reporter]
        self._settled[(accused, report.event_id)] = now

    def tick(self, now: float) -> tuple[RrlBroadcast, list[RsuForward]]:
        """Publish the ledger and forward the misbehaving subset downstream.

        Also drops suspicion entries and settled markers past their TTL.
        """
        ttl = self.config.suspicion_ttl
        for vid in [v for v, e in self.suspicion.items() if now - e.first_seen > ttl]:
            del self.suspicion[vid]
        for key in [k for k, t in self._settled.items() if now - t > ttl]:
            del self._settled[key]

        self.version += 1
        entries = tuple(
            (vid, rec.points, rec.misbehavior_points)
            for vid, rec in sorted(self.entries.items())
        )
        broadcast = RrlBroadcast(self.id, self.version, entries, now)
        misbehaving = tuple(e for e in entries if e[2] > 0)
        forwards = [
            RsuForward(self.id, neighbor, misbehaving, now)
            for neighbor in self.adjacent
            if misbehaving
        ]
        return broadcast, forwards

    def handle_forward(self, forward: RsuForward, now: float) -> None:
        """Merge a neighbor unit's misbehaving digest into the local ledger.

        Unknown vehicles are inserted as-is; known ones keep the worse view
        (lower points, higher misbehavior count).
        """
        for vid, points, misbehavior in forward.entries:
            rec = self.entries.get(vid)
            if rec is None:
                self.entries[vid] = ReputationRecord(vid, points, misbehavior, now)
            else:
                self.entries[vid] = ReputationRecord(
                    vid,
                    min(rec.points, points),
                    max(rec.misbehavior_points, misbehavior),
                    now,
                )

    def snapshot(self) -> RsuReputationList:
        return RsuReputationList(dict(self.entries), self.version, self.id)

    def _standing(self, vehicle: VehicleId) -> RrlStanding:
        if not self.entries or vehicle not in self.entries:
            return RrlStanding.CLEAR
        bands = compute_trust_bands([r.points for r in self.entries.values()])
        level = classify_trust(self.entries[vehicle].points, bands)
        return {
            TrustLevel.TOP: RrlStanding.CLEAR,
            TrustLevel.MEDIUM: RrlStanding.WATCH,
            TrustLevel.LOW: RrlStanding.FLAGGED,
        }[level]

    def _ensure(self, vehicle: VehicleId, now: float) -> ReputationRecord:
        rec = self.entries.get(vehicle)
        if rec is None:
            pts = [r.points for r in self.entries.values()]
            default = (min(pts) + max(pts)) // 2 if pts else self.config.initial_points
            rec = ReputationRecord(vehicle, default, 0, now)
            self.entries[vehicle] = rec
        return rec

    def _bump(self, vehicle: VehicleId, delta: int, now: float) -> None:
        rec = self._ensure(vehicle, now)
        self.entries[vehicle] = apply_point_delta(rec, delta, now=now)


# -- wire format -----------------------------------------------------------
#
# Canonical flat serialization: fields in declaration order, little-endian
# integers, meters and seconds as 64-bit floats. Used for channel-occupancy
# accounting; the nominal air sizes follow the configured message classes.

SAFETY_MESSAGE_BYTES = 100
NON_SAFETY_MESSAGE_BYTES = 512

_KIND_CODES = {EventKind.CRASH: 0, EventKind.ICE: 1, EventKind.SUDDEN_BRAKE: 2}


def encode_beacon(b: Beacon) -> bytes:
    return struct.pack(
        "<Qdddddd",
        b.sender,
        b.position[0],
        b.position[1],
        b.speed,
        b.heading[0],
        b.heading[1],
        b.timestamp,
    )


def encode_warning(w: Warning) -> bytes:
    return struct.pack(
        "<QQBddd",
        w.sender,
        w.event_id,
        _KIND_CODES[w.event_kind],
        w.event_position[0],
        w.event_position[1],
        w.timestamp,
    )


def encode_report(r: MisbehaviorReport) -> bytes:
    return struct.pack(
        "<QQQdB", r.reporter, r.accused, r.event_id, r.timestamp, int(r.signature_valid)
    )


def encode_rrl_broadcast(b: RrlBroadcast) -> bytes:
    head = struct.pack("<QQI", b.issuer, b.version, len(b.entries))
    body = b"".join(struct.pack("<Qqq", vid, pts, mis) for vid, pts, mis in b.entries)
    tail = struct.pack("<dB", b.timestamp, int(b.signature_valid))
    return head + body + tail
