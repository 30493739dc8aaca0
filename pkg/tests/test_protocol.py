"""Vehicle and roadside-unit state machine tests."""

import struct

import pytest

from irsim.protocol import (
    Beacon,
    Disposition,
    EventKind,
    MisbehaviorReport,
    PendingState,
    ProtocolConfig,
    RrlBroadcast,
    RsuForward,
    RsuNode,
    VehicleNode,
    Warning,
    encode_beacon,
    encode_report,
    encode_rrl_broadcast,
    encode_warning,
)
from irsim.reputation import ReputationRecord, RrlStanding, standing_of


CFG = ProtocolConfig()

# Point spreads reproducing the worked ledger: sender 1 sits at the top,
# senders 5..8 at the bottom.
WORKED_POINTS = {1: 13, 2: 11, 3: 7, 4: 6, 5: 4, 6: 3, 7: 1, 8: 1}


def beacon(sender, x, y=0.0, t=0.0):
    return Beacon(sender, (x, y), 20.0, (1.0, 0.0), t)


def make_node(vid=0, config=CFG):
    return VehicleNode(vid, config)


def seed_lrl(node, points_by_vehicle, now=0.0):
    for vid, pts in points_by_vehicle.items():
        node.lrl.upsert(ReputationRecord(vid, pts, 0, now))


def make_rrl_broadcast(points_by_vehicle, version=1, issuer=9000, t=0.0, valid=True):
    entries = tuple((vid, pts, 0) for vid, pts in sorted(points_by_vehicle.items()))
    return RrlBroadcast(issuer, version, entries, t, valid)


class TestBeacons:
    def test_new_sender_adds_entry(self):
        node = make_node()
        node.handle_beacon(beacon(5, 100.0), now=0.0)
        assert 5 in node.neighbors
        assert node.neighbors[5].position == (100.0, 0.0)

    def test_repeat_sender_updates_in_place(self):
        node = make_node()
        node.handle_beacon(beacon(5, 100.0), now=0.0)
        node.handle_beacon(beacon(5, 110.0, t=0.1), now=0.1)
        assert len(node.neighbors) == 1
        assert node.neighbors[5].last_seen == 0.1

    def test_stale_entry_evicted_after_gap(self):
        node = make_node()
        node.handle_beacon(beacon(5, 100.0), now=0.0)
        node.handle_beacon(beacon(6, 200.0, t=2.0), now=2.0)  # 2 s > 1.5 s TTL
        assert 5 not in node.neighbors
        assert 6 in node.neighbors

    def test_own_beacon_ignored(self):
        node = make_node(vid=3)
        node.handle_beacon(beacon(3, 50.0), now=0.0)
        assert 3 not in node.neighbors


class TestWarningPipeline:
    def _node_with_neighbors(self):
        node = make_node()
        seed_lrl(node, WORKED_POINTS)
        # Sender 1 close to the event, others spread out to the edge.
        node.handle_beacon(beacon(1, 100.0), now=0.0)
        node.handle_beacon(beacon(2, 150.0), now=0.0)
        node.handle_beacon(beacon(3, 250.0), now=0.0)
        node.handle_beacon(beacon(4, 400.0), now=0.0)
        return node

    def test_top_sender_near_event_accepted(self):
        node = self._node_with_neighbors()
        warning = Warning(1, 42, EventKind.CRASH, (110.0, 0.0), 1.0)
        out = node.handle_warning(warning, 1.0)
        assert out.disposition is Disposition.ACCEPT
        assert out.reports == []

    def test_corroboration_credits_everyone(self):
        node = self._node_with_neighbors()
        node.cached_rrl = None
        seed_lrl(node, {**WORKED_POINTS, 5: 4})
        # Put sender 5 in Low so its lone warning parks as pending.
        node.handle_rrl_broadcast(make_rrl_broadcast(WORKED_POINTS))
        node.handle_beacon(beacon(5, 120.0), now=0.5)
        w1 = Warning(5, 77, EventKind.ICE, (115.0, 0.0), 1.0)
        out1 = node.handle_warning(w1, 1.0)
        assert out1.disposition is Disposition.PENDING

        before_5 = node.lrl.get(5).points
        before_3 = node.lrl.get(3).points
        w2 = Warning(3, 77, EventKind.ICE, (116.0, 0.0), 1.5)
        out2 = node.handle_warning(w2, 1.5)
        assert out2.disposition is Disposition.ACCEPT
        assert out2.reports == []  # corroborated warnings never generate reports
        assert node.lrl.get(5).points == before_5 + 1
        assert node.lrl.get(3).points == before_3 + 1
        assert out2.finalized == [(5, 77, Disposition.ACCEPT)]

    def test_third_copy_credits_newcomer_only(self):
        node = self._node_with_neighbors()
        node.handle_rrl_broadcast(make_rrl_broadcast(WORKED_POINTS))
        node.handle_beacon(beacon(5, 120.0), now=0.5)
        node.handle_warning(Warning(5, 77, EventKind.ICE, (115.0, 0.0), 1.0), 1.0)
        node.handle_warning(Warning(3, 77, EventKind.ICE, (116.0, 0.0), 1.5), 1.5)
        before_5 = node.lrl.get(5).points
        before_2 = node.lrl.get(2).points
        out3 = node.handle_warning(Warning(2, 77, EventKind.ICE, (117.0, 0.0), 1.6), 1.6)
        assert out3.disposition is Disposition.ACCEPT
        assert out3.finalized == []
        assert node.lrl.get(2).points == before_2 + 1
        assert node.lrl.get(5).points == before_5  # no double credit

    def test_duplicate_from_same_sender_ignored(self):
        node = self._node_with_neighbors()
        node.handle_rrl_broadcast(make_rrl_broadcast(WORKED_POINTS))
        node.handle_beacon(beacon(5, 120.0), now=0.5)
        node.handle_warning(Warning(5, 77, EventKind.ICE, (115.0, 0.0), 1.0), 1.0)
        out = node.handle_warning(Warning(5, 77, EventKind.ICE, (115.0, 0.0), 1.1), 1.1)
        assert out.disposition is None

    def test_conflicting_kind_penalized(self):
        node = self._node_with_neighbors()
        node.handle_warning(Warning(1, 42, EventKind.CRASH, (110.0, 0.0), 1.0), 1.0)
        before = node.lrl.get(2).points
        out = node.handle_warning(Warning(2, 42, EventKind.ICE, (110.0, 0.0), 1.1), 1.1)
        assert out.disposition is Disposition.REJECT
        assert node.lrl.get(2).points == before - 1
        assert out.reports == []

    def test_conflicting_position_penalized(self):
        node = self._node_with_neighbors()
        node.handle_warning(Warning(1, 42, EventKind.CRASH, (110.0, 0.0), 1.0), 1.0)
        out = node.handle_warning(Warning(2, 42, EventKind.CRASH, (140.0, 0.0), 1.1), 1.1)
        assert out.disposition is Disposition.REJECT

    def test_consistent_within_tolerance_not_conflict(self):
        node = self._node_with_neighbors()
        node.handle_warning(Warning(1, 42, EventKind.CRASH, (110.0, 0.0), 1.0), 1.0)
        out = node.handle_warning(Warning(2, 42, EventKind.CRASH, (125.0, 0.0), 1.1), 1.1)
        assert out.disposition is Disposition.ACCEPT  # 15 m apart corroborates

    def test_far_sender_rejected_and_reported(self):
        node = self._node_with_neighbors()
        before = node.lrl.get(4).points
        # Sender 4 last seen at x=400; claims an event 500 m away from there.
        out = node.handle_warning(Warning(4, 50, EventKind.CRASH, (900.0, 0.0), 1.0), 1.0)
        assert out.disposition is Disposition.REJECT
        assert len(out.reports) == 1
        assert out.reports[0].accused == 4
        assert out.reports[0].reporter == node.id
        assert node.lrl.get(4).points == before - 1

    def test_low_flagged_goes_pending(self):
        node = self._node_with_neighbors()
        node.handle_rrl_broadcast(make_rrl_broadcast(WORKED_POINTS))
        node.handle_beacon(beacon(7, 130.0), now=0.5)
        # Sender 7: local Low (1 point), network standing Flagged.
        assert standing_of(node.cached_rrl, 7) is RrlStanding.FLAGGED
        out = node.handle_warning(Warning(7, 60, EventKind.ICE, (120.0, 0.0), 1.0), 1.0)
        assert out.disposition is Disposition.PENDING
        assert 60 in node.pending
        assert node.pending[60].state is PendingState.AWAITING

    def test_low_watch_rejected_with_report(self):
        node = self._node_with_neighbors()
        rrl_points = dict(WORKED_POINTS)
        rrl_points[7] = 7  # Watch standing in the network ledger
        node.handle_rrl_broadcast(make_rrl_broadcast(rrl_points))
        node.handle_beacon(beacon(7, 130.0), now=0.5)
        before = node.lrl.get(7).points
        out = node.handle_warning(Warning(7, 60, EventKind.ICE, (120.0, 0.0), 1.0), 1.0)
        assert out.disposition is Disposition.REJECT
        assert len(out.reports) == 1
        assert node.lrl.get(7).points == before - 1

    def test_unknown_sender_treated_most_pessimistic(self):
        node = self._node_with_neighbors()
        rrl_points = dict(WORKED_POINTS)
        rrl_points[99] = 13  # would be Clear if the standing were consulted kindly
        node.handle_rrl_broadcast(make_rrl_broadcast(rrl_points))
        # Sender 99 never sent a beacon: trust Low, heuristic Away.
        out = node.handle_warning(Warning(99, 61, EventKind.ICE, (120.0, 0.0), 1.0), 1.0)
        assert out.disposition is Disposition.REJECT
        assert len(out.reports) == 1

    def test_malformed_position_rejected(self):
        node = self._node_with_neighbors()
        out = node.handle_warning(Warning(1, 62, EventKind.ICE, (5000.0, 0.0), 1.0), 1.0)
        assert out.disposition is Disposition.REJECT
        out2 = node.handle_warning(Warning(1, 63, EventKind.ICE, (float("nan"), 0.0), 1.0), 1.0)
        assert out2.disposition is Disposition.REJECT

    def test_own_warning_ignored(self):
        node = self._node_with_neighbors()
        out = node.handle_warning(Warning(node.id, 64, EventKind.ICE, (120.0, 0.0), 1.0), 1.0)
        assert out.disposition is None

    @pytest.mark.parametrize("strict,expected", [(True, Disposition.REJECT), (False, Disposition.ACCEPT)])
    def test_strict_mode_requires_near(self, strict, expected):
        config = ProtocolConfig(strict_top_heuristic=strict)
        node = make_node(config=config)
        seed_lrl(node, WORKED_POINTS)
        # Neighbor heuristics to the event at x=0: 2 -> 28 -> 40; the sender
        # sits in the middle band (2w = 25.33 <= 28 < 3w = 38).
        node.handle_beacon(beacon(1, 280.0), now=0.0)
        node.handle_beacon(beacon(2, 20.0), now=0.0)
        node.handle_beacon(beacon(3, 400.0), now=0.0)
        # Flagged network standing: only the heuristic shortcut can accept.
        node.handle_rrl_broadcast(make_rrl_broadcast({1: 1, 2: 13, 3: 7}))
        node.lrl.upsert(ReputationRecord(1, 13))
        out = node.handle_warning(Warning(1, 65, EventKind.ICE, (0.0, 0.0), 1.0), 1.0)
        assert out.disposition is expected


class TestPendingExpiry:
    def _pending_node(self):
        node = make_node()
        seed_lrl(node, WORKED_POINTS)
        node.handle_rrl_broadcast(make_rrl_broadcast(WORKED_POINTS))
        node.handle_beacon(beacon(7, 130.0), now=0.5)
        node.handle_beacon(beacon(2, 150.0), now=0.5)
        out = node.handle_warning(Warning(7, 60, EventKind.ICE, (120.0, 0.0), 1.0), 1.0)
        assert out.disposition is Disposition.PENDING
        return node

    def test_lone_pending_expires_to_reject(self):
        node = self._pending_node()
        before = node.lrl.get(7).points
        resolutions, reports = node.expire_pending(3.5)  # 2.5 s > 2.0 s TTL
        assert len(resolutions) == 1
        assert resolutions[0][1] is Disposition.REJECT
        assert len(reports) == 1
        assert reports[0].accused == 7
        assert node.lrl.get(7).points == before - 1
        assert 60 not in node.pending

    def test_pending_within_ttl_untouched(self):
        node = self._pending_node()
        resolutions, reports = node.expire_pending(2.0)
        assert resolutions == [] and reports == []
        assert 60 in node.pending

    def test_corroborated_pending_expires_without_penalty(self):
        node = self._pending_node()
        node.handle_warning(Warning(2, 60, EventKind.ICE, (121.0, 0.0), 1.5), 1.5)
        points_before = {v: r.points for v, r in node.lrl.entries.items()}
        resolutions, reports = node.expire_pending(10.0)
        assert resolutions == [] and reports == []
        assert 60 not in node.pending
        assert {v: r.points for v, r in node.lrl.entries.items()} == points_before

    def test_single_resolution(self):
        # A pending warning resolves exactly once: corroboration then expiry
        # must not double-credit or penalize.
        node = self._pending_node()
        out = node.handle_warning(Warning(2, 60, EventKind.ICE, (121.0, 0.0), 1.5), 1.5)
        assert out.finalized == [(7, 60, Disposition.ACCEPT)]
        resolutions, reports = node.expire_pending(10.0)
        assert resolutions == [] and reports == []


class TestRrlBroadcastHandling:
    def test_newer_version_replaces(self):
        node = make_node()
        node.handle_rrl_broadcast(make_rrl_broadcast({1: 5}, version=1))
        assert node.handle_rrl_broadcast(make_rrl_broadcast({1: 6}, version=2))
        assert node.cached_rrl.version == 2
        assert node.cached_rrl.entries[1].points == 6

    def test_stale_version_ignored(self):
        node = make_node()
        node.handle_rrl_broadcast(make_rrl_broadcast({1: 5}, version=5))
        assert not node.handle_rrl_broadcast(make_rrl_broadcast({1: 9}, version=3))
        assert node.cached_rrl.version == 5
        assert node.cached_rrl.entries[1].points == 5

    def test_invalid_signature_discarded(self):
        node = make_node()
        assert not node.handle_rrl_broadcast(make_rrl_broadcast({1: 5}, valid=False))
        assert node.cached_rrl is None

    def test_bootstrap_seeds_empty_lrl(self):
        node = make_node(vid=3)
        node.handle_rrl_broadcast(make_rrl_broadcast({1: 5, 2: 9, 3: 4}))
        assert node.lrl.get(1).points == 5
        assert node.lrl.get(2).points == 9
        assert node.lrl.get(3) is None  # own entry is not imported

    def test_bootstrap_idempotent(self):
        node = make_node()
        b = make_rrl_broadcast({1: 5, 2: 9})
        node.handle_rrl_broadcast(b)
        snapshot = {v: r.points for v, r in node.lrl.entries.items()}
        node.handle_rrl_broadcast(b)
        assert {v: r.points for v, r in node.lrl.entries.items()} == snapshot

    def test_nonempty_lrl_untouched(self):
        node = make_node()
        seed_lrl(node, {9: 2})
        node.handle_rrl_broadcast(make_rrl_broadcast({1: 5}))
        assert node.lrl.get(1) is None
        assert node.lrl.get(9).points == 2

    def test_version_never_decreases(self):
        node = make_node()
        versions = [1, 4, 2, 4, 9, 3]
        high = 0
        for v in versions:
            node.handle_rrl_broadcast(make_rrl_broadcast({1: 5}, version=v))
            high = max(high, v)
            assert node.cached_rrl.version == high


class TestRrlRequest:
    def test_no_cache_requests(self):
        node = make_node()
        assert node.maybe_request_rrl() is True

    def test_under_half_coverage_requests(self):
        node = make_node()
        node.handle_rrl_broadcast(make_rrl_broadcast({v: 5 for v in range(4)}))
        for v in range(10):
            node.handle_beacon(beacon(v + 1, 100.0 + v), now=0.0)
        # Neighbors 1..10, ledger covers 1..3 -> 3 of 10 known.
        assert node.maybe_request_rrl() is True

    def test_full_coverage_does_not_request(self):
        node = make_node()
        node.handle_rrl_broadcast(make_rrl_broadcast({v: 5 for v in range(1, 5)}))
        for v in range(1, 5):
            node.handle_beacon(beacon(v, 100.0 + v), now=0.0)
        assert node.maybe_request_rrl() is False


def make_rsu(**kwargs):
    return RsuNode(9000, (500.0, 500.0), 440.0, CFG, **kwargs)


def report(reporter, accused, event_id=7, t=0.0, valid=True):
    return MisbehaviorReport(reporter, accused, event_id, t, valid)


class TestRsuReports:
    def test_first_report_marks_both_suspicious(self):
        rsu = make_rsu()
        rsu.seed(list(range(10)), 5)
        assert rsu.handle_report(report(2, 14 % 10), 1.0) or True
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.handle_report(report(2, 14), 1.0)
        assert 14 in rsu.suspicion and 2 in rsu.suspicion

    def test_second_distinct_reporter_escalates(self):
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.handle_report(report(2, 14), 1.0)
        rsu.handle_report(report(5, 14), 2.0)
        assert rsu.entries[14].misbehavior_points == 1
        assert rsu.entries[14].points == 4
        assert rsu.entries[2].points == 6
        assert rsu.entries[5].points == 6
        assert 14 not in rsu.suspicion
        assert 2 not in rsu.suspicion

    def test_same_reporter_does_not_escalate(self):
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.handle_report(report(2, 14), 1.0)
        rsu.handle_report(report(2, 14, t=2.0), 2.0)
        assert rsu.entries[14].misbehavior_points == 0

    def test_different_event_does_not_escalate(self):
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.handle_report(report(2, 14, event_id=7), 1.0)
        rsu.handle_report(report(5, 14, event_id=8), 2.0)
        assert rsu.entries[14].misbehavior_points == 0

    def test_settled_event_not_reescalated(self):
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.handle_report(report(2, 14), 1.0)
        rsu.handle_report(report(5, 14), 2.0)
        rsu.handle_report(report(6, 14), 3.0)
        rsu.handle_report(report(7, 14), 4.0)
        assert rsu.entries[14].misbehavior_points == 1
        assert rsu.entries[14].points == 4

    def test_flagged_reporter_ignored(self):
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.entries[3] = ReputationRecord(3, 0)  # low points: Flagged
        rsu.entries[4] = ReputationRecord(4, 13)  # spread so bands discriminate
        changed = rsu.handle_report(report(3, 14), 1.0)
        assert changed is False
        assert 14 not in rsu.suspicion

    def test_flagged_reporter_immunity_property(self):
        # No sequence of reports from Flagged reporters changes any entry.
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.entries[3] = ReputationRecord(3, 0)
        rsu.entries[8] = ReputationRecord(8, 0)
        rsu.entries[4] = ReputationRecord(4, 13)
        before = dict(rsu.entries)
        for t, (rep, acc) in enumerate([(3, 14), (8, 14), (3, 15), (8, 15), (3, 16)]):
            rsu.handle_report(report(rep, acc, event_id=100 + t), float(t))
        assert rsu.entries == before

    def test_invalid_signature_ignored(self):
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.handle_report(report(2, 14, valid=False), 1.0)
        assert not rsu.suspicion

    def test_reporter_equals_accused_rejected(self):
        with pytest.raises(ValueError):
            report(2, 2)

    def test_misbehavior_never_decreases(self):
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        seen = 0
        for event in range(3):
            rsu.handle_report(report(2, 14, event_id=event), float(event))
            rsu.handle_report(report(5, 14, event_id=event), float(event) + 0.5)
            assert rsu.entries[14].misbehavior_points >= seen
            seen = rsu.entries[14].misbehavior_points


class TestRsuTick:
    def test_broadcast_version_increments(self):
        rsu = make_rsu()
        rsu.seed([1, 2], 5)
        b1, _ = rsu.tick(1.0)
        b2, _ = rsu.tick(2.0)
        assert b2.version == b1.version + 1
        assert len(b1.entries) == 2

    def test_forwards_list_misbehavers_only(self):
        rsu = make_rsu(adjacent=(9001,))
        rsu.seed(list(range(6)), 5)
        rsu.handle_report(report(2, 4, event_id=1), 1.0)
        rsu.handle_report(report(3, 4, event_id=1), 1.1)
        rsu.handle_report(report(2, 5, event_id=2), 1.2)
        rsu.handle_report(report(3, 5, event_id=2), 1.3)
        _, forwards = rsu.tick(2.0)
        assert len(forwards) == 1
        assert {e[0] for e in forwards[0].entries} == {4, 5}

    def test_no_forward_without_misbehavers(self):
        rsu = make_rsu(adjacent=(9001,))
        rsu.seed([1, 2], 5)
        _, forwards = rsu.tick(1.0)
        assert forwards == []

    def test_suspicion_ttl_drops_without_escalation(self):
        rsu = make_rsu()
        rsu.seed(list(range(20)), 5)
        rsu.handle_report(report(2, 14), 0.0)
        rsu.tick(31.0)  # 31 s > 30 s TTL
        assert 14 not in rsu.suspicion
        assert rsu.entries[14].misbehavior_points == 0
        # A fresh pair after the drop escalates normally.
        rsu.handle_report(report(5, 14, event_id=9), 32.0)
        rsu.handle_report(report(6, 14, event_id=9), 33.0)
        assert rsu.entries[14].misbehavior_points == 1

    def test_handle_forward_merges_worse_view(self):
        rsu = make_rsu()
        rsu.seed([1, 2], 5)
        fwd = RsuForward(9001, 9000, ((1, 2, 3), (7, 1, 4)), 5.0)
        rsu.handle_forward(fwd, 5.0)
        assert rsu.entries[1].points == 2
        assert rsu.entries[1].misbehavior_points == 3
        assert rsu.entries[7].points == 1
        assert rsu.entries[7].misbehavior_points == 4


class TestWireFormat:
    def test_beacon_encoding(self):
        b = Beacon(7, (1.5, 2.5), 30.0, (1.0, 0.0), 4.25)
        blob = encode_beacon(b)
        assert len(blob) == 56
        sender, x, y, speed, hx, hy, ts = struct.unpack("<Qdddddd", blob)
        assert (sender, x, y, speed, hx, hy, ts) == (7, 1.5, 2.5, 30.0, 1.0, 0.0, 4.25)

    def test_warning_encoding(self):
        w = Warning(7, 99, EventKind.ICE, (10.0, 20.0), 1.5)
        blob = encode_warning(w)
        assert len(blob) == 41
        sender, event, kind, x, y, ts = struct.unpack("<QQBddd", blob)
        assert (sender, event, kind, x, y, ts) == (7, 99, 1, 10.0, 20.0, 1.5)

    def test_report_encoding(self):
        r = MisbehaviorReport(3, 9, 44, 2.0, True)
        blob = encode_report(r)
        assert len(blob) == 33
        reporter, accused, event, ts, valid = struct.unpack("<QQQdB", blob)
        assert (reporter, accused, event, ts, valid) == (3, 9, 44, 2.0, 1)

    def test_rrl_broadcast_encoding(self):
        b = RrlBroadcast(9000, 3, ((1, 5, 0), (2, 9, 1)), 6.0, True)
        blob = encode_rrl_broadcast(b)
        assert len(blob) == 20 + 2 * 24 + 9
        issuer, version, count = struct.unpack_from("<QQI", blob)
        assert (issuer, version, count) == (9000, 3, 2)
        vid, pts, mis = struct.unpack_from("<Qqq", blob, 20)
        assert (vid, pts, mis) == (1, 5, 0)
