import math
from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bbnsim.channel import constant_trace, hub, windows
from bbnsim.errors import ConfigError, TopologyError
from bbnsim.mac import (MacConfig, MacWindowStats, SlotKind, TdmaSchedule,
                        ThresholdController, adapt_threshold,
                        continuous_backoff_durations, mpcs_permits,
                        run_csma_window, run_tdma_window)


def stats_with(bop: float, icp: float) -> MacWindowStats:
    # build counters realizing the requested fractions over 100 slots
    attempts = 100
    backoffs = round(bop * attempts)
    transmissions = attempts - backoffs
    failures = round(icp * transmissions) if transmissions else 0
    st = MacWindowStats(attempts=attempts, backoffs=backoffs,
                        transmissions=transmissions,
                        successes=transmissions - failures, failures=failures)
    assert st.bop == pytest.approx(bop)
    assert st.icp == pytest.approx(icp)
    return st


class TestMpcs:
    def test_max_below_threshold_permits(self):
        assert mpcs_permits(0.0, [-95.0, -88.0], -86.0) is True

    def test_max_at_or_above_threshold_denies(self):
        assert mpcs_permits(0.0, [-95.0, -85.0], -86.0) is False

    def test_empty_contenders_permit(self):
        assert mpcs_permits(0.0, [], -120.0) is True

    def test_tx_power_shifts_comparison(self):
        assert mpcs_permits(5.0, [-90.0], -86.0) is True
        assert mpcs_permits(5.0, [-90.0], -85.0) is False

    @given(st.lists(st.floats(-110, -60), min_size=1, max_size=8),
           st.floats(-100, -70), st.floats(-100, -70))
    def test_monotone_in_threshold(self, gains, t1, t2):
        lo, hi = sorted((t1, t2))
        if not mpcs_permits(0.0, gains, hi):
            assert not mpcs_permits(0.0, gains, lo)


class TestAdaptThreshold:
    @pytest.mark.parametrize("bop,icp,expect", [
        (0.6, 0.1, -89.0),   # majority back-off relaxes
        (0.4, 0.6, -91.0),   # majority bad decodes tightens
        (0.5, 0.6, -89.0),   # back-off branch has priority at exactly 50%
        (0.4, 0.5, -90.0),   # decode branch needs strictly more than 50%
        (0.49, 0.5, -90.0),
        (0.49, 0.51, -91.0),
        (0.5, 0.5, -89.0),
        (0.5, 0.51, -89.0),
        (0.0, 0.0, -90.0),
    ])
    def test_branch_table(self, bop, icp, expect):
        ctrl = ThresholdController(-90.0)
        assert adapt_threshold(ctrl, stats_with(bop, icp)) == expect
        assert ctrl.cs_th_dbm == expect

    def test_step_is_at_most_one_db(self):
        ctrl = ThresholdController(-90.0)
        for bop in (0.0, 0.3, 0.5, 0.8, 1.0):
            for icp in (0.0, 0.5, 0.51, 1.0):
                before = ctrl.cs_th_dbm
                adapt_threshold(ctrl, stats_with(bop, icp))
                assert abs(ctrl.cs_th_dbm - before) <= 1.0

    def test_persistent_backoff_strictly_increases(self):
        ctrl = ThresholdController(-90.0)
        values = []
        for _ in range(5):
            values.append(adapt_threshold(ctrl, stats_with(0.7, 0.0)))
        assert values == [-89.0, -88.0, -87.0, -86.0, -85.0]


class TestMacConfig:
    def test_attempt_fits_slot(self):
        cfg = MacConfig()
        assert cfg.t_packet_ms + cfg.t_ack_ms + cfg.t_sifs_us / 1000.0 < cfg.slot_ms

    def test_oversized_attempt_rejected(self):
        with pytest.raises(ConfigError):
            MacConfig(t_packet_ms=60.0)


def _queues(sources, n=1, arrival=0):
    return {s: deque([arrival] * n) for s in sources}


class TestCsmaWindow:
    def test_single_source_no_contenders_succeeds(self):
        trace = constant_trace(2, 600, inter_db=-60.0)
        win = windows(trace, 600)[0]
        queues = _queues([0], n=1)
        outcomes, stats = run_csma_window(
            win, {0: -90.0}, queues, trace, {0: hub(1)}, MacConfig())
        first = [o for o in outcomes if o.slot_index == 0][0]
        assert first.kind == SlotKind.SUCCESS
        assert stats[0].successes == 1
        assert not queues[0]

    def test_mutual_blocking_gives_full_backoff(self):
        # two flows whose cross-gains sit above the threshold: both defer
        # every slot and the back-off share is 1
        overrides = {
            (hub(0), hub(1)): -60.0, (hub(2), hub(3)): -60.0,
            (hub(2), hub(1)): -80.0, (hub(0), hub(3)): -80.0,
        }
        trace = constant_trace(4, 600, inter_db=-99.0, overrides=overrides)
        win = windows(trace, 600)[0]
        queues = _queues([0, 2], n=50)
        outcomes, stats = run_csma_window(
            win, {0: -86.0, 2: -86.0}, queues, trace,
            {0: hub(1), 2: hub(3)}, MacConfig())
        assert stats[0].bop == 1.0
        assert stats[2].bop == 1.0
        assert all(o.kind == SlotKind.BACKOFF for o in outcomes
                   if o.source.ban in (0, 2))

    def test_weak_contention_both_transmit_and_succeed(self):
        # cross-gains below threshold: both transmit; the computed SINR
        # matches the hand value near 34.4 dB and both decode
        overrides = {
            (hub(0), hub(1)): -60.0, (hub(2), hub(3)): -60.0,
            (hub(2), hub(1)): -95.0, (hub(0), hub(3)): -95.0,
        }
        trace = constant_trace(4, 600, inter_db=-95.0, overrides=overrides)
        win = windows(trace, 600)[0]
        queues = _queues([0, 2], n=12)
        outcomes, stats = run_csma_window(
            win, {0: -86.0, 2: -86.0}, queues, trace,
            {0: hub(1), 2: hub(3)}, MacConfig())
        expect = 10 * math.log10(1e-6 / (10 ** -9.5 + 1e-10))
        assert expect == pytest.approx(34.43, abs=0.01)
        assert stats[0].successes == 12
        assert stats[2].successes == 12
        assert stats[0].backoffs == 0

    def test_failed_decode_requeues_packet(self):
        # permitted but undecodable: received power below sensitivity
        trace = constant_trace(2, 600, inter_db=-95.0)
        win = windows(trace, 600)[0]
        queues = _queues([0], n=1)
        outcomes, stats = run_csma_window(
            win, {0: -86.0}, queues, trace, {0: hub(1)}, MacConfig())
        assert stats[0].failures == 12  # retried every slot of the window
        assert len(queues[0]) == 1

    def test_conservation_counters(self):
        overrides = {(hub(2), hub(1)): -85.0, (hub(0), hub(3)): -85.0}
        trace = constant_trace(4, 1800, inter_db=-92.0, overrides=overrides)
        cfg = MacConfig()
        for win in windows(trace, 600):
            queues = _queues([0, 2], n=3, arrival=win.start_sample)
            _, stats = run_csma_window(
                win, {0: -88.0, 2: -88.0}, queues, trace,
                {0: hub(1), 2: hub(3)}, cfg)
            for st_ in stats.values():
                assert st_.attempts == st_.transmissions + st_.backoffs
                assert st_.transmissions == st_.successes + st_.failures

    def test_idle_when_no_pending(self):
        trace = constant_trace(2, 600)
        win = windows(trace, 600)[0]
        outcomes, stats = run_csma_window(
            win, {0: -90.0}, {0: deque()}, trace, {0: hub(1)}, MacConfig())
        assert all(o.kind == SlotKind.IDLE for o in outcomes)
        assert stats[0].attempts == 0
        assert stats[0].bop == 0.0

    def test_packet_not_pending_before_arrival_slot(self):
        trace = constant_trace(2, 600, inter_db=-60.0)
        win = windows(trace, 600)[0]
        queues = {0: deque([5])}
        outcomes, _ = run_csma_window(
            win, {0: -90.0}, queues, trace, {0: hub(1)}, MacConfig())
        kinds = {o.slot_index: o.kind for o in outcomes}
        assert kinds[4] == SlotKind.IDLE
        assert kinds[5] == SlotKind.SUCCESS

    def test_unknown_destination_is_topology_error(self):
        trace = constant_trace(2, 600)
        win = windows(trace, 600)[0]
        with pytest.raises(TopologyError):
            run_csma_window(win, {0: -90.0}, _queues([0]), trace,
                            {0: hub(7)}, MacConfig())

    def test_raising_static_threshold_weakly_reduces_backoffs(self):
        # always-decodable regime so queue draining is monotone in the
        # threshold; total back-off slots must not increase
        overrides = {
            (hub(0), hub(1)): -60.0, (hub(2), hub(3)): -60.0,
            (hub(1), hub(2)): -60.0, (hub(0), hub(2)): -84.0,
            (hub(2), hub(0)): -84.0,
        }
        trace = constant_trace(4, 3000, inter_db=-89.0, overrides=overrides)
        cfg = MacConfig(decode_sinr_db=-50.0, rx_sensitivity_dbm=-99.0)
        totals = []
        for th in (-95.0, -90.0, -85.0, -80.0):
            total = 0
            queues = {0: deque([0, 3, 6, 9]), 2: deque([0, 2, 4, 6])}
            for win in windows(trace, 600):
                _, stats = run_csma_window(
                    win, {0: th, 2: th}, queues, trace,
                    {0: hub(1), 2: hub(3)}, cfg)
                total += sum(s.backoffs for s in stats.values())
            totals.append(total)
        assert all(a >= b for a, b in zip(totals, totals[1:]))


class TestTdma:
    def test_superframe_shape(self):
        sched = TdmaSchedule.build(1.0 / 12.0, (0, 1, 2, 3))
        assert sched.superframe_slots == 12
        owned = [sched.owner(i) for i in range(12)]
        assert owned[:4] == [0, 1, 2, 3]
        assert owned[4:] == [None] * 8
        # assigned share matches the duty cycle exactly here
        assert owned.count(0) / 12 == pytest.approx(sched.duty_cycle, abs=1 / 12)

    def test_too_many_coordinated(self):
        with pytest.raises(ConfigError):
            TdmaSchedule.build(0.5, (0, 1, 2))

    def test_coordinated_idle_in_own_slot_without_traffic(self):
        trace = constant_trace(2, 600, inter_db=-60.0)
        win = windows(trace, 600)[0]
        sched = TdmaSchedule.build(1.0 / 12.0, (0,))
        outcomes, _ = run_tdma_window(win, sched, {0: deque()}, trace,
                                      {0: hub(1)}, MacConfig())
        assert all(o.kind == SlotKind.IDLE for o in outcomes)

    def test_coordinated_defers_outside_own_slot(self):
        trace = constant_trace(2, 600, inter_db=-60.0)
        win = windows(trace, 600)[0]
        sched = TdmaSchedule.build(1.0 / 12.0, (0,))
        queues = {0: deque([0, 0, 0])}
        outcomes, stats = run_tdma_window(win, sched, queues, trace,
                                          {0: hub(1)}, MacConfig())
        kinds = {o.slot_index: o.kind for o in outcomes}
        assert kinds[0] == SlotKind.SUCCESS       # owns slot 0
        assert kinds[1] == SlotKind.BACKOFF       # holds for next superframe
        assert stats[0].successes == 1

    def test_no_two_coordinated_share_a_slot(self):
        trace = constant_trace(4, 1200, inter_db=-96.0)
        sched = TdmaSchedule.build(1.0 / 12.0, (0, 1, 2, 3))
        queues = {s: deque([0] * 30) for s in range(4)}
        routes = {s: hub((s + 1) % 4) for s in range(4)}
        for win in windows(trace, 600):
            outcomes, _ = run_tdma_window(win, sched, queues, trace, routes,
                                          MacConfig())
            per_slot = {}
            for o in outcomes:
                if o.kind in (SlotKind.SUCCESS, SlotKind.DECODE_FAILURE):
                    per_slot.setdefault(o.slot_index, []).append(o.source.ban)
            for bans in per_slot.values():
                assert len(bans) == 1

    def test_solo_coordinated_matches_interference_free_csma(self):
        # one coordinated transmitter, nothing else: the slot it owns must
        # resolve exactly like carrier-sensed access with a clear channel
        trace = constant_trace(2, 600, inter_db=-60.0)
        win = windows(trace, 600)[0]
        sched = TdmaSchedule.build(1.0 / 12.0, (0,))
        q_tdma = {0: deque([0])}
        tdma_out, _ = run_tdma_window(win, sched, q_tdma, trace,
                                      {0: hub(1)}, MacConfig())
        q_csma = {0: deque([0])}
        csma_out, _ = run_csma_window(win, {0: -90.0}, q_csma, trace,
                                      {0: hub(1)}, MacConfig())
        assert tdma_out[0].kind == csma_out[0].kind == SlotKind.SUCCESS

    def test_noncoordinated_transmit_on_arrival(self):
        trace = constant_trace(4, 600, inter_db=-98.0,
                               overrides={(hub(2), hub(3)): -60.0})
        win = windows(trace, 600)[0]
        sched = TdmaSchedule.build(1.0 / 12.0, (0,))
        queues = {2: deque([0, 0])}
        outcomes, stats = run_tdma_window(win, sched, queues, trace,
                                          {2: hub(3)}, MacConfig())
        assert stats[2].transmissions == 2
        assert stats[2].backoffs == 0


class TestBackoffRuns:
    def _mk(self, kinds):
        from bbnsim.mac import SlotOutcome
        return [SlotOutcome(hub(0), i, k) for i, k in enumerate(kinds)]

    def test_runs_split_by_success(self):
        B, S = SlotKind.BACKOFF, SlotKind.SUCCESS
        outcomes = self._mk([B, B, S, B])
        assert continuous_backoff_durations(outcomes, hub(0)) == [100.0, 50.0]

    def test_no_backoff_slots(self):
        S = SlotKind.SUCCESS
        assert continuous_backoff_durations(self._mk([S, S]), hub(0)) == []

    def test_long_run(self):
        B = SlotKind.BACKOFF
        outcomes = self._mk([B] * 20)
        assert continuous_backoff_durations(outcomes, hub(0)) == [1000.0]

    def test_idle_breaks_run(self):
        B, I = SlotKind.BACKOFF, SlotKind.IDLE
        outcomes = self._mk([B, I, B, B])
        assert continuous_backoff_durations(outcomes, hub(0)) == [50.0, 100.0]

    def test_other_sources_ignored(self):
        from bbnsim.mac import SlotOutcome
        B = SlotKind.BACKOFF
        outcomes = [SlotOutcome(hub(1), 0, B), SlotOutcome(hub(0), 0, B)]
        assert continuous_backoff_durations(outcomes, hub(0)) == [50.0]
