import math

import numpy as np
import pytest

from bbnsim.channel import (ChannelTrace, Device, LinkId, RadioId, SynthConfig,
                            constant_trace, hub, ingest_trace, pair_key,
                            synthesize_trace, windows)
from bbnsim.errors import ConfigError, DataError, TopologyError, TraceParseError

HEADER = "time_ms,tx_ban,tx_device,rx_ban,rx_device,rssi_dbm\n"


def write_trace(tmp_path, rows, name="trace.csv"):
    path = tmp_path / name
    path.write_text(HEADER + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


class TestIdentifiers:
    def test_radio_index_round_trip(self):
        for ban in range(4):
            for dev in Device:
                rid = RadioId(ban, dev)
                assert RadioId.from_index(rid.index) == rid

    def test_link_rejects_self_loop(self):
        with pytest.raises(ValueError):
            LinkId(hub(0), hub(0))

    def test_link_classification(self):
        intra = LinkId(hub(1), RadioId(1, Device.SENSOR_A))
        inter = LinkId(hub(1), hub(2))
        assert intra.is_intra_ban and not inter.is_intra_ban

    def test_pair_key_is_direction_free(self):
        a, b = hub(0), RadioId(2, Device.SENSOR_B)
        assert pair_key(a, b) == pair_key(b, a)


class TestIngest:
    def test_clamp_below_minus_100(self, tmp_path):
        path = write_trace(tmp_path, ["0,0,hub,1,hub,-104.2"])
        trace = ingest_trace(path)
        assert trace.gain_at(LinkId(hub(0), hub(1)), 0) == -101.0

    def test_exactly_minus_100_is_kept(self, tmp_path):
        path = write_trace(tmp_path, ["0,0,hub,1,hub,-100.0"])
        trace = ingest_trace(path)
        assert trace.gain_at(LinkId(hub(0), hub(1)), 0) == -100.0

    def test_custom_clamp_floor(self, tmp_path):
        path = write_trace(tmp_path, ["0,0,hub,1,hub,-130.5"])
        trace = ingest_trace(path, clamp_floor_dbm=-105.0)
        assert trace.gain_at(LinkId(hub(0), hub(1)), 0) == -105.0

    def test_reciprocity_fills_missing_direction(self, tmp_path):
        # forward link missing at t=50, reverse carries -72.5
        path = write_trace(tmp_path, [
            "0,0,hub,1,hub,-70.0",
            "50,1,hub,0,hub,-72.5",
        ])
        trace = ingest_trace(path)
        assert trace.gain_at(LinkId(hub(0), hub(1)), 50) == -72.5
        assert trace.gain_at(LinkId(hub(1), hub(0)), 50) == -72.5

    def test_previous_sample_hold_fills_gap(self, tmp_path):
        path = write_trace(tmp_path, [
            "0,0,hub,1,hub,-70.0",
            "100,0,hub,1,hub,-75.0",
            "0,0,hub,0,sensor_a,-55.0",
            "50,0,hub,0,sensor_a,-56.0",
            "100,0,hub,0,sensor_a,-57.0",
        ])
        trace = ingest_trace(path)
        assert trace.gain_at(LinkId(hub(0), hub(1)), 50) == -70.0

    def test_leading_gap_backfills(self, tmp_path):
        path = write_trace(tmp_path, [
            "0,0,hub,0,sensor_a,-50.0",
            "50,0,hub,0,sensor_a,-51.0",
            "50,0,hub,1,hub,-80.0",
        ])
        trace = ingest_trace(path)
        assert trace.gain_at(LinkId(hub(0), hub(1)), 0) == -80.0

    def test_malformed_row_reports_line(self, tmp_path):
        path = write_trace(tmp_path, ["0,0,hub,1,hub,-70.0", "50,0,hub,1,hub,oops"])
        with pytest.raises(TraceParseError, match="line 3"):
            ingest_trace(path)

    def test_bad_device_token(self, tmp_path):
        path = write_trace(tmp_path, ["0,0,hub,1,antenna,-70.0"])
        with pytest.raises(TraceParseError, match="device"):
            ingest_trace(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "no_header.csv"
        path.write_text("0,0,hub,1,hub,-70\n", encoding="utf-8")
        with pytest.raises(TraceParseError, match="header"):
            ingest_trace(path)

    def test_irreconcilable_duplicate_is_data_error(self, tmp_path):
        path = write_trace(tmp_path, [
            "0,0,hub,1,hub,-70.0",
            "0,0,hub,1,hub,-71.0",
        ])
        with pytest.raises(DataError, match="irreconcilable"):
            ingest_trace(path)

    def test_reciprocity_violation_is_data_error(self, tmp_path):
        path = write_trace(tmp_path, [
            "0,0,hub,1,hub,-70.0",
            "0,1,hub,0,hub,-75.0",
        ])
        with pytest.raises(DataError, match="reciprocity"):
            ingest_trace(path)

    def test_clamped_pair_is_reconcilable(self, tmp_path):
        # both directions clamp to the floor, so they agree after ingest
        path = write_trace(tmp_path, [
            "0,0,hub,1,hub,-104.0",
            "0,1,hub,0,hub,-109.0",
        ])
        trace = ingest_trace(path)
        assert trace.gain_at(LinkId(hub(0), hub(1)), 0) == -101.0

    def test_reciprocity_exact_after_ingest(self, tmp_path):
        rng = np.random.default_rng(3)
        rows = []
        for t in range(0, 500, 50):
            rows.append(f"{t},0,hub,1,hub,{rng.uniform(-95, -60):.3f}")
            rows.append(f"{t},0,hub,0,sensor_a,{rng.uniform(-70, -50):.3f}")
        trace = ingest_trace(write_trace(tmp_path, rows))
        for link in trace.links():
            fwd = trace.series(link.tx, link.rx)
            rev = trace.series(link.rx, link.tx)
            assert np.array_equal(fwd, rev)

    def test_no_stored_gain_below_floor(self, tmp_path):
        rng = np.random.default_rng(4)
        rows = [f"{t},0,hub,1,hub,{rng.uniform(-130, -60):.3f}"
                for t in range(0, 1000, 50)]
        trace = ingest_trace(write_trace(tmp_path, rows))
        assert float(trace.series(hub(0), hub(1)).min()) >= -101.0

    def test_csv_round_trip(self, tmp_path):
        # gains kept above the clamp region so re-ingest is lossless
        trace = synthesize_trace(SynthConfig(num_bans=2, duration_ms=3000,
                                             inter_mean_db=-80.0,
                                             shadow_std_db=3.0), 11)
        path = tmp_path / "out.csv"
        trace.to_csv(path)
        back = ingest_trace(path)
        assert back.num_samples == trace.num_samples
        for link in trace.links():
            np.testing.assert_allclose(back.series(link.tx, link.rx),
                                       trace.series(link.tx, link.rx), atol=5e-4)


class TestWindows:
    def test_45_minute_trace_has_4500_windows(self):
        trace = synthesize_trace(SynthConfig(num_bans=2, duration_ms=45 * 60 * 1000), 0)
        assert len(windows(trace, 600)) == 4500

    def test_single_window_trace(self):
        trace = constant_trace(2, 600)
        assert len(windows(trace, 600)) == 1

    def test_partial_tail_dropped(self):
        trace = constant_trace(2, 1900)
        wins = windows(trace, 600)
        assert len(wins) == 3
        assert wins[-1].end_ms == 1800

    def test_windows_are_disjoint_sorted_and_cover(self):
        trace = constant_trace(2, 6100)
        wins = windows(trace, 600)
        assert [w.index for w in wins] == list(range(10))
        for prev, cur in zip(wins, wins[1:]):
            assert prev.end_ms == cur.start_ms
        assert wins[0].start_ms == 0
        assert wins[-1].end_ms == 6000
        assert all(w.end_ms - w.start_ms == 600 for w in wins)

    def test_window_not_multiple_of_grid(self):
        trace = constant_trace(2, 6000)
        with pytest.raises(ConfigError):
            windows(trace, 625)

    def test_default_window_has_12_samples_per_link(self):
        trace = constant_trace(2, 1200)
        win = windows(trace, 600)[0]
        assert win.num_samples == 12
        assert len(win.series(hub(0), hub(1))) == 12


class TestGainAt:
    def test_on_grid_point(self):
        trace = constant_trace(2, 1000, overrides={(hub(0), hub(1)): -66.0})
        assert trace.gain_at(LinkId(hub(0), hub(1)), 50) == -66.0

    def test_zero_order_hold(self, tmp_path):
        path = write_trace(tmp_path, [
            "0,0,hub,1,hub,-70.0",
            "50,0,hub,1,hub,-75.0",
        ])
        trace = ingest_trace(path)
        assert trace.gain_at(LinkId(hub(0), hub(1)), 99) == -75.0
        assert trace.gain_at(LinkId(hub(0), hub(1)), 49) == -70.0

    def test_reverse_link_equal(self):
        trace = synthesize_trace(SynthConfig(num_bans=2, duration_ms=1000), 9)
        link = LinkId(hub(0), hub(1))
        assert trace.gain_at(link, 470) == trace.gain_at(link.reverse, 470)

    def test_out_of_range(self):
        trace = constant_trace(2, 1000)
        with pytest.raises(ValueError):
            trace.gain_at(LinkId(hub(0), hub(1)), 1000)
        with pytest.raises(ValueError):
            trace.gain_at(LinkId(hub(0), hub(1)), -1)

    def test_unknown_link_is_topology_error(self):
        trace = constant_trace(2, 1000)
        with pytest.raises(TopologyError):
            trace.series(hub(0), hub(5))


class TestSynthesis:
    def test_determinism(self):
        cfg = SynthConfig(num_bans=3, duration_ms=30000)
        a = synthesize_trace(cfg, 7)
        b = synthesize_trace(cfg, 7)
        for link in a.links():
            assert np.array_equal(a.series(link.tx, link.rx), b.series(link.tx, link.rx))

    def test_different_seeds_differ(self):
        cfg = SynthConfig(num_bans=2, duration_ms=10000)
        a = synthesize_trace(cfg, 1)
        b = synthesize_trace(cfg, 2)
        assert not np.array_equal(a.series(hub(0), hub(1)), b.series(hub(0), hub(1)))

    def test_zero_std_gives_class_means(self):
        cfg = SynthConfig(num_bans=2, duration_ms=5000, shadow_std_db=0.0,
                          intra_mean_db=-58.0, inter_mean_db=-83.0)
        trace = synthesize_trace(cfg, 5)
        intra = trace.series(hub(0), RadioId(0, Device.SENSOR_A))
        inter = trace.series(hub(0), hub(1))
        assert np.all(intra == -58.0)
        assert np.all(inter == -83.0)

    def test_lag_coherence_autocorrelation(self):
        # 45-minute series; the generator targets 0.7 at 900 ms (18 samples)
        cfg = SynthConfig(num_bans=2, duration_ms=45 * 60 * 1000,
                          link_spread_frac=0.0)
        trace = synthesize_trace(cfg, 13)
        series = trace.series(hub(0), hub(1))
        lag = 18
        x, y = series[:-lag], series[lag:]
        r = np.corrcoef(x, y)[0, 1]
        assert abs(r - 0.7) <= 0.05

    def test_mean_and_std_converge_per_link_without_spread(self):
        # with no per-link offset each series is a plain AR process, so a
        # single 45-minute link must converge on its own; the standard
        # error accounts for the temporal correlation
        cfg = SynthConfig(num_bans=2, duration_ms=45 * 60 * 1000,
                          link_spread_frac=0.0)
        trace = synthesize_trace(cfg, 21)
        phi = cfg.step_rho
        for tx, rx, mean in [(hub(0), hub(1), cfg.inter_mean_db),
                             (hub(0), RadioId(0, Device.SENSOR_A), cfg.intra_mean_db)]:
            series = trace.series(tx, rx)
            n_eff = series.size * (1 - phi) / (1 + phi)
            se_mean = cfg.shadow_std_db / math.sqrt(n_eff)
            se_std = cfg.shadow_std_db / math.sqrt(2 * n_eff)
            assert abs(series.mean() - mean) <= 3 * se_mean
            assert abs(series.std() - cfg.shadow_std_db) <= 3 * se_std

    def test_mean_and_std_converge_pooled_with_spread(self):
        # pooled over all inter-BAN links of a 4-BAN trace; the dominant
        # uncertainty is the finite number of per-link offsets
        cfg = SynthConfig(num_bans=4, duration_ms=45 * 60 * 1000)
        trace = synthesize_trace(cfg, 21)
        phi = cfg.step_rho
        inter = [trace.series(k.tx, k.rx) for k in trace.links()
                 if not k.is_intra_ban]
        pooled = np.concatenate(inter)
        n_links = len(inter)
        n_t = inter[0].size
        static_var = (cfg.shadow_std_db * cfg.link_spread_frac) ** 2
        temporal_var = cfg.shadow_std_db ** 2 - static_var
        var_mean = (static_var + temporal_var * (1 + phi) / ((1 - phi) * n_t)) / n_links
        se_mean = math.sqrt(var_mean)
        # offset sampling dominates the pooled-variance error as well
        se_std = static_var / (cfg.shadow_std_db * math.sqrt(2 * n_links))
        assert abs(pooled.mean() - cfg.inter_mean_db) <= 3 * se_mean
        assert abs(pooled.std() - cfg.shadow_std_db) <= 3 * se_std

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            synthesize_trace(SynthConfig(num_bans=1, duration_ms=1000), 0)
        with pytest.raises(ConfigError):
            synthesize_trace(SynthConfig(num_bans=2, duration_ms=0), 0)
        with pytest.raises(ConfigError):
            synthesize_trace(SynthConfig(num_bans=2, duration_ms=1000,
                                         link_spread_frac=1.5), 0)

    def test_reciprocity_by_construction(self):
        trace = synthesize_trace(SynthConfig(num_bans=3, duration_ms=5000), 2)
        for link in trace.links():
            assert np.array_equal(trace.series(link.tx, link.rx),
                                  trace.series(link.rx, link.tx))
