from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from energyref.energy import (MeterProfile, PowerSample, SimulatedMeter, format_trace,
                              integrate_energy, meter_start, meter_stop, parse_trace, read_trace,
                              write_trace)
from energyref.errors import ConfigError, InvalidInput, ParseError, StateError

import oracles


def ramp(points):
    return [PowerSample(float(t), float(w)) for t, w in points]


class TestIntegration:
    def test_constant(self):
        r = integrate_energy(ramp([(0, 6.0), (600, 6.0)]), 0.0, 600.0)
        assert r.energy_wh == pytest.approx(1.0, rel=1e-12)
        assert r.sample_count == 2

    def test_linear_ramp(self):
        # analytic: 0.5 * 12 W * 600 s / 3600
        r = integrate_energy(ramp([(0, 0.0), (600, 12.0)]), 0.0, 600.0)
        assert r.energy_wh == pytest.approx(0.5 * 12 * 600 / 3600, rel=1e-12)

    def test_empty_window(self):
        assert integrate_energy(ramp([(0, 5.0), (1, 5.0)]), 0.5, 0.5).energy_wh == 0.0
        assert integrate_energy([], 0.0, 10.0).energy_wh == 0.0

    def test_hold_last_value(self):
        # trace ends at 100 s at 3 W; window closes at 400 s
        samples = ramp([(0, 1.0), (100, 3.0)])
        expected = (oracles.trapezoid_exact([(0, 1), (100, 3)]) + 300 * 3) / 3600
        assert integrate_energy(samples, 0, 400).energy_wh == pytest.approx(float(expected), rel=1e-12)

    def test_clipping_interpolates(self):
        samples = ramp([(0, 0.0), (10, 10.0), (20, 0.0)])
        expected = oracles.trapezoid_exact([(5, 5), (10, 10), (15, 5)]) / 3600
        assert integrate_energy(samples, 5, 15).energy_wh == pytest.approx(float(expected), rel=1e-12)

    def test_unsorted_rejected(self):
        with pytest.raises(InvalidInput):
            integrate_energy(ramp([(1, 1.0), (0, 1.0)]), 0, 1)
        with pytest.raises(InvalidInput):
            integrate_energy(ramp([(0, 1.0), (1, 1.0)]), 1, 0)

    def test_negative_power_rejected(self):
        with pytest.raises(InvalidInput):
            PowerSample(0.0, -1.0)

    @given(st.lists(st.tuples(st.integers(1, 50), st.integers(0, 500)), min_size=1, max_size=30))
    def test_piecewise_linear_exact(self, steps):
        t, pts = 0, [(0, steps[0][1])]
        for dt, w in steps:
            t += dt
            pts.append((t, w))
        expected = float(oracles.trapezoid_exact(pts) / 3600)
        got = integrate_energy(ramp(pts), 0, t).energy_wh
        assert got == pytest.approx(expected, rel=1e-12, abs=1e-15)

    @given(st.lists(st.floats(0, 1000), min_size=2, max_size=40), st.floats(0, 1), st.floats(0, 1))
    def test_additive_and_monotone(self, watts, f1, f2):
        samples = ramp([(i * 0.5, w) for i, w in enumerate(watts)])
        end = (len(watts) - 1) * 0.5 + 3.0
        a, c = 0.0, end
        b = min(f1, f2) * end
        whole = integrate_energy(samples, a, c).energy_wh
        parts = integrate_energy(samples, a, b).energy_wh + integrate_energy(samples, b, c).energy_wh
        assert parts == pytest.approx(whole, rel=1e-9, abs=1e-12)
        assert integrate_energy(samples, a, b).energy_wh <= whole + 1e-12
        assert whole >= 0.0


class TestTraceFiles:
    def test_round_trip(self, tmp_path):
        samples = ramp([(0, 7.2), (0.1, 7.3), (0.25, 1e-3)])
        path = tmp_path / "p.csv"
        write_trace(path, samples)
        assert read_trace(path) == samples

    def test_comments_and_blanks(self):
        assert parse_trace("# header\n0,1\n\n1,2 # trailing\n") == ramp([(0, 1), (1, 2)])

    @pytest.mark.parametrize("text, line", [("0,1\n1\n", 2), ("0,1\n0,2\n", 2), ("x,1\n", 1),
                                            ("0,-3\n", 1)])
    def test_bad_rows_name_line(self, text, line):
        with pytest.raises(ParseError) as err:
            parse_trace(text, "trace.csv")
        assert err.value.line == line
        assert f"trace.csv:{line}" in str(err.value)

    def test_format(self):
        assert format_trace(ramp([(0, 1.5)])) == "0.0,1.5\n"


class TestSimulatedMeter:
    def test_first_sample_is_idle(self, clock):
        m = meter_start(MeterProfile(idle_watts=5.0, active_watts=9.0), clock)
        clock.advance(1.0)
        s = meter_stop(m)
        assert s[0] == PowerSample(0.0, 5.0)

    def test_replay_identity(self, tmp_path, clock):
        path = tmp_path / "t.csv"
        path.write_text("0.0,7.2\n0.5,8.0\n1.0,8.5\n")
        m = meter_start(MeterProfile(mode="replay", trace_path=str(path)), clock)
        clock.advance(0.6)
        assert meter_stop(m) == ramp([(0.0, 7.2), (0.5, 8.0)])

    def test_replay_shorter_than_session_holds_last(self, tmp_path, clock):
        path = tmp_path / "t.csv"
        path.write_text("0,4\n10,4\n")
        m = meter_start(MeterProfile(mode="replay", trace_path=str(path)), clock)
        clock.advance(100.0)
        samples = meter_stop(m)
        assert samples[-1].t_seconds == 10.0
        assert integrate_energy(samples, 0, 100).energy_wh == pytest.approx(4 * 100 / 3600, rel=1e-12)

    def test_double_start(self, clock):
        m = meter_start(MeterProfile(), clock)
        with pytest.raises(StateError):
            m.start()

    def test_stop_without_start(self, clock):
        with pytest.raises(StateError):
            SimulatedMeter(MeterProfile(), clock).stop()

    def test_immediate_stop(self, clock):
        assert len(meter_stop(meter_start(MeterProfile(), clock))) >= 1

    @pytest.mark.parametrize("duration, rate", [(1.0, 10.0), (1.05, 10.0), (0.95, 10.0), (2.0, 3.0)])
    def test_sample_count(self, clock, duration, rate):
        m = meter_start(MeterProfile(sample_rate_hz=rate), clock)
        clock.advance(duration)
        s = meter_stop(m)
        grid = int(Fraction(str(duration)) * Fraction(str(rate))) + 1
        assert len(s) in (grid, grid + 1)
        if duration == 1.0 and rate == 10.0:
            assert 10 <= len(s) <= 11
        assert all(b.t_seconds > a.t_seconds for a, b in zip(s, s[1:]))
        assert s[-1].t_seconds == pytest.approx(duration)

    def test_activity_raises_power(self, clock):
        p = MeterProfile(idle_watts=2.0, active_watts=10.0, activity_hold_s=0.5)
        m = meter_start(p, clock)
        clock.advance(1.0)
        m.note_activity()
        clock.advance(2.0)
        s = {round(x.t_seconds, 3): x.watts for x in meter_stop(m)}
        assert s[0.9] == 2.0 and s[1.0] == 10.0 and s[1.5] == 10.0 and s[1.6] == 2.0

    def test_noise_is_seeded(self, clock):
        p = MeterProfile(noise_stddev=0.5, seed=4)
        runs = []
        for _ in range(2):
            m = meter_start(p, clock)
            clock.advance(3.0)
            runs.append(meter_stop(m))
        assert runs[0] == runs[1]
        assert all(s.watts >= 0 for s in runs[0])

    def test_profile_validation(self):
        with pytest.raises(ConfigError):
            MeterProfile(sample_rate_hz=0)
        with pytest.raises(ConfigError):
            MeterProfile(idle_watts=9, active_watts=5)
        with pytest.raises(ConfigError):
            MeterProfile(mode="replay")
        with pytest.raises(ConfigError):
            SimulatedMeter(MeterProfile(mode="replay", trace_path="/nonexistent/trace.csv"))
        with pytest.raises(ConfigError):
            MeterProfile.from_dict({"watts": 3})
