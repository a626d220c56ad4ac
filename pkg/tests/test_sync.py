import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from dualretarget.sync import DT, ChannelModel, SyncAgent, fixed_point_error, phase_rate, simulate


def test_rate_examples():
    assert phase_rate(3.0, 3.0, 0.2) == 1.0
    assert phase_rate(1.0, 1.5, 0.2) == pytest.approx(1.1)
    assert phase_rate(0.0, 10.0, 0.0) == 1.0


def test_invariants():
    with pytest.raises(ValueError):
        SyncAgent(k=-0.1)
    with pytest.raises(ValueError):
        SyncAgent(drift=0.2)
    with pytest.raises(ValueError):
        ChannelModel(delay_lo=0.05, delay_hi=0.01)
    with pytest.raises(ValueError):
        ChannelModel(drop=1.0)


def test_no_drift_no_error():
    tr = simulate([SyncAgent(), SyncAgent()], duration=10.0)
    assert np.all(tr.error == 0.0)


def test_zero_delay_fixed_point():
    tr = simulate([SyncAgent(drift=1e-3), SyncAgent(drift=-1e-3)], duration=30.0)
    ss = tr.steady_state_error()
    assert abs(ss - 0.005) <= 0.05 * 0.005
    assert ss == pytest.approx(fixed_point_error(1e-3, -1e-3, 0.2), rel=1e-3)


def test_matches_ode_integration():
    # continuous-time model of the same loop, integrated independently
    def rhs(_, y):
        a, b = y
        return [(1 + 1e-3) * (1 + 0.2 * (b - a)), (1 - 1e-3) * (1 + 0.2 * (a - b))]
    sol = solve_ivp(rhs, (0, 30), [0.0, 0.0], rtol=1e-10, atol=1e-12, t_eval=[30.0])
    ode_err = sol.y[0, -1] - sol.y[1, -1]
    tr = simulate([SyncAgent(drift=1e-3), SyncAgent(drift=-1e-3)], duration=30.0)
    assert tr.error[-1] == pytest.approx(ode_err, rel=0.02)


def test_delayed_channel_bounded():
    ch = ChannelModel(0.020, 0.060, seed=7)
    tr = simulate([SyncAgent(drift=1e-3), SyncAgent(drift=-1e-3)], ch, duration=60.0)
    assert 0.2 * DT < 1
    assert np.abs(tr.error).max() < 0.01
    # no drift upward: late windows look like the middle ones
    per_window = [np.abs(tr.error[(tr.time >= a) & (tr.time < a + 10)]).mean() for a in (20, 30, 40, 50)]
    assert max(per_window) < 1.25 * min(per_window)


def test_open_loop_diverges_linearly():
    tr = simulate([SyncAgent(drift=1e-3, k=0.0), SyncAgent(drift=-1e-3, k=0.0)], duration=60.0)
    assert np.allclose(tr.error, 2e-3 * tr.time, atol=1e-12)
    tr = simulate([SyncAgent(drift=1e-3, correct=False), SyncAgent(drift=-1e-3, correct=False)], duration=10.0)
    assert tr.error[-1] == pytest.approx(0.02)


def test_deterministic_under_seed():
    ch = ChannelModel(0.02, 0.06, drop=0.1, seed=3)
    a = simulate([SyncAgent(drift=2e-3), SyncAgent()], ch, duration=20.0)
    b = simulate([SyncAgent(drift=2e-3), SyncAgent()], ch, duration=20.0)
    assert a.phi.tobytes() == b.phi.tobytes()
    assert a.to_text() == b.to_text()


@given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(0.0, 1.0), st.floats(0, 0.1),
       st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_no_hard_resets(d1, d2, k, delay, seed):
    ch = ChannelModel(0.0, delay, seed=seed)
    tr = simulate([SyncAgent(0.3, d1, k), SyncAgent(0.0, d2, k)], ch, duration=5.0)
    inc = np.diff(tr.phi, axis=0)
    err = np.abs(tr.error).max()
    bound = (1 + max(abs(d1), abs(d2))) * (1 + k * err) * DT
    assert np.all(inc <= bound + 1e-12)
    assert np.all(inc > 0)


def test_trace_text_format():
    tr = simulate([SyncAgent(), SyncAgent()], duration=0.1)
    lines = tr.to_text().splitlines()
    assert lines[0] == "t,phi0,phi1,error"
    assert len(lines) == len(tr.time) + 1
