import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from dualretarget.rewards import (DEFAULT_TERMS, InteractionSample, RewardConfig, TrackingState,
                                  force_regularization, r_contact, r_inter, score_trajectory, tracking_rewards)
from oracles import l_force_loop, r_contact_loop, r_inter_loop

CFG = RewardConfig()


def random_sample(rng, m=None, n=None, scale=0.3):
    m = int(rng.integers(0, 12)) if m is None else m
    n = int(rng.integers(1, 10)) if n is None else n
    return InteractionSample(
        d_sim=rng.normal(scale=scale, size=(m, 3)), d_ref=rng.normal(scale=scale, size=(m, 3)),
        weights=rng.uniform(0, 1, size=m), contact=rng.integers(0, 2, size=n),
        force=rng.uniform(0, 400, size=n) * (rng.random(n) < 0.8), active=rng.random(n) < 0.5)


def test_published_weights():
    w = {k: v[0] for k, v in DEFAULT_TERMS.items()}
    assert w["interact_edge"] == 1.5 and w["contact"] == 1.0
    assert w["upper_pos"] == 1.0 and w["lower_pos"] == 0.5
    assert (w["action_rate"], w["feet_slip"], w["joint_limit"], w["torque"]) == (-0.3, -0.5, -10.0, -1e-4)


def test_force_regularization_breakpoints():
    f_min, f_max = CFG.f_min, CFG.f_max
    assert force_regularization(0.0) == 1.0
    assert force_regularization(f_min) == 0.0
    assert force_regularization(0.5 * (f_min + f_max)) == 0.0
    assert force_regularization(f_max) == 0.0
    assert force_regularization(2 * f_max) == 1.0
    # continuous at both breakpoints
    assert abs(force_regularization(np.nextafter(f_min, 0))) <= 1e-12
    assert abs(force_regularization(np.nextafter(f_max, np.inf))) <= 1e-12
    with pytest.raises(ValueError):
        force_regularization(-1.0)


@given(st.floats(0, 1000))
def test_force_regularization_matches_loop(f):
    assert force_regularization(f) == l_force_loop(f, CFG.f_min, CFG.f_max)


def test_inter_examples():
    s = InteractionSample([[0.1, 0, 0]], [[0.1, 0, 0]], [1.0], [], [], [])
    assert r_inter(s) == 1.0
    s = InteractionSample([[0.2, 0, 0]], [[0.0, 0, 0]], [1.0], [], [], [])
    assert r_inter(s) == pytest.approx(np.exp(-1.0), abs=1e-15)
    assert r_inter(InteractionSample(np.zeros((0, 3)), np.zeros((0, 3)), [], [], [], [])) == 1.0


def test_contact_examples():
    ok = InteractionSample(np.zeros((0, 3)), np.zeros((0, 3)), [], [1, 1, 0], [50, 50, 0], [True, True, False])
    assert r_contact(ok) == 1.0
    ghost = InteractionSample(np.zeros((0, 3)), np.zeros((0, 3)), [], [1, 0], [0, 0], [False, False])
    assert r_contact(ghost) == pytest.approx(np.exp(-1.0))
    assert r_contact(InteractionSample(np.zeros((0, 3)), np.zeros((0, 3)), [], [], [], [])) == 1.0


def test_sample_validation():
    with pytest.raises(ValueError):
        InteractionSample(np.zeros((2, 3)), np.zeros((1, 3)), [1, 1], [], [], [])
    with pytest.raises(ValueError):
        InteractionSample(np.zeros((0, 3)), np.zeros((0, 3)), [], [1], [-1.0], [True])
    with pytest.raises(ValueError):
        RewardConfig(beta=1.5)
    with pytest.raises(ValueError):
        RewardConfig(f_min=300.0)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=200, deadline=None)
def test_rewards_match_loops_and_range(seed):
    rng = np.random.default_rng(seed)
    s = random_sample(rng)
    ri = r_inter(s)
    rc = r_contact(s)
    assert 0.0 < ri <= 1.0 and 0.0 < rc <= 1.0
    assert ri == pytest.approx(r_inter_loop(s.d_sim, s.d_ref, s.weights, CFG.sigma_inter), abs=1e-12)
    assert rc == pytest.approx(r_contact_loop(s.contact, s.force, s.active, CFG.sigma_c, CFG.beta,
                                              CFG.f_min, CFG.f_max), abs=1e-12)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_zero_error_sample_maximizes(seed):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, m=5, n=6)
    perfect = InteractionSample(s.d_ref, s.d_ref, s.weights, s.active.astype(float),
                                np.where(s.active, 50.0, 0.0), s.active)
    assert r_inter(perfect) == 1.0 and r_contact(perfect) == 1.0
    assert r_inter(s) <= r_inter(perfect) and r_contact(s) <= r_contact(perfect)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_inter_monotone_in_error(a, b):
    def r(e):
        return r_inter(InteractionSample([[e, 0, 0]], [[0, 0, 0]], [1.0], [], [], []))
    if a < b:
        assert r(a) >= r(b)


# ------------------------------------------------------------ tracking


def random_state(rng, L=6, n=4):
    rot = Rotation.random(L, random_state=int(rng.integers(2**31))).as_matrix()
    return TrackingState(rng.normal(size=(L, 3)), rot, rng.normal(size=(L, 3)), rng.normal(size=(L, 3)),
                         rng.normal(size=3), rot[0], q=rng.normal(size=n), action=rng.normal(size=n),
                         prev_action=rng.normal(size=n), foot_contact=rng.random(2) < 0.5,
                         foot_vel=rng.normal(size=(2, 3)), torque=rng.normal(size=n) * 10)


def tracking_oracle(s, r, upper, lower, q_limit):
    """Table formulas written out term by term."""
    out = {}
    for part, idx in (("upper", upper), ("lower", lower)):
        pos = np.mean([np.sum((s.link_pos[i] - r.link_pos[i]) ** 2) for i in idx])
        ori = np.mean([Rotation.from_matrix(s.link_rot[i].T @ r.link_rot[i]).magnitude() ** 2 for i in idx])
        lv = np.mean([np.sum((s.link_lin_vel[i] - r.link_lin_vel[i]) ** 2) for i in idx])
        av = np.mean([np.sum((s.link_ang_vel[i] - r.link_ang_vel[i]) ** 2) for i in idx])
        out[f"{part}_pos"] = np.exp(-pos / 0.3 ** 2)
        out[f"{part}_ori"] = np.exp(-ori / 0.4 ** 2)
        out[f"{part}_lin_vel"] = np.exp(-lv / 1.0 ** 2)
        out[f"{part}_ang_vel"] = np.exp(-av / 3.14 ** 2)
    out["anchor_pos"] = np.exp(-np.sum((s.root_pos - r.root_pos) ** 2) / 0.3 ** 2)
    out["anchor_ori"] = np.exp(-Rotation.from_matrix(s.root_rot.T @ r.root_rot).magnitude() ** 2 / 0.4 ** 2)
    out["action_rate"] = np.sum((s.action - s.prev_action) ** 2)
    out["feet_slip"] = sum(np.sum(v[:2] ** 2) for c, v in zip(s.foot_contact, s.foot_vel) if c)
    out["joint_limit"] = sum(max(0.0, abs(q) - lim) for q, lim in zip(s.q, q_limit))
    out["torque"] = np.sum(s.torque ** 2)
    return out


@pytest.mark.parametrize("seed", range(20))
def test_tracking_matches_table_oracle(seed):
    rng = np.random.default_rng(seed)
    s, r = random_state(rng), random_state(rng)
    q_limit = np.full(4, 1.0)
    terms, total = tracking_rewards(s, r, upper=[0, 1, 2], lower=[3, 4, 5], q_limit=q_limit)
    expect = tracking_oracle(s, r, [0, 1, 2], [3, 4, 5], q_limit)
    for k, v in expect.items():
        assert terms[k] == pytest.approx(v, rel=1e-9, abs=1e-12), k
    w = {k: v[0] for k, v in DEFAULT_TERMS.items()}
    assert total == pytest.approx(sum(w[k] * v for k, v in expect.items()), rel=1e-9)


def test_state_equal_reference():
    s = random_state(np.random.default_rng(1))
    s.action = s.prev_action = np.zeros(4)
    s.foot_contact = np.zeros(2, dtype=bool)
    s.torque = np.zeros(4)
    s.q = np.zeros(4)
    terms, _ = tracking_rewards(s, s, upper=[0, 1], lower=[2], q_limit=np.ones(4))
    for k, v in terms.items():
        assert v == (1.0 if DEFAULT_TERMS[k][1] is not None else 0.0), k


def test_joint_limit_contribution():
    s = random_state(np.random.default_rng(2))
    s.q = np.array([1.1, 0.0, 0.0, 0.0])
    terms, _ = tracking_rewards(s, s, q_limit=np.ones(4))
    assert CFG.weight("joint_limit") * terms["joint_limit"] == pytest.approx(-1.0)


def test_missing_link_data():
    s = random_state(np.random.default_rng(3))
    with pytest.raises(KeyError):
        tracking_rewards(s, s, upper=[10])


def test_config_round_trip():
    c = RewardConfig.from_dict({"sigma_inter": 0.1, "terms": {"upper_pos": {"weight": 2.0}}})
    assert c.weight("upper_pos") == 2.0 and c.sigma("upper_pos") == 0.3
    assert RewardConfig.from_dict(c.to_dict()) == c
    with pytest.raises(KeyError):
        RewardConfig.from_dict({"terms": {"bogus": [1.0, None]}})


def test_score_trajectory_on_reference_is_perfect(runs):
    clip, traj, ref = runs.get("handshake")
    priors = traj.priors
    idx = [ref.names.index(v) for v in priors.vertex_names]
    ri, rc = score_trajectory(ref.p_uni[:, :, idx], priors)
    assert np.allclose(ri, 1.0) and np.allclose(rc, 1.0)
