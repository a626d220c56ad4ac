import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualretarget.collision import world_capsules
from dualretarget.mesh import (DEFAULT_VERTICES, GraphPriors, MeshConfig, build_topology, extract_priors,
                               inter_edges_from_points, laplacian, make_topology, stiffness)
from dualretarget.motion_io import DualMotionClip, RobotTrajectory, build_manifolds
from dualretarget.robot import forward_kinematics
from oracles import capsule_distance_sampled


def test_laplacian_arithmetic():
    P = np.array([[0, 1.0, 0], [0, 0, 0], [2.0, 0, 0]])
    assert np.allclose(laplacian(P, [(1, 2), (0,), (0,)], 0), [-1, 1, 0])


def test_laplacian_at_centroid_is_zero():
    P = np.array([[1.0, 1.0, 0], [0, 0, 0], [2, 2, 0], [2, 0, 0], [0, 2, 0]])
    assert np.allclose(laplacian(P, [(1, 2, 3, 4)], 0), 0)


def test_isolated_vertex():
    with pytest.raises(ValueError):
        laplacian(np.zeros((2, 3)), [(), (0,)], 0)


@given(arrays(np.float64, (15, 3), elements=st.floats(-2, 2)), st.floats(-3, 3),
       arrays(np.float64, 3, elements=st.floats(-5, 5)))
@settings(max_examples=60, deadline=None)
def test_laplacian_linearity_and_translation(P, a, t):
    topo = make_topology(MeshConfig())
    Lm = topo.laplacian_matrix()
    for i in range(15):
        # matrix row against direct summation over neighbours
        direct = P[i] - sum(P[j] for j in topo.neighbors[i]) / len(topo.neighbors[i])
        assert np.allclose(Lm[i] @ P, direct, atol=1e-12)
        assert np.allclose(laplacian(a * P, topo.neighbors, i), a * laplacian(P, topo.neighbors, i), atol=1e-12)
        assert np.allclose(laplacian(P + t, topo.neighbors, i), laplacian(P, topo.neighbors, i), atol=1e-12)


def test_weights_sum_to_one():
    Lm = make_topology(MeshConfig()).laplacian_matrix()
    assert np.allclose(Lm.sum(axis=1), 0.0)
    assert np.all(np.diag(Lm) == 1.0)


def test_stiffness_values():
    assert stiffness(0.0, 1.0, 5.0) == 1.0
    assert stiffness(np.log(2) / 5.0, 1.0, 5.0) == pytest.approx(0.5)
    assert stiffness(0.2, 1.0, 5.0) == pytest.approx(0.36787944117144233, abs=1e-15)
    with pytest.raises(ValueError):
        stiffness(-0.1, 1.0, 5.0)


@given(st.floats(0, 5), st.floats(0, 5))
def test_stiffness_monotone(d1, d2):
    if d1 < d2 and stiffness(d2, 1.0, 5.0) > 0:
        assert stiffness(d1, 1.0, 5.0) > stiffness(d2, 1.0, 5.0)


def two_point_ref(gap):
    names = DEFAULT_VERTICES
    kp = np.zeros((1, 2, len(names), 3))
    kp[0, 0, :, 0] = -5.0
    kp[0, 1, :, 0] = 5.0
    h = names.index("right_hand")
    kp[0, 0, h] = [0, 0, 1.0]
    kp[0, 1, h] = [gap, 0, 1.0]
    return build_manifolds(DualMotionClip(0.1, kp, names), 1.0, h_raw=(1.0, 1.0))


def test_close_hands_form_edge():
    edges = build_topology(two_point_ref(0.1), 0, MeshConfig())
    h = DEFAULT_VERTICES.index("right_hand")
    assert list(zip(edges.i, edges.j)) == [(h, h)]
    assert edges.weight[0] == pytest.approx(np.exp(-0.5))


def test_far_hands_no_edge():
    assert len(build_topology(two_point_ref(2.0), 0, MeshConfig())) == 0


def test_unknown_vertex():
    with pytest.raises(KeyError):
        build_topology(two_point_ref(0.1), 0, MeshConfig(vertices=("pelvis", "tail")))


@given(arrays(np.float64, (2, 15, 3), elements=st.floats(-1.5, 1.5)), st.floats(0.1, 2.0))
@settings(max_examples=60, deadline=None)
def test_active_set_matches_all_pairs_filter(P, r):
    edges = inter_edges_from_points(P[0], P[1], r, 1.0, 5.0)
    expect = {(i, j) for i in range(15) for j in range(15) if np.linalg.norm(P[0, i] - P[1, j]) <= r}
    assert set(zip(edges.i.tolist(), edges.j.tolist())) == expect
    assert np.all((edges.weight > 0) & (edges.weight <= 1.0))
    topo = make_topology(MeshConfig())
    assert topo.check_partition(edges)


@given(arrays(np.float64, (2, 15, 3), elements=st.floats(-1.5, 1.5)), st.floats(0.1, 2.0), st.floats(0.0, 1.0))
@settings(max_examples=60, deadline=None)
def test_active_set_monotone_in_radius(P, r, extra):
    small = inter_edges_from_points(P[0], P[1], r, 1.0, 5.0)
    big = inter_edges_from_points(P[0], P[1], r + extra, 1.0, 5.0)
    assert set(zip(small.i.tolist(), small.j.tolist())) <= set(zip(big.i.tolist(), big.j.tolist()))


def test_topology_partition_structure():
    topo = make_topology(MeshConfig())
    K = topo.n_per_agent
    assert K == len(DEFAULT_VERTICES)
    for a, b in topo.global_self_edges():
        assert (a < K) == (b < K)
    with pytest.raises(KeyError):
        make_topology(MeshConfig(self_edges=(("pelvis", "tail"),)))


def test_far_robots_have_no_contacts(g1, runs):
    clip, traj, ref = runs.get("handshake")
    shifted = RobotTrajectory(traj.robot_ids, traj.frame_dt, traj.root_pos.copy(), traj.root_quat, traj.q)
    shifted.root_pos[:, 1, 0] += 5.0
    priors = extract_priors(ref, MeshConfig(), shifted, (g1, g1))
    assert not priors.contact.any()


def test_contact_flags_match_capsule_oracle(g1, runs):
    clip, traj, ref = runs.get("handshake")
    priors = traj.priors
    assert priors.contact.any(), "handshake should produce a hand contact"
    la, lb = priors.contact_links
    frames = [int(np.argmax(priors.contact.any(axis=(1, 2))))] + [0, traj.n_frames // 2]
    for t in frames:
        fks = [forward_kinematics(g1, traj.configuration(t, k)) for k in range(2)]
        ca, cb = world_capsules(g1, fks[0]), world_capsules(g1, fks[1])
        for a, link_a in enumerate(la):
            for b, link_b in enumerate(lb):
                ia = np.nonzero(ca.link == g1.link_index(link_a))[0]
                ib = np.nonzero(cb.link == g1.link_index(link_b))[0]
                d = min(capsule_distance_sampled(ca.a[i], ca.b[i], ca.radius[i], cb.a[j], cb.b[j], cb.radius[j], n=41)
                        for i in ia for j in ib)
                if abs(d - 0.02) > 1e-4:
                    assert priors.contact[t, a, b] == (d <= 0.02)


def test_priors_reference_vectors_and_round_trip(runs):
    clip, traj, ref = runs.get("handshake")
    priors = traj.priors
    idx = [ref.names.index(n) for n in priors.vertex_names]
    for t in (0, 100, 200):
        edges, vec = priors.interaction[t]
        P = ref.p_uni[t][:, idx]
        for (i, j), v in zip(zip(edges.i, edges.j), vec):
            assert np.allclose(v, P[0, i] - P[1, j], atol=1e-15)
    back = GraphPriors.from_dict(priors.to_dict())
    assert back.n_frames == priors.n_frames
    assert np.array_equal(back.contact, priors.contact)
    assert np.allclose(back.interaction[100][1], priors.interaction[100][1])
