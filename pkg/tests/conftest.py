import time

import numpy as np
import pytest

from dualretarget.fixtures import load_fixture
from dualretarget.qp import QPSubproblem
from dualretarget.robot import RobotConfiguration, forward_kinematics, load_robot_spec, spec_from_dict
from dualretarget.rotations import exp_so3, matrix_to_quat

SMALL_VERTICES = ("pelvis", "k1", "k2", "k3", "k4")
SMALL_EDGES = (("pelvis", "k1"), ("k1", "k2"), ("pelvis", "k3"), ("k3", "k4"))


def random_small_spec(rng, n_joints=4):
    """Tree robot: pelvis plus a short random chain/branch, one capsule per link."""
    links = [{"name": "pelvis", "capsules": [{"name": "c0", "a": [0, 0, 0], "b": [0, 0, 0.1], "radius": 0.05}]}]
    joints = []
    for j in range(n_joints):
        parent = "pelvis" if j in (0, 2) else f"l{j - 1}"
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        links.append({"name": f"l{j}", "capsules": [
            {"name": f"c{j + 1}", "a": [0, 0, 0], "b": list(rng.normal(scale=0.1, size=3)), "radius": 0.04}]})
        joints.append({"name": f"j{j}", "parent": parent, "child": f"l{j}",
                       "origin_xyz": list(rng.normal(scale=0.2, size=3)),
                       "origin_rpy": list(rng.uniform(-1, 1, size=3)),
                       "axis": list(axis), "limits": [-2.0, 2.0], "nominal": 0.0})
    keypoints = {"pelvis": {"link": "pelvis", "offset": [0, 0, 0]}}
    for j in range(n_joints):
        keypoints[f"k{j + 1}"] = {"link": f"l{j}", "offset": list(rng.normal(scale=0.1, size=3))}
    return spec_from_dict({
        "name": "small", "height": 1.0, "links": links, "joints": joints, "keypoints": keypoints,
        "key_links": ["l1", "pelvis"],
        "orientation_frames": {"l1": {"aim": ["k1", "k2"], "hint": ["pelvis", "k3"]},
                               "pelvis": {"aim": ["pelvis", "k4"], "hint": "up"}},
        "feet": [],
    })


def random_config(rng, spec, pos_scale=0.3):
    q = rng.uniform(spec.q_min, spec.q_max) * 0.8
    R = exp_so3(rng.normal(scale=0.8, size=3))
    return RobotConfiguration(q, rng.normal(scale=pos_scale, size=3), matrix_to_quat(R))


def random_problem(rng, n, m, box=True):
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    x0 = rng.normal(scale=0.3, size=n)     # strictly feasible point
    s = A @ x0
    lower = s - rng.uniform(0.05, 1.0, size=m)
    upper = np.where(rng.random(m) < 0.5, s + rng.uniform(0.05, 1.0, size=m), np.inf)
    lb = x0 - rng.uniform(0.1, 1.0, size=n) if box else None
    ub = x0 + rng.uniform(0.1, 1.0, size=n) if box else None
    return QPSubproblem(H, g, A, lower, upper, lb, ub)


@pytest.fixture(scope="session")
def g1():
    return load_robot_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class RetargetRuns:
    """Full-clip solves shared across test modules (each is several seconds)."""

    def __init__(self, spec):
        self.spec = spec
        self._cache = {}
        self.seconds = {}

    def get(self, fixture, **overrides):
        from dualretarget.solver import SolverConfig, retarget_clip
        key = (fixture, tuple(sorted(overrides.items())))
        if key not in self._cache:
            clip = load_fixture(fixture)
            start = time.perf_counter()
            traj, ref = retarget_clip(clip, (self.spec, self.spec), SolverConfig(**overrides))
            self.seconds[key] = time.perf_counter() - start
            self._cache[key] = (clip, traj, ref)
        return self._cache[key]


@pytest.fixture(scope="session")
def runs(g1):
    return RetargetRuns(g1)


def small_problem(rng, zero_residual=False, **overrides):
    """Two random small robots, random configs and frame targets.

    With `zero_residual` the targets are read off the configs themselves, so
    every residual vanishes at the linearization point.
    """
    from dualretarget.mesh import MeshConfig, inter_edges_from_points
    from dualretarget.solver import FrameTargets, Problem, SolverConfig

    specs = (random_small_spec(rng), random_small_spec(rng))
    mesh = MeshConfig(vertices=SMALL_VERTICES, self_edges=SMALL_EDGES, r_inter=1.5)
    problem = Problem(specs, SolverConfig(**overrides), mesh)
    configs = [random_config(rng, s) for s in specs]
    configs[1].root_pos = configs[1].root_pos + np.array([0.4, 0.0, 0.0])
    fks = [forward_kinematics(s, q) for s, q in zip(specs, configs)]
    X = [fk.keypoints[problem.kp_index[k]] for k, fk in enumerate(fks)]
    inter = inter_edges_from_points(X[0], X[1], mesh.r_inter, mesh.omega_max, mesh.gamma)
    if zero_residual:
        lap_ref = np.stack([problem.lap @ x for x in X])
        rot = [{l: fks[k].link_rot[l] for l in problem.key_links[k]} for k in range(2)]
        anchor = np.stack([fks[k].keypoints[problem.pelvis[k]] for k in range(2)])
        inter_ref = X[0][inter.i] - X[1][inter.j]
        prev = [q.copy() for q in configs]
    else:
        lap_ref = rng.normal(scale=0.1, size=(2, len(SMALL_VERTICES), 3))
        rot = [{l: exp_so3(rng.normal(size=3)) for l in problem.key_links[k]} for k in range(2)]
        anchor = rng.normal(scale=0.3, size=(2, 3))
        inter_ref = rng.normal(scale=0.3, size=(len(inter), 3))
        prev = [random_config(rng, s) for s in specs]
    targets = FrameTargets(lap_ref, rot, anchor, inter, inter_ref, np.zeros((2, 0), dtype=bool))
    return problem, configs, targets, prev


def tangent_fn(problem, configs, fn):
    """Wrap fn(configs) as a function of the stacked tangent increment."""
    def f(v):
        return fn(problem._retract(configs, v))
    return f


def fd_gradient(f, dim, h=1e-6):
    cols = []
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        cols.append((np.asarray(f(e)) - np.asarray(f(-e))) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_hessian(f, dim, h=1e-4):
    Hs = np.zeros((dim, dim))
    E = np.eye(dim) * h
    for i in range(dim):
        for j in range(i, dim):
            v = (f(E[i] + E[j]) - f(E[i] - E[j]) - f(-E[i] + E[j]) + f(-E[i] - E[j])) / (4 * h * h)
            Hs[i, j] = Hs[j, i] = v
    return Hs


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-12))
