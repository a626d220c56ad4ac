"""Partitioned interaction graph, Laplacian coordinates and graph priors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .collision import link_contact_matrix
from .robot import forward_kinematics

GRAPH_SCHEMA = "dualretarget.graphs/1"

DEFAULT_VERTICES = (
    "pelvis", "torso", "head",
    "left_shoulder", "left_elbow", "left_hand",
    "left_hip", "left_knee", "left_foot",
    "right_shoulder", "right_elbow", "right_hand",
    "right_hip", "right_knee", "right_foot",
)

DEFAULT_SELF_EDGES = (
    ("pelvis", "torso"), ("torso", "head"),
    ("torso", "left_shoulder"), ("torso", "right_shoulder"),
    ("left_shoulder", "left_elbow"), ("left_elbow", "left_hand"),
    ("right_shoulder", "right_elbow"), ("right_elbow", "right_hand"),
    ("pelvis", "left_hip"), ("pelvis", "right_hip"),
    ("left_hip", "left_knee"), ("left_knee", "left_foot"),
    ("right_hip", "right_knee"), ("right_knee", "right_foot"),
    # cross braces
    ("left_shoulder", "right_shoulder"), ("left_hip", "right_hip"),
)


@dataclass(frozen=True)
class MeshConfig:
    vertices: tuple[str, ...] = DEFAULT_VERTICES
    self_edges: tuple[tuple[str, str], ...] = DEFAULT_SELF_EDGES
    omega_max: float = 1.0
    gamma: float = 5.0          # 1/m, e-fold length 0.2 m
    r_inter: float = 1.0        # m
    eps_contact: float = 0.02   # m

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "vertices" in d:
            d["vertices"] = tuple(d["vertices"])
        if "self_edges" in d:
            d["self_edges"] = tuple(tuple(e) for e in d["self_edges"])
        return cls(**d)

    def to_dict(self):
        return {"vertices": list(self.vertices), "self_edges": [list(e) for e in self.self_edges],
                "omega_max": self.omega_max, "gamma": self.gamma,
                "r_inter": self.r_inter, "eps_contact": self.eps_contact}


@dataclass(frozen=True)
class InterEdges:
    """Active cross-agent edges of one frame: vertex i of agent 0 to vertex j of agent 1."""

    i: np.ndarray
    j: np.ndarray
    distance: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return len(self.i)


@dataclass(frozen=True)
class MeshTopology:
    vertices: tuple[tuple[int, str], ...]
    e_self: tuple[tuple[int, int], ...]   # indices into the per-agent vertex list
    neighbors: tuple[tuple[int, ...], ...]
    omega_max: float
    gamma: float

    def __post_init__(self):
        for a, b in self.e_self:
            if a == b:
                raise ValueError("self edge joins a vertex to itself")

    @property
    def names(self):
        return tuple(n for a, n in self.vertices if a == 0)

    @property
    def n_per_agent(self):
        return len(self.names)

    def global_self_edges(self):
        """e_self over the stacked 2K vertex list (both agents)."""
        K = self.n_per_agent
        return [(a + k * K, b + k * K) for k in range(2) for a, b in self.e_self]

    def global_inter_edges(self, inter):
        K = self.n_per_agent
        return [(int(i), int(j) + K) for i, j in zip(inter.i, inter.j)]

    def check_partition(self, inter):
        """Edge sets are disjoint and respect agent membership."""
        K = self.n_per_agent
        es = set(self.global_self_edges())
        ei = set(self.global_inter_edges(inter))
        if es & ei:
            return False
        if any((a < K) != (b < K) for a, b in es):
            return False
        return all((a < K) != (b < K) for a, b in ei)

    def laplacian_matrix(self):
        """K x K operator: row i gives p_i - sum_j c_ij p_j with c_ij = 1/|N(i)|."""
        K = self.n_per_agent
        Lm = np.eye(K)
        for i, nb in enumerate(self.neighbors):
            if not nb:
                raise ValueError(f"vertex {self.names[i]!r} has no neighbours")
            for j in nb:
                Lm[i, j] -= 1.0 / len(nb)
        return Lm


def make_topology(config, available_names=None):
    names = tuple(config.vertices)
    if available_names is not None:
        missing = [n for n in names if n not in available_names]
        if missing:
            raise KeyError(f"unknown vertex names {missing}")
    idx = {n: i for i, n in enumerate(names)}
    edges = []
    for a, b in config.self_edges:
        if a not in idx or b not in idx:
            raise KeyError(f"self edge ({a}, {b}) references a vertex outside the vertex set")
        e = (min(idx[a], idx[b]), max(idx[a], idx[b]))
        if e not in edges:
            edges.append(e)
    nbrs = [[] for _ in names]
    for a, b in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    verts = tuple((k, n) for k in range(2) for n in names)
    return MeshTopology(verts, tuple(edges), tuple(tuple(sorted(n)) for n in nbrs),
                        config.omega_max, config.gamma)


def laplacian(positions, neighbors, i, weights=None):
    """p_i minus the weighted average of its neighbours (uniform weights by default)."""
    nb = list(neighbors[i])
    if not nb:
        raise ValueError(f"vertex {i} is isolated")
    positions = np.asarray(positions, dtype=float)
    c = np.full(len(nb), 1.0 / len(nb)) if weights is None else np.asarray(weights, dtype=float)
    return positions[i] - c @ positions[nb]


def stiffness(d, omega_max, gamma):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("source distance must be non-negative")
    w = omega_max * np.exp(-gamma * d)
    return float(w) if w.ndim == 0 else w


def inter_edges_from_points(pa, pb, r_inter, omega_max, gamma):
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)
    i, j = np.nonzero(d <= r_inter)
    dd = d[i, j]
    return InterEdges(i, j, dd, stiffness(dd, omega_max, gamma) * np.ones_like(dd))


def build_topology(ref, frame, config):
    """Active inter-agent edges of one frame from unified-manifold distances."""
    idx = []
    for n in config.vertices:
        if n not in ref.names:
            raise KeyError(f"unknown vertex {n!r}")
        idx.append(ref.names.index(n))
    P = ref.p_uni[frame][:, idx]
    return inter_edges_from_points(P[0], P[1], config.r_inter, config.omega_max, config.gamma)


@dataclass
class GraphPriors:
    vertex_names: tuple[str, ...]
    interaction: list = field(default_factory=list)   # per frame: (InterEdges, ref vectors (m, 3))
    contact_links: tuple = ((), ())
    contact: np.ndarray = None                        # (T, La, Lb) bool
    contact_distance: np.ndarray = None               # (T, La, Lb) metres
    omega_max: float = 1.0

    @property
    def n_frames(self):
        return len(self.interaction)

    def to_dict(self):
        frames = []
        for t, (edges, ref) in enumerate(self.interaction):
            fr = {
                "t": t,
                "interaction": [[int(i), int(j), float(w), [float(v) for v in r]]
                                for i, j, w, r in zip(edges.i, edges.j, edges.weight, ref)],
            }
            if self.contact is not None:
                fr["contacts"] = [[self.contact_links[0][a], self.contact_links[1][b]]
                                  for a, b in zip(*np.nonzero(self.contact[t]))]
            frames.append(fr)
        return {"schema": GRAPH_SCHEMA, "vertices": list(self.vertex_names),
                "contact_links": [list(self.contact_links[0]), list(self.contact_links[1])],
                "omega_max": self.omega_max, "frames": frames}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != GRAPH_SCHEMA:
            raise ValueError(f"unsupported graph schema {d.get('schema')!r}")
        inter = []
        la, lb = (tuple(x) for x in d["contact_links"])
        has_contact = bool(la) and bool(lb)
        contact = np.zeros((len(d["frames"]), len(la), len(lb)), dtype=bool) if has_contact else None
        for t, fr in enumerate(d["frames"]):
            rows = fr["interaction"]
            i = np.array([r[0] for r in rows], dtype=int)
            j = np.array([r[1] for r in rows], dtype=int)
            w = np.array([r[2] for r in rows], dtype=float)
            ref = np.array([r[3] for r in rows], dtype=float).reshape(-1, 3)
            dist = np.linalg.norm(ref, axis=1)
            inter.append((InterEdges(i, j, dist, w), ref))
            if has_contact:
                for a, b in fr.get("contacts", []):
                    contact[t, la.index(a), lb.index(b)] = True
        return cls(tuple(d["vertices"]), inter, (la, lb), contact, None, d.get("omega_max", 1.0))


def extract_priors(ref, config, trajectory=None, specs=None):
    """Interaction graph from the unified manifold; contact graph from a trajectory's capsules."""
    idx = [ref.names.index(n) for n in config.vertices]
    inter = []
    for t in range(ref.p_uni.shape[0]):
        edges = build_topology(ref, t, config)
        P = ref.p_uni[t][:, idx]
        inter.append((edges, P[0, edges.i] - P[1, edges.j]))
    priors = GraphPriors(tuple(config.vertices), inter, omega_max=config.omega_max)
    if trajectory is not None:
        if specs is None:
            raise ValueError("contact graph needs the robot specs")
        flags, dists = [], []
        for t in range(trajectory.n_frames):
            fks = [forward_kinematics(specs[k], trajectory.configuration(t, k)) for k in range(2)]
            la, lb, dist, flag = link_contact_matrix(specs[0], fks[0], specs[1], fks[1], config.eps_contact)
            flags.append(flag)
            dists.append(dist)
        priors.contact_links = (tuple(la), tuple(lb))
        priors.contact = np.array(flags)
        priors.contact_distance = np.array(dists)
    return priors
