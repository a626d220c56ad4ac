"""Penetration, interaction-edge and contact metrics for retargeted clips and rollouts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .collision import PENETRATION_TOL, inter_robot_penetration
from .robot import forward_kinematics

TAU_STRICT = 0.2   # m
TAU_LOOSE = 0.4    # m
ISR_TOL = 10.0     # percent, per-step policy IEE
CSR_RECALL = 0.8
DSR_TOL = 20.0     # percent


def trajectory_keypoints(traj, specs, vertices):
    """(T, 2, K, 3) robot keypoints of the named vertices."""
    idx = [[s.keypoint_names.index(v) for v in vertices] for s in specs]
    out = np.zeros((traj.n_frames, 2, len(vertices), 3))
    for t in range(traj.n_frames):
        for k in range(2):
            fk = forward_kinematics(specs[k], traj.configuration(t, k))
            out[t, k] = fk.keypoints[idx[k]]
    return out


def frame_penetrations(traj, specs):
    """Per-frame maximal inter-robot penetration depth (m)."""
    depths = np.zeros(traj.n_frames)
    for t in range(traj.n_frames):
        fks = [forward_kinematics(specs[k], traj.configuration(t, k)) for k in range(2)]
        depths[t] = inter_robot_penetration(specs[0], fks[0], specs[1], fks[1])
    return depths


def penetration_metrics(depths, tol=PENETRATION_TOL):
    """(IPR percent, MPD centimetres) from per-frame depths."""
    depths = np.asarray(depths, dtype=float)
    if depths.size == 0:
        return 0.0, 0.0
    ipr = 100.0 * np.count_nonzero(depths > tol) / depths.size
    return float(ipr), float(100.0 * max(0.0, depths.max()))


def _edge_vectors(positions, priors, t):
    edges, ref = priors.interaction[t]
    P = positions[t]
    return P[0, edges.i] - P[1, edges.j], ref, edges.weight


def iee_retarget(positions, priors, h_robot):
    """Mean edge-vector error over all (frame, edge) instances, percent of h_robot.

    Returns (value, per-frame trace, empty flag). Frames without edges give NaN
    in the trace and are left out of the mean.
    """
    errs, trace = [], np.full(priors.n_frames, np.nan)
    for t in range(priors.n_frames):
        d_sim, d_ref, _ = _edge_vectors(positions, priors, t)
        if len(d_ref):
            e = np.linalg.norm(d_sim - d_ref, axis=1) / h_robot * 100.0
            errs.append(e)
            trace[t] = e.mean()
    if not errs:
        return 0.0, trace, True
    return float(np.concatenate(errs).mean()), trace, False


def iee_policy_step(d_sim, d_ref, weights):
    """100 * sum w ||d_sim - d_ref|| / sum w ||d_ref|| (0 for an empty or degenerate step)."""
    den = np.dot(weights, np.linalg.norm(d_ref, axis=-1))
    if len(weights) == 0 or den <= 0:
        return 0.0
    return float(100.0 * np.dot(weights, np.linalg.norm(d_sim - d_ref, axis=-1)) / den)


def iee_policy(positions, priors):
    trace = np.array([iee_policy_step(*_edge_vectors(positions, priors, t)) for t in range(priors.n_frames)])
    return (float(trace.mean()) if trace.size else 0.0), trace


@dataclass(frozen=True)
class F1Result:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def f1_from_flags(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    if tp + fp + fn == 0:
        # nothing predicted and nothing to find: perfect agreement
        return F1Result(1.0, 1.0, 1.0, 0, 0, 0)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return F1Result(float(f1), float(p), float(r), tp, fp, fn)


def contact_f1(sim_positions, ref_positions, tau):
    """Contact F1 over every cross-agent vertex pair and frame.

    A pair is in contact when its edge is shorter than tau; the reference uses
    the unified-manifold positions.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")

    def lengths(P):
        return np.linalg.norm(P[:, 0, :, None, :] - P[:, 1, None, :, :], axis=-1)

    return f1_from_flags(lengths(np.asarray(sim_positions)) < tau, lengths(np.asarray(ref_positions)) < tau)


# ---------------------------------------------------------------- rollouts


@dataclass
class Rollout:
    """Policy rollout aligned to reference frames."""

    d_sim: np.ndarray               # (T, m, 3)
    d_ref: np.ndarray               # (T, m, 3)
    weights: np.ndarray             # (T, m)
    required: np.ndarray            # (T, N) bool, reference contact graph
    contact_distance: np.ndarray    # (T, N) simulated pair distance (m)
    eps_contact: float = 0.02

    def __post_init__(self):
        self.d_sim = np.asarray(self.d_sim, dtype=float)
        self.d_ref = np.asarray(self.d_ref, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.required = np.asarray(self.required, dtype=bool)
        self.contact_distance = np.asarray(self.contact_distance, dtype=float)
        T = len(self.d_sim)
        if not (len(self.d_ref) == len(self.weights) == len(self.required) == len(self.contact_distance) == T):
            raise ValueError("rollout arrays are not aligned in time")
        if self.d_sim.shape != self.d_ref.shape or self.required.shape != self.contact_distance.shape:
            raise ValueError("rollout arrays are not aligned")

    @property
    def n_steps(self):
        return len(self.d_sim)

    def step_iee(self):
        return np.array([iee_policy_step(self.d_sim[t], self.d_ref[t], self.weights[t]) for t in range(self.n_steps)])


def policy_metrics(rollouts):
    """(ISR %, CSR %, CER fraction, DSR %) over a list of rollouts."""
    rollouts = list(rollouts)
    if not rollouts:
        raise ValueError("no rollouts supplied")
    isr_hits = csr_hits = steps = 0
    violations = required = 0
    dsr_hits = 0
    for r in rollouts:
        iee = r.step_iee()
        isr_hits += int(np.count_nonzero(iee < ISR_TOL))
        steps += r.n_steps
        made = r.contact_distance <= r.eps_contact
        for t in range(r.n_steps):
            need = r.required[t]
            n = int(need.sum())
            if n == 0:
                csr_hits += 1   # nothing required: vacuous success
                continue
            got = int(np.count_nonzero(made[t] & need))
            csr_hits += int(got / n > CSR_RECALL)
            violations += n - got
            required += n
        dsr_hits += int(np.all(iee < DSR_TOL))
    return (100.0 * isr_hits / steps, 100.0 * csr_hits / steps,
            (violations / required) if required else 0.0, 100.0 * dsr_hits / len(rollouts))


# ----------------------------------------------------------------- report


@dataclass
class MetricsReport:
    ipr: float
    mpd: float
    iee: float
    iee_policy: float
    f1_strict: float
    f1_loose: float
    isr: float = None
    csr: float = None
    cer: float = None
    dsr: float = None
    flags: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)

    def summary(self):
        keys = ("ipr", "mpd", "iee", "iee_policy", "f1_strict", "f1_loose", "isr", "csr", "cer", "dsr")
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}

    def to_json(self):
        body = {"metrics": {k: round(v, 10) for k, v in self.summary().items()}, "flags": self.flags}
        return json.dumps(body, sort_keys=True, indent=1) + "\n"

    def to_table(self):
        units = {"ipr": "%", "mpd": "cm", "iee": "%", "iee_policy": "%", "isr": "%", "csr": "%", "dsr": "%"}
        rows = [f"{k:<12}{v:>12.4f} {units.get(k, '')}".rstrip() for k, v in self.summary().items()]
        return "\n".join(rows) + "\n"

    def traces_to_text(self):
        names = sorted(self.traces)
        T = max((len(self.traces[n]) for n in names), default=0)
        lines = ["frame," + ",".join(names)]
        for t in range(T):
            lines.append(f"{t}," + ",".join(f"{self.traces[n][t]:.9g}" for n in names))
        return "\n".join(lines) + "\n"


def retarget_report(traj, specs, ref, priors, h_robot, rollouts=None):
    """All retargeting metrics of one clip (and policy metrics if rollouts are given)."""
    depths = frame_penetrations(traj, specs)
    ipr, mpd = penetration_metrics(depths)
    vertices = priors.vertex_names
    sim = trajectory_keypoints(traj, specs, vertices)
    vidx = [ref.names.index(v) for v in vertices]
    ref_pos = ref.p_uni[:, :, vidx]
    iee, iee_trace, empty = iee_retarget(sim, priors, h_robot)
    iee_p, iee_p_trace = iee_policy(sim, priors)
    report = MetricsReport(ipr, mpd, iee, iee_p,
                           contact_f1(sim, ref_pos, TAU_STRICT).f1, contact_f1(sim, ref_pos, TAU_LOOSE).f1)
    if empty:
        report.flags.append("no_interaction_edges")
    if rollouts:
        report.isr, report.csr, report.cer, report.dsr = policy_metrics(rollouts)
    report.traces = {"penetration_m": depths, "iee": np.nan_to_num(iee_trace), "iee_policy": iee_p_trace}
    return report
