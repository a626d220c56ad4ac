"""Interaction-graph and tracking rewards as pure functions of samples.

Nothing here simulates physics: contact flags and forces are inputs. The
offline scorer at the bottom derives them from a retargeted trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import log_so3

# term -> (weight, sigma); sigma None for penalties
DEFAULT_TERMS = {
    "interact_edge": (1.5, None),
    "contact": (1.0, None),
    "upper_pos": (1.0, 0.3),
    "upper_ori": (1.0, 0.4),
    "upper_lin_vel": (1.0, 1.0),
    "upper_ang_vel": (1.0, 3.14),
    "lower_pos": (0.5, 0.3),
    "lower_ori": (0.5, 0.4),
    "lower_lin_vel": (0.5, 1.0),
    "lower_ang_vel": (0.5, 3.14),
    "anchor_pos": (0.3, 0.3),
    "anchor_ori": (0.5, 0.4),
    "action_rate": (-0.3, None),
    "feet_slip": (-0.5, None),
    "joint_limit": (-10.0, None),
    "torque": (-1e-4, None),   # applied to ||tau||^2
}


@dataclass(frozen=True)
class RewardConfig:
    sigma_inter: float = 0.04   # m^2
    sigma_c: float = 1.0
    beta: float = 0.5
    f_min: float = 5.0          # N
    f_max: float = 200.0        # N
    terms: dict = field(default_factory=lambda: dict(DEFAULT_TERMS))

    def __post_init__(self):
        if not (self.sigma_inter > 0 and self.sigma_c > 0):
            raise ValueError("sigmas must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 < self.f_min < self.f_max:
            raise ValueError("need 0 < f_min < f_max")
        for name, (_, sigma) in self.terms.items():
            if sigma is not None and not sigma > 0:
                raise ValueError(f"sigma of {name!r} must be positive")

    def weight(self, term):
        return self.terms[term][0]

    def sigma(self, term):
        return self.terms[term][1]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "terms" in d:
            terms = dict(DEFAULT_TERMS)
            for name, v in d["terms"].items():
                if name not in DEFAULT_TERMS:
                    raise KeyError(f"unknown reward term {name!r}")
                if isinstance(v, dict):
                    terms[name] = (float(v.get("weight", terms[name][0])), v.get("sigma", terms[name][1]))
                else:
                    terms[name] = (float(v[0]), v[1])
            d["terms"] = terms
        return cls(**d)

    def to_dict(self):
        return {"sigma_inter": self.sigma_inter, "sigma_c": self.sigma_c, "beta": self.beta,
                "f_min": self.f_min, "f_max": self.f_max,
                "terms": {k: {"weight": w, "sigma": s} for k, (w, s) in self.terms.items()}}


@dataclass
class InteractionSample:
    d_sim: np.ndarray          # (m, 3)
    d_ref: np.ndarray          # (m, 3)
    weights: np.ndarray        # (m,)
    contact: np.ndarray        # (N,) 0/1 simulated contact flags per node
    force: np.ndarray          # (N,) newtons
    active: np.ndarray         # (N,) bool, reference active set

    def __post_init__(self):
        self.d_sim = np.asarray(self.d_sim, dtype=float).reshape(-1, 3)
        self.d_ref = np.asarray(self.d_ref, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.contact = np.asarray(self.contact, dtype=float).reshape(-1)
        self.force = np.asarray(self.force, dtype=float).reshape(-1)
        self.active = np.asarray(self.active, dtype=bool).reshape(-1)
        if not (len(self.d_sim) == len(self.d_ref) == len(self.weights)):
            raise ValueError("edge arrays are not aligned")
        if not (len(self.contact) == len(self.force) == len(self.active)):
            raise ValueError("node arrays are not aligned")
        if np.any(~np.isfinite(self.force)) or np.any(self.force < 0):
            raise ValueError("forces must be finite and non-negative")


def r_inter(sample, config=RewardConfig()):
    if len(sample.weights) == 0:
        return 1.0
    err = np.sum((sample.d_sim - sample.d_ref) ** 2, axis=1)
    return float(np.exp(-np.dot(sample.weights, err) / config.sigma_inter))


def force_regularization(f, config=RewardConfig()):
    """Piecewise force penalty: too weak below f_min, too strong above f_max."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("force must be non-negative")
    out = np.where(f < config.f_min, 1.0 - f / config.f_min,
                   np.where(f > config.f_max, (f - config.f_max) / config.f_max, 0.0))
    return float(out) if out.ndim == 0 else out


def contact_energies(sample, config=RewardConfig()):
    act = sample.active
    e_act = np.sum(config.beta * np.abs(sample.contact[act] - 1.0)
                   + (1.0 - config.beta) * force_regularization(sample.force[act], config))
    e_inact = np.sum(np.abs(sample.contact[~act]))
    return float(e_act), float(e_inact)


def r_contact(sample, config=RewardConfig()):
    n = len(sample.active)
    if n == 0:
        return 1.0
    lam_act = np.count_nonzero(sample.active) / n
    lam_inact = 1.0 - lam_act
    e_act, e_inact = contact_energies(sample, config)
    s2 = config.sigma_c ** 2
    return float(lam_act * np.exp(-e_act / s2) + lam_inact * np.exp(-e_inact / s2))


# ------------------------------------------------------------ tracking


@dataclass
class TrackingState:
    """Link-level kinematic state of one robot at one step."""

    link_pos: np.ndarray       # (L, 3)
    link_rot: np.ndarray       # (L, 3, 3)
    link_lin_vel: np.ndarray   # (L, 3)
    link_ang_vel: np.ndarray   # (L, 3)
    root_pos: np.ndarray
    root_rot: np.ndarray
    q: np.ndarray = None
    action: np.ndarray = None
    prev_action: np.ndarray = None
    foot_contact: np.ndarray = None   # (F,) bool
    foot_vel: np.ndarray = None       # (F, 3)
    torque: np.ndarray = None


def _kernel(sq_err_mean, sigma):
    return float(np.exp(-sq_err_mean / sigma ** 2))


def _mean_sq(a, b, idx):
    if len(idx) == 0:
        return 0.0
    return float(np.mean(np.sum((a[idx] - b[idx]) ** 2, axis=-1)))


def _mean_rot_sq(Ra, Rb, idx):
    if len(idx) == 0:
        return 0.0
    return float(np.mean([np.sum(log_so3(Ra[k].T @ Rb[k]) ** 2) for k in idx]))


def tracking_rewards(state, ref, config=RewardConfig(), upper=(), lower=(), q_limit=None):
    """Per-term values and the weighted total.

    `upper` / `lower` index link rows. Penalty terms are reported as
    non-negative magnitudes; their weights carry the sign.
    """
    upper = list(upper)
    lower = list(lower)
    n_links = len(state.link_pos)
    if any(i >= n_links or i >= len(ref.link_pos) for i in upper + lower):
        raise KeyError("link index outside the supplied link data")
    terms = {}
    for part, idx in (("upper", upper), ("lower", lower)):
        terms[f"{part}_pos"] = _kernel(_mean_sq(state.link_pos, ref.link_pos, idx), config.sigma(f"{part}_pos"))
        terms[f"{part}_ori"] = _kernel(_mean_rot_sq(state.link_rot, ref.link_rot, idx), config.sigma(f"{part}_ori"))
        terms[f"{part}_lin_vel"] = _kernel(_mean_sq(state.link_lin_vel, ref.link_lin_vel, idx),
                                           config.sigma(f"{part}_lin_vel"))
        terms[f"{part}_ang_vel"] = _kernel(_mean_sq(state.link_ang_vel, ref.link_ang_vel, idx),
                                           config.sigma(f"{part}_ang_vel"))
    terms["anchor_pos"] = _kernel(float(np.sum((state.root_pos - ref.root_pos) ** 2)), config.sigma("anchor_pos"))
    terms["anchor_ori"] = _kernel(float(np.sum(log_so3(state.root_rot.T @ ref.root_rot) ** 2)),
                                  config.sigma("anchor_ori"))
    if state.action is not None and state.prev_action is not None:
        terms["action_rate"] = float(np.sum((np.asarray(state.action) - np.asarray(state.prev_action)) ** 2))
    else:
        terms["action_rate"] = 0.0
    if state.foot_contact is not None:
        v = np.asarray(state.foot_vel, dtype=float)
        terms["feet_slip"] = float(np.sum(np.asarray(state.foot_contact, dtype=float) * np.sum(v[:, :2] ** 2, axis=1)))
    else:
        terms["feet_slip"] = 0.0
    if state.q is not None and q_limit is not None:
        terms["joint_limit"] = float(np.sum(np.maximum(0.0, np.abs(state.q) - np.asarray(q_limit))))
    else:
        terms["joint_limit"] = 0.0
    terms["torque"] = float(np.sum(np.asarray(state.torque) ** 2)) if state.torque is not None else 0.0
    total = sum(config.weight(k) * v for k, v in terms.items())
    return terms, float(total)


# ------------------------------------------------------- offline scoring


def score_trajectory(sim_positions, priors, config=RewardConfig(), contact_threshold=0.10, nominal_force=20.0):
    """Per-frame r_inter and r_contact of a retargeted clip.

    `sim_positions` is (T, 2, K, 3) robot keypoints over the mesh vertices;
    reference edges come from the priors (unified manifold). Nodes of the contact term
    are the active inter-agent edges; a node is active in the reference when
    its source length is below `contact_threshold`, and in contact in the
    simulation under the same rule. Contacts are assigned `nominal_force`.
    """
    out_inter, out_contact = [], []
    for t, (edges, d_ref) in enumerate(priors.interaction):
        P = sim_positions[t]
        d_sim = P[0, edges.i] - P[1, edges.j]
        active = np.linalg.norm(d_ref, axis=1) < contact_threshold
        touching = np.linalg.norm(d_sim, axis=1) < contact_threshold
        sample = InteractionSample(d_sim, d_ref, edges.weight, touching.astype(float),
                                   np.where(touching, nominal_force, 0.0), active)
        out_inter.append(r_inter(sample, config))
        out_contact.append(r_contact(sample, config))
    return np.array(out_inter), np.array(out_contact)
