"""Configurable floating-base robot: kinematic tree, capsules, FK and Jacobians.

The decision vector for one robot is the tangent increment
``[dp (3, world), dw (3, world rotation vector), dq (n)]`` applied as
``p + dp``, ``exp(dw) R``, ``q + dq``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .rotations import axis_angle, exp_so3, log_so3, quat_to_matrix, matrix_to_quat, right_jacobian_inv, skew

ROOT_DOF = 6


class RobotSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Capsule:
    link: int
    a: np.ndarray
    b: np.ndarray
    radius: float
    name: str


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int          # parent link index
    child: int           # child link index
    origin_rot: np.ndarray
    origin_pos: np.ndarray
    axis: np.ndarray
    lower: float
    upper: float
    nominal: float


@dataclass(frozen=True)
class RobotSpec:
    name: str
    height: float
    links: tuple[str, ...]
    joints: tuple[Joint, ...]
    capsules: tuple[Capsule, ...]
    keypoints: dict[str, tuple[int, np.ndarray]]
    key_links: tuple[str, ...] = ()
    orientation_frames: dict = field(default_factory=dict)
    feet: tuple[str, ...] = ()
    upper_links: tuple[str, ...] = ()
    lower_links: tuple[str, ...] = ()

    def __post_init__(self):
        # each link's joint chain back to the root, as a boolean mask over joints
        n = len(self.joints)
        parent_joint = [-1] * len(self.links)
        for j, jt in enumerate(self.joints):
            if parent_joint[jt.child] != -1:
                raise RobotSpecError(f"link {self.links[jt.child]!r} has two parent joints")
            parent_joint[jt.child] = j
        mask = np.zeros((len(self.links), n), dtype=bool)
        for j, jt in enumerate(self.joints):
            pj = parent_joint[jt.parent]
            if pj >= j:
                raise RobotSpecError(f"joint {jt.name!r} listed before its parent joint")
            if pj >= 0:
                mask[jt.child] = mask[jt.parent]
            mask[jt.child, j] = True
        object.__setattr__(self, "_ancestors", mask)
        object.__setattr__(self, "_parent_joint", tuple(parent_joint))
        for jt in self.joints:
            if not jt.lower < jt.upper:
                raise RobotSpecError(f"joint {jt.name!r}: lower limit must be below upper")
            if abs(np.linalg.norm(jt.axis) - 1.0) > 1e-9:
                raise RobotSpecError(f"joint {jt.name!r}: axis is not unit length")
        for c in self.capsules:
            if not c.radius > 0:
                raise RobotSpecError(f"capsule {c.name!r}: radius must be positive")

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def n_dof(self):
        return ROOT_DOF + len(self.joints)

    @property
    def q_min(self):
        return np.array([j.lower for j in self.joints])

    @property
    def q_max(self):
        return np.array([j.upper for j in self.joints])

    @property
    def q_nominal(self):
        return np.array([j.nominal for j in self.joints])

    @property
    def keypoint_names(self):
        return tuple(self.keypoints)

    def link_index(self, name):
        try:
            return self.links.index(name)
        except ValueError:
            raise KeyError(f"unknown link {name!r}") from None

    def ancestors(self, link):
        return self._ancestors[link]

    def parent_joint(self, link):
        return self._parent_joint[link]

    def clamp(self, q):
        return np.clip(q, self.q_min, self.q_max)


def _rpy_matrix(rpy):
    r, p, y = rpy
    return (axis_angle(np.array([0.0, 0.0, 1.0]), y)
            @ axis_angle(np.array([0.0, 1.0, 0.0]), p)
            @ axis_angle(np.array([1.0, 0.0, 0.0]), r))


def spec_from_dict(d):
    """Build a RobotSpec from the documented JSON schema (see README)."""
    try:
        links = [l["name"] for l in d["links"]]
        if d.get("root_link", links[0]) != links[0]:
            raise RobotSpecError("root_link must be the first link")
        lidx = {n: i for i, n in enumerate(links)}
        joints = []
        for jd in d["joints"]:
            axis = np.asarray(jd["axis"], dtype=float)
            lo, hi = jd["limits"]
            joints.append(Joint(
                name=jd["name"], parent=lidx[jd["parent"]], child=lidx[jd["child"]],
                origin_rot=_rpy_matrix(jd.get("origin_rpy", [0.0, 0.0, 0.0])),
                origin_pos=np.asarray(jd.get("origin_xyz", [0.0, 0.0, 0.0]), dtype=float),
                axis=axis, lower=float(lo), upper=float(hi),
                nominal=float(jd.get("nominal", 0.0)),
            ))
        capsules = []
        for l in d["links"]:
            for k, c in enumerate(l.get("capsules", [])):
                capsules.append(Capsule(lidx[l["name"]], np.asarray(c["a"], dtype=float),
                                        np.asarray(c["b"], dtype=float), float(c["radius"]),
                                        c.get("name", f"{l['name']}/{k}")))
        keypoints = {}
        for name, kd in d["keypoints"].items():
            if kd["link"] not in lidx:
                raise RobotSpecError(f"keypoint {name!r} binds unknown link {kd['link']!r}")
            keypoints[name] = (lidx[kd["link"]], np.asarray(kd.get("offset", [0.0, 0.0, 0.0]), dtype=float))
        for name in d.get("key_links", []):
            if name not in lidx:
                raise RobotSpecError(f"key link {name!r} is not a link")
        return RobotSpec(
            name=d["name"], height=float(d.get("height", 1.0)), links=tuple(links),
            joints=tuple(joints), capsules=tuple(capsules), keypoints=keypoints,
            key_links=tuple(d.get("key_links", [])),
            orientation_frames=dict(d.get("orientation_frames", {})),
            feet=tuple(d.get("feet", [])),
            upper_links=tuple(d.get("upper_links", [])),
            lower_links=tuple(d.get("lower_links", [])),
        )
    except KeyError as exc:
        raise RobotSpecError(f"robot spec references unknown or missing key {exc}") from None


def load_robot_spec(path=None):
    """Load a robot spec file; no path means the bundled G1-like sample."""
    if path is None:
        text = resources.files("dualretarget").joinpath("data/g1_like.json").read_text()
    else:
        text = Path(path).read_text()
    return spec_from_dict(json.loads(text))


@dataclass
class RobotConfiguration:
    q: np.ndarray
    root_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    root_quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.root_pos = np.asarray(self.root_pos, dtype=float)
        self.root_quat = np.asarray(self.root_quat, dtype=float)
        if abs(np.linalg.norm(self.root_quat) - 1.0) > 1e-9:
            raise ValueError("root quaternion must be unit norm")
        if not np.all(np.isfinite(self.q)):
            raise ValueError("non-finite joint configuration")

    @property
    def root_rot(self):
        return quat_to_matrix(self.root_quat)

    def retract(self, delta):
        """Apply a tangent increment [dp, dw, dq]."""
        R = exp_so3(delta[3:6]) @ self.root_rot
        return RobotConfiguration(self.q + delta[6:], self.root_pos + delta[:3], matrix_to_quat(R))

    def difference(self, other):
        """Tangent vector d such that other.retract(d) ~= self."""
        dw = log_so3(self.root_rot @ other.root_rot.T)
        return np.concatenate([self.root_pos - other.root_pos, dw, self.q - other.q])

    def copy(self):
        return RobotConfiguration(self.q.copy(), self.root_pos.copy(), self.root_quat.copy())


@dataclass(frozen=True)
class FKResult:
    link_rot: np.ndarray      # (L, 3, 3)
    link_pos: np.ndarray      # (L, 3)
    joint_origin: np.ndarray  # (n, 3)
    joint_axis: np.ndarray    # (n, 3) world frame
    keypoints: np.ndarray     # (K, 3) in spec.keypoints order


def forward_kinematics(spec, config):
    if config.q.shape != (spec.n_joints,):
        raise ValueError(f"configuration has {config.q.shape} joints, spec expects {spec.n_joints}")
    L = len(spec.links)
    rot = np.zeros((L, 3, 3))
    pos = np.zeros((L, 3))
    rot[0] = config.root_rot
    pos[0] = config.root_pos
    n = spec.n_joints
    origin = np.zeros((n, 3))
    axis = np.zeros((n, 3))
    for j, jt in enumerate(spec.joints):
        R_o = rot[jt.parent] @ jt.origin_rot
        origin[j] = pos[jt.parent] + rot[jt.parent] @ jt.origin_pos
        axis[j] = R_o @ jt.axis
        rot[jt.child] = R_o @ axis_angle(jt.axis, config.q[j])
        pos[jt.child] = origin[j]
    kps = np.array([pos[l] + rot[l] @ off for l, off in spec.keypoints.values()]).reshape(-1, 3)
    return FKResult(rot, pos, origin, axis, kps)


def point_jacobian(spec, fk, link, point):
    """3 x (6+n) Jacobian of a world point rigidly attached to `link`."""
    J = np.zeros((3, spec.n_dof))
    J[:, 0:3] = np.eye(3)
    J[:, 3:6] = -skew(point - fk.link_pos[0])
    anc = spec.ancestors(link)
    if anc.any():
        J[:, ROOT_DOF:][:, anc] = np.cross(fk.joint_axis[anc], point - fk.joint_origin[anc]).T
    return J


def position_jacobian(spec, fk, keypoint):
    if keypoint not in spec.keypoints:
        raise KeyError(f"unknown keypoint {keypoint!r}")
    k = spec.keypoint_names.index(keypoint)
    link, _ = spec.keypoints[keypoint]
    return point_jacobian(spec, fk, link, fk.keypoints[k])


def angular_jacobian(spec, fk, link):
    """Columns mapping the tangent increment to world angular displacement of `link`."""
    J = np.zeros((3, spec.n_dof))
    J[:, 3:6] = np.eye(3)
    anc = spec.ancestors(link)
    J[:, ROOT_DOF:][:, anc] = fk.joint_axis[anc].T
    return J


def orientation_error_jacobian(spec, fk, link, target_rot):
    """Error log(target^T R_link) and its 3 x (6+n) Jacobian."""
    if isinstance(link, str):
        link = spec.link_index(link)
    R = fk.link_rot[link]
    e = log_so3(target_rot.T @ R)
    Jw = angular_jacobian(spec, fk, link)
    return e, right_jacobian_inv(e) @ R.T @ Jw


def keypoint_dict(spec, fk):
    return {name: fk.keypoints[i] for i, name in enumerate(spec.keypoint_names)}


def nominal_configuration(spec, root_pos=None, root_rot=None):
    quat = np.array([1.0, 0.0, 0.0, 0.0]) if root_rot is None else matrix_to_quat(root_rot)
    return RobotConfiguration(spec.q_nominal.copy(),
                              np.zeros(3) if root_pos is None else np.asarray(root_pos, dtype=float), quat)
