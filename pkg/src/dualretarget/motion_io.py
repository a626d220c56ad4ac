"""Source motion parsing, dual reference manifolds and trajectory serialization."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rotations import euler_matrix

TRAJECTORY_SCHEMA = "dualretarget.trajectory/1"
KEYPOINT_MAGIC = "# dual-keypoints v1"

_POS_CHANNELS = ("Xposition", "Yposition", "Zposition")
_ROT_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")


class MotionFormatError(ValueError):
    """Malformed motion input; `line` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class SourceJoint:
    name: str
    parent: int | None
    offset: np.ndarray
    channels: tuple[str, ...]


@dataclass(frozen=True)
class SourceSkeleton:
    joints: tuple[SourceJoint, ...]
    end_sites: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        roots = [j for j in self.joints if j.parent is None]
        if len(roots) != 1:
            raise MotionFormatError(f"skeleton must have exactly one root, found {len(roots)}")
        for i, j in enumerate(self.joints):
            if j.parent is not None and not (0 <= j.parent < i):
                raise MotionFormatError(f"joint {j.name!r} is not topologically sorted")
            if not np.all(np.isfinite(j.offset)):
                raise MotionFormatError(f"joint {j.name!r} has a non-finite offset")

    @property
    def names(self):
        return [j.name for j in self.joints]

    @property
    def channel_count(self):
        return sum(len(j.channels) for j in self.joints)

    def index(self, name):
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(f"unknown joint {name!r}")


@dataclass(frozen=True)
class DualMotionClip:
    """Raw global keypoints of two agents, shape (T, 2, K, 3), z-up metres."""

    frame_dt: float
    keypoints: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=float)
        if kp.ndim != 4 or kp.shape[1] != 2 or kp.shape[3] != 3:
            raise MotionFormatError(f"keypoints must have shape (T, 2, K, 3), got {kp.shape}")
        if kp.shape[2] != len(self.names):
            raise MotionFormatError("keypoint name list does not match keypoint count")
        if not np.all(np.isfinite(kp)):
            raise MotionFormatError("non-finite keypoint coordinates")
        if not self.frame_dt > 0:
            raise MotionFormatError("frame_dt must be positive")
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_frames(self):
        return self.keypoints.shape[0]

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown keypoint {name!r}") from None


@dataclass(frozen=True)
class ReferencePair:
    p_ind: np.ndarray
    p_uni: np.ndarray
    s_individual: np.ndarray
    s_unified: float
    h_robot: float
    h_raw: np.ndarray
    names: tuple[str, ...]
    frame_dt: float


# ---------------------------------------------------------------- BVH


def _tokenize(text):
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.replace("{", " { ").replace("}", " } ").split():
            yield lineno, tok


def parse_bvh(text, scale=1.0):
    """Parse the BVH subset: ROOT/JOINT/End Site, OFFSET, CHANNELS (3 or 6).

    Returns (SourceSkeleton, channel values of shape (T, C), frame_dt).
    `scale` multiplies offsets and position channels (0.01 for centimetres).
    """
    lines = text.splitlines()
    motion_line = None
    for i, line in enumerate(lines):
        if line.strip().upper().startswith("MOTION"):
            motion_line = i
            break
    if not any(line.strip().upper().startswith("HIERARCHY") for line in lines):
        raise MotionFormatError("missing HIERARCHY section", 1)
    if motion_line is None:
        raise MotionFormatError("missing MOTION section", len(lines))

    joints, end_sites = _parse_hierarchy("\n".join(lines[:motion_line]), scale)
    skeleton = SourceSkeleton(tuple(joints), end_sites)
    values, frame_dt = _parse_motion(lines, motion_line, skeleton, scale)
    return skeleton, values, frame_dt


def _parse_hierarchy(text, scale):
    toks = list(_tokenize(text))
    joints = []
    end_sites = {}
    stack = []  # joint index, or -1 for an End Site block
    pending = None  # ("joint", name) or ("end", None) awaiting '{'
    i = 0
    last_line = 1

    def need(n):
        if i + n >= len(toks):
            raise MotionFormatError("unexpected end of HIERARCHY", last_line)

    while i < len(toks):
        lineno, tok = toks[i]
        last_line = lineno
        key = tok.upper()
        if key == "HIERARCHY":
            i += 1
        elif key in ("ROOT", "JOINT"):
            need(1)
            if key == "ROOT" and (joints or stack):
                raise MotionFormatError("multiple ROOT entries", lineno)
            if key == "JOINT" and not stack:
                raise MotionFormatError("JOINT outside of ROOT", lineno)
            pending = ("joint", toks[i + 1][1])
            i += 2
        elif key == "END":
            need(1)
            if toks[i + 1][1].upper() != "SITE":
                raise MotionFormatError(f"expected 'Site' after 'End', got {toks[i + 1][1]!r}", lineno)
            pending = ("end", None)
            i += 2
        elif tok == "{":
            if pending is None:
                raise MotionFormatError("unexpected '{'", lineno)
            if pending[0] == "joint":
                parent = stack[-1] if stack else None
                if parent == -1:
                    raise MotionFormatError("JOINT inside End Site", lineno)
                joints.append({"name": pending[1], "parent": parent, "offset": None, "channels": ()})
                stack.append(len(joints) - 1)
            else:
                if not stack or stack[-1] == -1:
                    raise MotionFormatError("End Site without parent joint", lineno)
                end_sites[stack[-1]] = None
                stack.append(-1)
                end_owner = stack[-2]
            pending = None
            i += 1
        elif tok == "}":
            if not stack:
                raise MotionFormatError("unbalanced braces: unexpected '}'", lineno)
            stack.pop()
            i += 1
        elif key == "OFFSET":
            need(3)
            try:
                off = np.array([float(toks[i + k][1]) for k in (1, 2, 3)]) * scale
            except ValueError:
                raise MotionFormatError("OFFSET expects three numbers", lineno) from None
            if not stack:
                raise MotionFormatError("OFFSET outside of a joint block", lineno)
            if stack[-1] == -1:
                end_sites[end_owner] = off
            else:
                joints[stack[-1]]["offset"] = off
            i += 4
        elif key == "CHANNELS":
            need(1)
            try:
                n = int(toks[i + 1][1])
            except ValueError:
                raise MotionFormatError("CHANNELS expects a count", lineno) from None
            if n not in (3, 6):
                raise MotionFormatError(f"unsupported channel count {n}", lineno)
            if i + 1 + n >= len(toks):
                raise MotionFormatError("channel count mismatch: too few channel names", lineno)
            names = tuple(toks[i + 2 + k][1] for k in range(n))
            for c in names:
                if c not in _POS_CHANNELS + _ROT_CHANNELS:
                    raise MotionFormatError(f"channel count mismatch or unsupported channel {c!r}", lineno)
            if not stack or stack[-1] == -1:
                raise MotionFormatError("CHANNELS outside of a joint block", lineno)
            joints[stack[-1]]["channels"] = names
            i += 2 + n
        else:
            raise MotionFormatError(f"unexpected token {tok!r}", lineno)
    if stack or pending is not None:
        raise MotionFormatError("unbalanced braces: unclosed block", last_line)
    if not joints:
        raise MotionFormatError("HIERARCHY declares no joints", last_line)

    out = []
    for j in joints:
        if j["offset"] is None:
            raise MotionFormatError(f"joint {j['name']!r} has no OFFSET", last_line)
        out.append(SourceJoint(j["name"], j["parent"], j["offset"], j["channels"]))
    for k, v in end_sites.items():
        if v is None:
            raise MotionFormatError("End Site without OFFSET", last_line)
    return out, end_sites


def _parse_motion(lines, start, skeleton, scale):
    idx = start + 1
    header = {}
    while idx < len(lines) and len(header) < 2:
        line = lines[idx].strip()
        idx += 1
        if not line:
            continue
        low = line.lower()
        if low.startswith("frames:"):
            try:
                header["frames"] = int(line.split(":", 1)[1])
            except ValueError:
                raise MotionFormatError("bad Frames header", idx) from None
        elif low.startswith("frame time:"):
            try:
                header["dt"] = float(line.split(":", 1)[1])
            except ValueError:
                raise MotionFormatError("bad Frame Time header", idx) from None
        else:
            raise MotionFormatError(f"expected Frames/Frame Time header, got {line!r}", idx)
    if "frames" not in header or "dt" not in header:
        raise MotionFormatError("MOTION section lacks Frames or Frame Time", idx)
    if header["dt"] <= 0:
        raise MotionFormatError("Frame Time must be positive", idx)

    n_chan = skeleton.channel_count
    rows = []
    for k in range(idx, len(lines)):
        line = lines[k].strip()
        if not line:
            continue
        try:
            vals = [float(v) for v in line.split()]
        except ValueError:
            raise MotionFormatError("non-numeric frame data", k + 1) from None
        if len(vals) != n_chan:
            raise MotionFormatError(f"channel count mismatch: expected {n_chan} values, got {len(vals)}", k + 1)
        if not all(np.isfinite(vals)):
            raise MotionFormatError("non-finite channel value", k + 1)
        rows.append(vals)
    if len(rows) != header["frames"]:
        raise MotionFormatError(
            f"frame-count mismatch: header declares {header['frames']}, found {len(rows)}", len(lines))
    values = np.array(rows, dtype=float).reshape(len(rows), n_chan)
    # position channels share the offset unit
    col = 0
    for j in skeleton.joints:
        for c in j.channels:
            if c in _POS_CHANNELS:
                values[:, col] *= scale
            col += 1
    return values, header["dt"]


def skeleton_fk(skeleton, frame_values):
    """World positions (J, 3) and rotations (J, 3, 3) for one frame of channels."""
    n = len(skeleton.joints)
    pos = np.zeros((n, 3))
    rot = np.zeros((n, 3, 3))
    col = 0
    for i, j in enumerate(skeleton.joints):
        trans = j.offset.copy()
        order, angles = "", []
        for c in j.channels:
            v = frame_values[col]
            col += 1
            if c in _POS_CHANNELS:
                trans[_POS_CHANNELS.index(c)] += v
            else:
                order += c[0]
                angles.append(v)
        local = euler_matrix(order, angles) if order else np.eye(3)
        if j.parent is None:
            pos[i] = trans
            rot[i] = local
        else:
            pos[i] = pos[j.parent] + rot[j.parent] @ trans
            rot[i] = rot[j.parent] @ local
    return pos, rot


_Y_TO_Z_UP = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def extract_keypoints(skeleton, channels, keypoint_names, up_axis="z"):
    """FK world positions of the mapped joints, shape (T, K, 3), z-up."""
    idx = []
    for name in keypoint_names:
        try:
            idx.append(skeleton.index(name))
        except KeyError:
            raise KeyError(f"keypoint map references unknown joint {name!r}") from None
    channels = np.atleast_2d(np.asarray(channels, dtype=float))
    out = np.zeros((channels.shape[0], len(idx), 3))
    if not idx:
        return out
    for t in range(channels.shape[0]):
        pos, _ = skeleton_fk(skeleton, channels[t])
        out[t] = pos[idx]
    if up_axis == "y":
        out = out @ _Y_TO_Z_UP.T
    elif up_axis != "z":
        raise ValueError(f"up_axis must be 'y' or 'z', got {up_axis!r}")
    return out


def clip_from_bvh(text_a, text_b, keypoint_names, scale=1.0, up_axis="z"):
    """Build a DualMotionClip from one BVH stream per agent."""
    parts = []
    dts = []
    for text in (text_a, text_b):
        skel, values, dt = parse_bvh(text, scale=scale)
        parts.append(extract_keypoints(skel, values, keypoint_names, up_axis=up_axis))
        dts.append(dt)
    if parts[0].shape[0] != parts[1].shape[0]:
        raise MotionFormatError("agents have different frame counts")
    if abs(dts[0] - dts[1]) > 1e-9:
        raise MotionFormatError("agents have different frame times")
    return DualMotionClip(dts[0], np.stack(parts, axis=1), tuple(keypoint_names))


# ---------------------------------------------------------- keypoint format


def format_keypoints(clip):
    T, A, K, _ = clip.keypoints.shape
    out = [KEYPOINT_MAGIC, f"agents {A}", f"keypoints {K}",
           f"frame_dt {clip.frame_dt!r}", "names " + " ".join(clip.names)]
    for t in range(T):
        out.append(" ".join(repr(float(v)) for v in clip.keypoints[t].ravel()))
    return "\n".join(out) + "\n"


def parse_keypoints(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != KEYPOINT_MAGIC:
        raise MotionFormatError(f"expected header {KEYPOINT_MAGIC!r}", 1)
    header = {}
    k = 1
    while k < len(lines) and len(header) < 4:
        parts = lines[k].split()
        k += 1
        if not parts:
            continue
        if parts[0] not in ("agents", "keypoints", "frame_dt", "names"):
            raise MotionFormatError(f"unknown header field {parts[0]!r}", k)
        header[parts[0]] = parts[1:]
    try:
        agents = int(header["agents"][0])
        n_kp = int(header["keypoints"][0])
        dt = float(header["frame_dt"][0])
        names = tuple(header["names"])
    except (KeyError, IndexError, ValueError):
        raise MotionFormatError("incomplete or malformed header", k) from None
    if agents != 2:
        raise MotionFormatError(f"only two agents are supported, got {agents}", 2)
    if len(names) != n_kp:
        raise MotionFormatError("names count differs from keypoints count", k)
    frames = []
    for ln in range(k, len(lines)):
        s = lines[ln].strip()
        if not s or s.startswith("#"):
            continue
        try:
            vals = np.array([float(v) for v in s.split()])
        except ValueError:
            raise MotionFormatError("non-numeric frame record", ln + 1) from None
        if vals.size != agents * n_kp * 3:
            raise MotionFormatError(f"expected {agents * n_kp * 3} values, got {vals.size}", ln + 1)
        if not np.all(np.isfinite(vals)):
            raise MotionFormatError("non-finite coordinate", ln + 1)
        frames.append(vals.reshape(agents, n_kp, 3))
    if not frames:
        raise MotionFormatError("no frame records", len(lines))
    return DualMotionClip(dt, np.stack(frames), names)


def load_clip(path):
    path = Path(path)
    return parse_keypoints(path.read_text())


# ------------------------------------------------------------- manifolds


def _height_head_foot(kp, names, n_frames=10, head="head", feet=("left_foot", "right_foot")):
    h = kp[:n_frames, names.index(head), 2]
    f = np.min(kp[:n_frames, [names.index(x) for x in feet], 2], axis=1)
    return float(np.mean(h - f))


def _height_bbox(kp, names, n_frames=10):
    z = kp[:n_frames, :, 2]
    return float(np.mean(z.max(axis=1) - z.min(axis=1)))


HEIGHT_ESTIMATORS = {
    "head_foot": _height_head_foot,
    "bbox": _height_bbox,
}


def estimate_height(keypoints, names, strategy="head_foot"):
    """Height of one agent from (T, K, 3) keypoints using a named strategy."""
    try:
        fn = HEIGHT_ESTIMATORS[strategy]
    except KeyError:
        raise ValueError(f"unknown height estimator {strategy!r}") from None
    try:
        return fn(np.asarray(keypoints), list(names))
    except ValueError as exc:
        raise KeyError(f"height estimator {strategy!r} needs missing keypoints: {exc}") from None


def build_manifolds(clip, h_robot, height_estimator="head_foot", h_raw=None):
    """Scale each agent to the robot height (individual) and both by the mean scale (unified)."""
    if h_raw is None:
        h_raw = [estimate_height(clip.keypoints[:, k], clip.names, height_estimator) for k in range(2)]
    h_raw = np.asarray(h_raw, dtype=float)
    if np.any(h_raw <= 0) or not np.all(np.isfinite(h_raw)):
        raise ValueError(f"non-positive estimated height {h_raw.tolist()}")
    if not h_robot > 0:
        raise ValueError("robot height must be positive")
    s = h_robot / h_raw
    s_uni = float((s[0] + s[1]) / 2.0)
    p_ind = clip.keypoints * s[None, :, None, None]
    p_uni = clip.keypoints * s_uni
    return ReferencePair(p_ind, p_uni, s, s_uni, float(h_robot), h_raw, clip.names, clip.frame_dt)


# ------------------------------------------------------------ trajectory


@dataclass
class RobotTrajectory:
    """Per-frame configurations of both robots plus solve diagnostics."""

    robot_ids: tuple[str, str]
    frame_dt: float
    root_pos: np.ndarray     # (T, 2, 3)
    root_quat: np.ndarray    # (T, 2, 4) w, x, y, z
    q: tuple[np.ndarray, np.ndarray]  # per agent (T, n_k)
    diagnostics: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    priors: object = None

    @property
    def n_frames(self):
        return self.root_pos.shape[0]

    def configuration(self, t, agent):
        from .robot import RobotConfiguration
        return RobotConfiguration(self.q[agent][t].copy(), self.root_pos[t, agent].copy(),
                                  self.root_quat[t, agent].copy())


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def trajectory_to_dict(traj):
    return {
        "schema": TRAJECTORY_SCHEMA,
        "robot_ids": list(traj.robot_ids),
        "frame_dt": traj.frame_dt,
        "metadata": traj.metadata,
        "frames": [
            {
                "root_pos": traj.root_pos[t].tolist(),
                "root_quat": traj.root_quat[t].tolist(),
                "q": [traj.q[0][t].tolist(), traj.q[1][t].tolist()],
            }
            for t in range(traj.n_frames)
        ],
        "diagnostics": traj.diagnostics,
    }


def trajectory_from_dict(d):
    if d.get("schema") != TRAJECTORY_SCHEMA:
        raise MotionFormatError(f"unsupported trajectory schema {d.get('schema')!r}")
    frames = d["frames"]
    if not frames:
        raise MotionFormatError("trajectory has no frames")
    return RobotTrajectory(
        robot_ids=tuple(d["robot_ids"]),
        frame_dt=float(d["frame_dt"]),
        root_pos=np.array([f["root_pos"] for f in frames], dtype=float),
        root_quat=np.array([f["root_quat"] for f in frames], dtype=float),
        q=tuple(np.array([f["q"][k] for f in frames], dtype=float) for k in range(2)),
        diagnostics=list(d.get("diagnostics", [])),
        metadata=dict(d.get("metadata", {})),
    )


def atomic_write_text(path, text):
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return len(text.encode())


def write_trajectory(traj, destination):
    """Serialize to JSON; returns bytes written."""
    if traj.n_frames == 0:
        raise ValueError("trajectory has no frames")
    text = json.dumps(trajectory_to_dict(traj), sort_keys=True, indent=1) + "\n"
    return atomic_write_text(destination, text)


def read_trajectory(source):
    try:
        d = json.loads(Path(source).read_text())
    except json.JSONDecodeError as exc:
        raise MotionFormatError(f"corrupt trajectory file: {exc.msg}", exc.lineno) from None
    try:
        return trajectory_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MotionFormatError):
            raise
        raise MotionFormatError(f"corrupt trajectory file: {exc}") from None
