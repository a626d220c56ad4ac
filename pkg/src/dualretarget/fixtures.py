"""Procedural two-person keypoint clips used as bundled test fixtures.

Bodies are built from a stick figure with proportions close to the bundled
robot's, so every clip is reachable after scaling. Agent 0 stands at -x facing
+x, agent 1 at +x facing -x.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .mesh import DEFAULT_VERTICES
from .motion_io import DualMotionClip, format_keypoints, parse_keypoints

FIXTURE_NAMES = ("handshake", "hug")

# fractions of head height
PELVIS_Z = 0.56
TORSO_Z = 0.76
SHOULDER_Z = 0.87
SHOULDER_Y = 0.13
HIP_Y = 0.072
HIP_DZ = -0.05
UPPER_ARM = 0.16
FOREARM = 0.19
THIGH = 0.24
SHIN = 0.27


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def two_link(root, target, l1, l2, bend_hint):
    """Middle and end point of a two-link chain reaching toward `target`."""
    d = target - root
    dist = np.linalg.norm(d)
    dist_c = np.clip(dist, abs(l1 - l2) + 1e-6, l1 + l2 - 1e-6)
    u = d / dist
    end = root + u * dist_c
    a = (l1 ** 2 - l2 ** 2 + dist_c ** 2) / (2 * dist_c)
    h = np.sqrt(max(l1 ** 2 - a ** 2, 0.0))
    perp = bend_hint - (bend_hint @ u) * u
    perp /= np.linalg.norm(perp)
    return root + a * u + h * perp, end


class Body:
    """Stick figure of one person; pose() maps world targets to keypoints."""

    def __init__(self, height):
        self.h = height

    def pose(self, pelvis_xy, yaw, hand_targets, foot_targets, elbow_hints=None):
        h = self.h
        c, s = np.cos(yaw), np.sin(yaw)
        fwd = np.array([c, s, 0.0])
        left = np.array([-s, c, 0.0])
        up = np.array([0.0, 0.0, 1.0])
        base = np.array([pelvis_xy[0], pelvis_xy[1], 0.0])
        kp = {
            "pelvis": base + PELVIS_Z * h * up,
            "torso": base + TORSO_Z * h * up,
            "head": base + h * up,
        }
        for side, sgn in (("left", 1.0), ("right", -1.0)):
            sh = base + SHOULDER_Z * h * up + sgn * SHOULDER_Y * h * left
            hint = elbow_hints[side] if elbow_hints else (-up + 0.3 * sgn * left - 0.2 * fwd)
            elbow, hand = two_link(sh, hand_targets[side], UPPER_ARM * h, FOREARM * h, hint)
            hip = kp["pelvis"] + HIP_DZ * h * up + sgn * HIP_Y * h * left
            knee, foot = two_link(hip, foot_targets[side], THIGH * h, SHIN * h, fwd)
            kp.update({f"{side}_shoulder": sh, f"{side}_elbow": elbow, f"{side}_hand": hand,
                       f"{side}_hip": hip, f"{side}_knee": knee, f"{side}_foot": foot})
        return np.array([kp[n] for n in DEFAULT_VERTICES])

    def rest_hand(self, pelvis_xy, yaw, side):
        h = self.h
        sgn = 1.0 if side == "left" else -1.0
        left = np.array([-np.sin(yaw), np.cos(yaw), 0.0])
        fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        return (np.array([pelvis_xy[0], pelvis_xy[1], 0.0]) + (SHOULDER_Z - 0.33) * h * np.array([0, 0, 1.0])
                + sgn * (SHOULDER_Y + 0.03) * h * left + 0.03 * h * fwd)

    def stance_foot(self, pelvis_xy, yaw, side, lift=0.0):
        sgn = 1.0 if side == "left" else -1.0
        left = np.array([-np.sin(yaw), np.cos(yaw), 0.0])
        return np.array([pelvis_xy[0], pelvis_xy[1], lift]) + sgn * HIP_Y * self.h * left


def _gait_feet(body, xs, yaw, side, trigger=0.08, swing_frames=10):
    """Foot targets for a pelvis whose x follows `xs`.

    A foot stays planted until the pelvis has moved `trigger` metres past it
    (the right foot waits twice as long, so steps alternate), then swings to a
    point ahead of the pelvis over `swing_frames` with a small lift.
    """
    T = len(xs)
    out = np.zeros((T, 3))
    wait = trigger if side == "left" else 2 * trigger
    planted = xs[0]
    swing = None  # (start frame, from x)
    for t in range(T):
        if swing is None and abs(xs[t] - planted) > wait:
            swing = (t, planted)
        lift = 0.0
        x = planted
        if swing is not None:
            w = (t - swing[0]) / swing_frames
            goal = xs[min(T - 1, swing[0] + swing_frames)]
            x = swing[1] + (goal - swing[1]) * smoothstep(w)
            lift = 0.04 * body.h * np.sin(np.pi * min(w, 1.0))
            if w >= 1.0:
                planted, swing, wait = goal, None, trigger
                x, lift = planted, 0.0
        out[t] = body.stance_foot((x, 0.0), yaw, side, lift)
    return out


def handshake(n_frames=240, frame_dt=1 / 30, heights=(1.65, 1.85), separation=1.0):
    """Facing pair; right hands meet, shake and withdraw."""
    bodies = [Body(h) for h in heights]
    yaws = (0.0, np.pi)
    xs = (-separation / 2, separation / 2)
    T = n_frames
    t = np.arange(T)
    reach = smoothstep((t - 0.17 * T) / (0.2 * T)) * (1 - smoothstep((t - 0.7 * T) / (0.2 * T)))
    shake = 0.035 * np.sin(2 * np.pi * 2.0 * t * frame_dt) * smoothstep((t - 0.38 * T) / (0.05 * T)) \
        * (1 - smoothstep((t - 0.66 * T) / (0.05 * T)))
    meet = np.array([0.0, 0.0, 0.5 * (0.62 * heights[0] + 0.62 * heights[1])])
    kp = np.zeros((T, 2, len(DEFAULT_VERTICES), 3))
    for k, b in enumerate(bodies):
        feet = {side: b.stance_foot((xs[k], 0.0), yaws[k], side) for side in ("left", "right")}
        for i in range(T):
            right_rest = b.rest_hand((xs[k], 0.0), yaws[k], "right")
            right = right_rest + reach[i] * (meet + np.array([0, 0, shake[i]]) - right_rest)
            hands = {"left": b.rest_hand((xs[k], 0.0), yaws[k], "left"), "right": right}
            kp[i, k] = b.pose((xs[k], 0.0), yaws[k], hands, feet)
    return DualMotionClip(frame_dt, kp, tuple(DEFAULT_VERTICES))


def hug(n_frames=240, frame_dt=1 / 30, heights=(1.65, 1.85), start_sep=1.3, end_sep=0.30):
    """Walk together, wrap arms around the partner's back, hold, release and step back."""
    bodies = [Body(h) for h in heights]
    yaws = (0.0, np.pi)
    T = n_frames
    t = np.arange(T)
    close = smoothstep(t / (0.4 * T)) * (1 - smoothstep((t - 0.8 * T) / (0.18 * T)))
    sep = start_sep + (end_sep - start_sep) * close
    wrap = smoothstep((t - 0.25 * T) / (0.2 * T)) * (1 - smoothstep((t - 0.72 * T) / (0.15 * T)))
    kp = np.zeros((T, 2, len(DEFAULT_VERTICES), 3))
    for k, b in enumerate(bodies):
        sgn_x = -1.0 if k == 0 else 1.0
        xs = sgn_x * sep / 2
        feet = {side: _gait_feet(b, xs, yaws[k], side) for side in ("left", "right")}
        other = bodies[1 - k]
        for i in range(T):
            px = xs[i]
            ox = -px
            fwd = np.array([np.cos(yaws[k]), np.sin(yaws[k]), 0.0])
            left = np.array([-np.sin(yaws[k]), np.cos(yaws[k]), 0.0])
            # the shorter partner reaches under, the taller one over the shoulders
            z = (0.70 if k == 0 else 0.80) * min(b.h, other.h) + 0.05 * (b.h - other.h)
            hands, hints = {}, {}
            for side, sgn in (("left", 1.0), ("right", -1.0)):
                rest = b.rest_hand((px, 0.0), yaws[k], side)
                behind = np.array([ox, 0.0, z]) + fwd * 0.14 * other.h + sgn * left * 0.06 * other.h
                hands[side] = rest + wrap[i] * (behind - rest)
                hints[side] = sgn * left + 0.3 * fwd * (1 - wrap[i]) - 0.5 * np.array([0, 0, 1.0]) * (1 - wrap[i])
            foot = {side: feet[side][i] for side in feet}
            kp[i, k] = b.pose((px, 0.0), yaws[k], hands, foot, hints)
    return DualMotionClip(frame_dt, kp, tuple(DEFAULT_VERTICES))


GENERATORS = {"handshake": handshake, "hug": hug}


def fixture_path(name):
    if name not in GENERATORS:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(GENERATORS)}")
    return resources.files("dualretarget") / "data" / "fixtures" / f"{name}.kp"


def load_fixture(name):
    """Bundled clip by name."""
    return parse_keypoints(fixture_path(name).read_text())


def write_fixtures(directory):
    from pathlib import Path
    out = []
    for name, gen in GENERATORS.items():
        p = Path(directory) / f"{name}.kp"
        p.write_text(format_keypoints(gen()))
        out.append(p)
    return out
