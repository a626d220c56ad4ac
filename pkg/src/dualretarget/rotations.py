"""Small SO(3) toolkit used by the kinematics and the solver.

Quaternions are stored as (w, x, y, z).
"""

import numpy as np

_EPS = 1e-12


def skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def axis_angle(axis, angle):
    """Rodrigues rotation about a unit axis."""
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def exp_so3(w):
    theta = np.linalg.norm(w)
    if theta < 1e-8:
        k = skew(w)
        return np.eye(3) + k + 0.5 * (k @ k)
    return axis_angle(w / theta, theta)


def log_so3(R):
    """Rotation vector of R, robust near 0 and pi."""
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    # atan2 keeps full precision where arccos would lose half the digits
    theta = np.arctan2(0.5 * np.linalg.norm(vee), 0.5 * (np.trace(R) - 1.0))
    if theta < 1e-6:
        return 0.5 * vee
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = (R + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(B)))
        axis = B[:, i] / np.sqrt(max(B[i, i], _EPS))
        if np.dot(axis, vee) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * vee


def right_jacobian_inv(phi):
    """Inverse right Jacobian of SO(3): d log(R exp(v)) / dv at v = 0."""
    theta = np.linalg.norm(phi)
    k = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * k + (k @ k) / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * k + coef * (k @ k)


def quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Shepperd's method; returns w >= 0."""
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def euler_matrix(order, angles_deg):
    """Intrinsic rotation for BVH channel order, e.g. order='ZXY'."""
    R = np.eye(3)
    for ax, ang in zip(order, angles_deg):
        axis = {"X": (1.0, 0.0, 0.0), "Y": (0.0, 1.0, 0.0), "Z": (0.0, 0.0, 1.0)}[ax]
        R = R @ axis_angle(np.array(axis), np.deg2rad(ang))
    return R


def frame_from_vectors(aim, hint, fallback=(0.0, 0.0, 1.0)):
    """Orthonormal frame whose x axis is `aim` and whose xy-plane contains `hint`.

    Falls back to `fallback` (then world x) when hint is parallel to aim.
    """
    x = np.asarray(aim, dtype=float)
    n = np.linalg.norm(x)
    if n < _EPS:
        raise ValueError("zero-length aim vector")
    x = x / n
    for h in (hint, fallback, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)):
        h = np.asarray(h, dtype=float)
        z = np.cross(x, h)
        nz = np.linalg.norm(z)
        if nz > 1e-6 * max(np.linalg.norm(h), _EPS):
            z = z / nz
            break
    y = np.cross(z, x)
    return np.column_stack([x, y, z])
